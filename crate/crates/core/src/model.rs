//! Closed-form model quantities: nonlinearities, entropy densities, the
//! entropy-variable diffusion matrix and the constants of the decay estimate.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{HerdError, Result};
use crate::quad::adaptive_simpson;

/// Tolerance for accepting arguments slightly outside `[0, 1]`.
const UNIT_INTERVAL_SLACK: f64 = 1e-12;

/// Mobility `g` in the density equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `g(s) = s(1 − s)`.
    Logistic,
    /// `g(s) = s^a (1 − s)^b` with `a, b ≥ 1`.
    PowerAB { a: f64, b: f64 },
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Nonlinearity::Logistic
    }
}

impl Nonlinearity {
    /// Unchecked evaluation. Arguments outside `[0, 1]` are clamped for
    /// `PowerAB`; the logistic polynomial is evaluated as is.
    pub fn g(&self, s: f64) -> f64 {
        match *self {
            Nonlinearity::Logistic => s * (1.0 - s),
            Nonlinearity::PowerAB { a, b } => {
                let s = s.clamp(0.0, 1.0);
                s.powf(a) * (1.0 - s).powf(b)
            }
        }
    }

    pub fn dg(&self, s: f64) -> f64 {
        match *self {
            Nonlinearity::Logistic => 1.0 - 2.0 * s,
            Nonlinearity::PowerAB { a, b } => {
                let s = s.clamp(0.0, 1.0);
                let t = 1.0 - s;
                a * pow_safe(s, a - 1.0) * t.powf(b) - b * s.powf(a) * pow_safe(t, b - 1.0)
            }
        }
    }

    pub fn d2g(&self, s: f64) -> f64 {
        match *self {
            Nonlinearity::Logistic => -2.0,
            Nonlinearity::PowerAB { a, b } => {
                let s = s.clamp(0.0, 1.0);
                let t = 1.0 - s;
                a * (a - 1.0) * pow_safe(s, a - 2.0) * t.powf(b)
                    - 2.0 * a * b * pow_safe(s, a - 1.0) * pow_safe(t, b - 1.0)
                    + b * (b - 1.0) * s.powf(a) * pow_safe(t, b - 2.0)
            }
        }
    }

    pub fn d3g(&self, s: f64) -> f64 {
        match *self {
            Nonlinearity::Logistic => 0.0,
            Nonlinearity::PowerAB { a, b } => {
                let s = s.clamp(0.0, 1.0);
                let t = 1.0 - s;
                a * (a - 1.0) * (a - 2.0) * pow_safe(s, a - 3.0) * t.powf(b)
                    - 3.0 * a * (a - 1.0) * b * pow_safe(s, a - 2.0) * pow_safe(t, b - 1.0)
                    + 3.0 * a * b * (b - 1.0) * pow_safe(s, a - 1.0) * pow_safe(t, b - 2.0)
                    - b * (b - 1.0) * (b - 2.0) * s.powf(a) * pow_safe(t, b - 3.0)
            }
        }
    }

    /// `γ = max_{[0,1]} g`.
    pub fn gamma(&self) -> f64 {
        match *self {
            Nonlinearity::Logistic => 0.25,
            Nonlinearity::PowerAB { .. } => {
                let s = golden_section_max(|s| self.g(s), 0.0, 1.0, 1e-12);
                self.g(s)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Nonlinearity::PowerAB { a, b } = *self {
            if !(a >= 1.0 && b >= 1.0) {
                return Err(HerdError::InvalidParameter(format!(
                    "power nonlinearity needs a >= 1 and b >= 1 (got a = {a}, b = {b})"
                )));
            }
        }
        Ok(())
    }
}

/// `s^p` with `0^0 = 1`; at `s = 0` negative powers only appear with a
/// vanishing prefactor, so they are returned as zero.
fn pow_safe(s: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if s == 0.0 {
        0.0
    } else {
        s.powf(p)
    }
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Source term `f(s) = s(1 − s)`.
pub fn source(s: f64) -> f64 {
    s * (1.0 - s)
}

pub fn source_prime(s: f64) -> f64 {
    1.0 - 2.0 * s
}

/// `f_M = max_{[0,1]} f`.
pub const SOURCE_MAX: f64 = 0.25;

/// All scalar parameters of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Cross-diffusion coefficient δ.
    pub delta: f64,
    /// Diffusion κ of the influence function.
    pub kappa: f64,
    /// Relaxation rate α.
    pub alpha: f64,
    /// Domain length l, Ω = [0, l].
    pub length: f64,
    /// Mass regularization ρ of the steady problem.
    pub rho: f64,
    /// Mean density ū₁ = u₁*.
    pub u1_mean: f64,
    /// Convex Sobolev constant c_S.
    pub c_sobolev: f64,
    /// Lipschitz constant c_L of f.
    pub c_lipschitz: f64,
    pub nonlinearity: Nonlinearity,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            delta: 1.0,
            kappa: 1.0,
            alpha: 1.0,
            length: 1.0,
            rho: 0.0,
            u1_mean: 0.5,
            c_sobolev: 1.0,
            c_lipschitz: 1.0,
            nonlinearity: Nonlinearity::Logistic,
        }
    }
}

/// Outcome of evaluating the decay rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayRate {
    Guaranteed(f64),
    /// `δ₀ε₁(δ) ≤ (γ/α)c_L²c_S`; `margin` is the (non-positive) difference.
    NotGuaranteed { margin: f64 },
}

impl DecayRate {
    pub fn rate(&self) -> Option<f64> {
        match *self {
            DecayRate::Guaranteed(chi) => Some(chi),
            DecayRate::NotGuaranteed { .. } => None,
        }
    }
}

/// Critical values of δ and the sub-intervals of a δ grid on which the
/// exponential decay estimate applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalDeltas {
    pub delta_star: f64,
    pub delta_d: f64,
    pub decay_intervals: Vec<(f64, f64)>,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(HerdError::InvalidParameter(what.to_string()))
            }
        };
        check(self.delta.is_finite(), "delta must be finite")?;
        check(self.kappa > 0.0 && self.kappa.is_finite(), "kappa > 0")?;
        check(self.alpha > 0.0 && self.alpha.is_finite(), "alpha > 0")?;
        check(self.length > 0.0 && self.length.is_finite(), "length > 0")?;
        check(self.rho >= 0.0 && self.rho.is_finite(), "rho >= 0")?;
        check(self.u1_mean > 0.0 && self.u1_mean < 1.0, "0 < u1_mean < 1")?;
        check(self.c_sobolev > 0.0, "c_sobolev > 0")?;
        check(self.c_lipschitz > 0.0, "c_lipschitz > 0")?;
        self.nonlinearity.validate()
    }

    pub fn gamma(&self) -> f64 {
        self.nonlinearity.gamma()
    }

    /// Checked evaluation of `g` on `[0, 1]`.
    pub fn g_eval(&self, s: f64) -> Result<f64> {
        check_unit(s)?;
        Ok(self.nonlinearity.g(s.clamp(0.0, 1.0)).max(0.0))
    }

    pub fn g_prime_eval(&self, s: f64) -> Result<f64> {
        check_unit(s)?;
        Ok(self.nonlinearity.dg(s.clamp(0.0, 1.0)))
    }

    pub fn g_second_eval(&self, s: f64) -> Result<f64> {
        check_unit(s)?;
        Ok(self.nonlinearity.d2g(s.clamp(0.0, 1.0)))
    }

    /// Entropy density `h₀`, the second antiderivative of `1/g` centred at
    /// `m = 1/2`. For the logistic mobility the closed form
    /// `s log s + (1 − s) log(1 − s)` is used (it differs by a constant).
    pub fn h0_eval(&self, s: f64) -> Result<f64> {
        check_open_unit(s)?;
        Ok(match self.nonlinearity {
            Nonlinearity::Logistic => s * s.ln() + (1.0 - s) * (1.0 - s).ln(),
            nl @ Nonlinearity::PowerAB { .. } => {
                // ∫_m^s ∫_m^σ 1/g = ∫_m^s (s − t)/g(t) dt
                let integrand = |t: f64| (s - t) / nl.g(t);
                adaptive_simpson(&integrand, 0.5, s, 1e-12)
            }
        })
    }

    pub fn h0_prime(&self, s: f64) -> Result<f64> {
        check_open_unit(s)?;
        Ok(self.h0_prime_unchecked(s))
    }

    fn h0_prime_unchecked(&self, s: f64) -> f64 {
        match self.nonlinearity {
            Nonlinearity::Logistic => (s / (1.0 - s)).ln(),
            nl @ Nonlinearity::PowerAB { .. } => {
                adaptive_simpson(&|t: f64| 1.0 / nl.g(t), 0.5, s, 1e-12)
            }
        }
    }

    /// `(h₀′)⁻¹ : ℝ → (0, 1)`.
    pub fn h0_prime_inverse(&self, w: f64) -> f64 {
        match self.nonlinearity {
            Nonlinearity::Logistic => logistic_sigmoid(w),
            Nonlinearity::PowerAB { .. } => {
                // h₀′ is increasing; bisection with a Newton acceleration.
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                let mut s = 0.5;
                for _ in 0..200 {
                    let r = self.h0_prime_unchecked(s) - w;
                    if r.abs() < 1e-14 * w.abs().max(1.0) {
                        break;
                    }
                    if r > 0.0 {
                        hi = s;
                    } else {
                        lo = s;
                    }
                    let newton = s - r * self.nonlinearity.g(s);
                    s = if newton > lo && newton < hi {
                        newton
                    } else {
                        0.5 * (lo + hi)
                    };
                    if hi - lo < 1e-15 {
                        break;
                    }
                }
                s
            }
        }
    }

    /// δ* = −κ/γ.
    pub fn delta_star(&self) -> f64 {
        -self.kappa / self.gamma()
    }

    /// δ_d = −κ/g(u₁*).
    pub fn delta_d(&self) -> f64 {
        -self.kappa / self.nonlinearity.g(self.u1_mean)
    }

    fn check_admissible(&self, delta: f64) -> Result<()> {
        let delta_star = self.delta_star();
        if delta == 0.0 || delta <= delta_star || !delta.is_finite() {
            return Err(HerdError::InadmissibleDelta { delta, delta_star });
        }
        Ok(())
    }

    pub fn is_admissible(&self) -> bool {
        self.check_admissible(self.delta).is_ok()
    }

    /// δ₀ = δ for δ > 0 and κ/γ for −κ/γ < δ < 0.
    pub fn delta0(&self) -> Result<f64> {
        delta0_at(self, self.delta)
    }

    /// Coercivity constant of the diffusion matrix in entropy variables.
    pub fn epsilon1(&self) -> Result<f64> {
        epsilon1_at(self, self.delta)
    }

    /// Diffusion matrix in entropy variables,
    /// `B = [[g, −δ₀g], [δg, δ₀κ]]`.
    pub fn b_matrix(&self, u1: f64) -> Result<Matrix2<f64>> {
        let d0 = self.delta0()?;
        let g = self.g_eval(u1)?;
        Ok(Matrix2::new(g, -d0 * g, self.delta * g, d0 * self.kappa))
    }

    /// Decay rate χ(δ) of the relative entropy, if the decay condition holds.
    pub fn chi_rate(&self) -> Result<DecayRate> {
        let d0 = self.delta0()?;
        let eps1 = self.epsilon1()?;
        let gamma = self.gamma();
        let threshold = gamma / self.alpha * self.c_lipschitz.powi(2) * self.c_sobolev;
        let lhs = d0 * eps1;
        if lhs <= threshold {
            return Ok(DecayRate::NotGuaranteed {
                margin: lhs - threshold,
            });
        }
        let chi = (eps1 / self.c_sobolev - gamma * self.c_lipschitz.powi(2) / (self.alpha * d0))
            .min(self.alpha);
        Ok(DecayRate::Guaranteed(chi))
    }

    /// Whether `δ₀ε₁(δ) > (γ/α)c_L²c_S` holds at `delta`; inadmissible δ
    /// count as "does not hold".
    pub fn decay_condition_holds(&self, delta: f64) -> bool {
        match (delta0_at(self, delta), epsilon1_at(self, delta)) {
            (Ok(d0), Ok(e1)) => {
                d0 * e1 > self.gamma() / self.alpha * self.c_lipschitz.powi(2) * self.c_sobolev
            }
            _ => false,
        }
    }

    /// δ*, δ_d and the maximal sub-intervals of `delta_grid` on which the
    /// decay condition holds. Interval ends between grid nodes are refined by
    /// bisection to 1e−10. Inadmissible nodes (δ = 0, δ ≤ δ*) split runs.
    pub fn decay_region(&self, delta_grid: &[f64]) -> Result<CriticalDeltas> {
        self.validate()?;
        if delta_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(HerdError::InvalidParameter(
                "delta grid must be strictly increasing".into(),
            ));
        }
        let delta_star = self.delta_star();
        let barriers = [delta_star, 0.0];
        let holds = |d: f64| self.decay_condition_holds(d);
        let mut intervals = Vec::new();
        let mut start: Option<f64> = None;

        for (i, &x) in delta_grid.iter().enumerate() {
            let ok = holds(x);
            if i == 0 {
                if ok {
                    start = Some(x);
                }
                continue;
            }
            let prev = delta_grid[i - 1];
            let prev_ok = holds(prev);
            if let Some(&b) = barriers.iter().find(|&&b| prev < b && b < x) {
                if prev_ok {
                    let end = self.refine_flip(prev, b, &barriers);
                    intervals.push((start.take().unwrap_or(prev), end));
                }
                if ok {
                    start = Some(self.refine_flip(b, x, &barriers));
                }
                continue;
            }
            match (prev_ok, ok) {
                (true, false) => {
                    let end = self.refine_flip(prev, x, &barriers);
                    intervals.push((start.take().unwrap_or(prev), end));
                }
                (false, true) => start = Some(self.refine_flip(prev, x, &barriers)),
                _ => {}
            }
        }
        if let (Some(s), Some(&last)) = (start, delta_grid.last()) {
            intervals.push((s, last));
        }
        Ok(CriticalDeltas {
            delta_star,
            delta_d: self.delta_d(),
            decay_intervals: intervals,
        })
    }

    fn refine_flip(&self, a: f64, b: f64, barriers: &[f64]) -> f64 {
        let ca = self.decay_condition_holds(a);
        let (mut lo, mut hi) = (a, b);
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if self.decay_condition_holds(mid) == ca {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = 0.5 * (lo + hi);
        barriers
            .iter()
            .copied()
            .find(|&bar| (x - bar).abs() <= 1e-10)
            .unwrap_or(x)
    }

    /// Homogeneous steady state `(ū₁, f(ū₁)/α)`.
    pub fn steady_state(&self) -> Result<(f64, f64)> {
        self.validate()?;
        Ok((self.u1_mean, source(self.u1_mean) / self.alpha))
    }
}

fn delta0_at(p: &ModelParams, delta: f64) -> Result<f64> {
    p.check_admissible(delta)?;
    Ok(if delta > 0.0 {
        delta
    } else {
        p.kappa / p.gamma()
    })
}

fn epsilon1_at(p: &ModelParams, delta: f64) -> Result<f64> {
    p.check_admissible(delta)?;
    let kappa = p.kappa;
    if delta > 0.0 {
        return Ok((delta * kappa).min(1.0));
    }
    let gamma = p.gamma();
    let shifted = kappa - gamma * delta;
    let eps0 = 0.5 * (1.0 - 0.25 * (shifted / kappa).powi(2));
    let second = (kappa * kappa - shifted * shifted / (4.0 * (1.0 - eps0))) / gamma;
    Ok(eps0.min(second))
}

fn check_unit(s: f64) -> Result<()> {
    if s.is_finite() && s >= -UNIT_INTERVAL_SLACK && s <= 1.0 + UNIT_INTERVAL_SLACK {
        Ok(())
    } else {
        Err(HerdError::Domain {
            value: s,
            domain: "[0, 1]",
        })
    }
}

fn check_open_unit(s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(HerdError::Domain {
            value: s,
            domain: "(0, 1)",
        })
    }
}

pub(crate) fn logistic_sigmoid(w: f64) -> f64 {
    if w >= 0.0 {
        1.0 / (1.0 + (-w).exp())
    } else {
        let e = w.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn logistic(delta: f64) -> ModelParams {
        ModelParams {
            delta,
            ..Default::default()
        }
    }

    #[test]
    fn g_examples() {
        let p = ModelParams::default();
        assert_eq!(p.g_eval(0.5).unwrap(), 0.25);
        assert_eq!(p.g_eval(0.0).unwrap(), 0.0);
        assert_eq!(p.g_eval(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(p.g_eval(0.594).unwrap(), 0.241164, epsilon = 1e-12);
        assert!(p.g_eval(1.0 + 1e-9).is_err());
        assert!(p.g_eval(-1e-9).is_err());
        assert!(p.g_eval(1.0 + 1e-13).is_ok());
    }

    #[test]
    fn power_gamma_matches_argmax() {
        let nl = Nonlinearity::PowerAB { a: 2.0, b: 3.0 };
        let s = 2.0 / 5.0;
        assert_abs_diff_eq!(nl.gamma(), nl.g(s), epsilon = 1e-14);
        assert_abs_diff_eq!(Nonlinearity::Logistic.gamma(), 0.25);
    }

    #[test]
    fn power_derivatives_match_finite_differences() {
        let nl = Nonlinearity::PowerAB { a: 2.0, b: 1.5 };
        let h = 1e-6;
        for &s in &[0.2, 0.45, 0.8] {
            assert_abs_diff_eq!(nl.dg(s), (nl.g(s + h) - nl.g(s - h)) / (2.0 * h), epsilon = 1e-7);
            assert_abs_diff_eq!(nl.d2g(s), (nl.dg(s + h) - nl.dg(s - h)) / (2.0 * h), epsilon = 1e-6);
            assert_abs_diff_eq!(nl.d3g(s), (nl.d2g(s + h) - nl.d2g(s - h)) / (2.0 * h), epsilon = 1e-5);
        }
    }

    #[test]
    fn h0_examples() {
        let p = ModelParams::default();
        assert_abs_diff_eq!(p.h0_eval(0.5).unwrap(), 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(p.h0_eval(0.9).unwrap(), -0.325083, epsilon = 1e-6);
        assert_abs_diff_eq!(p.h0_prime_inverse(0.0), 0.5);
        assert!(p.h0_eval(0.0).is_err());
        assert!(p.h0_prime(1.0).is_err());
    }

    #[test]
    fn power_ab_with_unit_exponents_matches_logistic() {
        let lp = ModelParams::default();
        let pp = ModelParams {
            nonlinearity: Nonlinearity::PowerAB { a: 1.0, b: 1.0 },
            ..Default::default()
        };
        for &s in &[0.1, 0.3, 0.7, 0.95] {
            assert_abs_diff_eq!(pp.h0_prime(s).unwrap(), lp.h0_prime(s).unwrap(), epsilon = 1e-9);
            // closed form is offset by h₀(1/2) = −log 2
            assert_abs_diff_eq!(
                pp.h0_eval(s).unwrap(),
                lp.h0_eval(s).unwrap() + 2f64.ln(),
                epsilon = 1e-9
            );
        }
        assert_abs_diff_eq!(pp.h0_prime_inverse(1.3), lp.h0_prime_inverse(1.3), epsilon = 1e-10);
    }

    #[test]
    fn delta0_examples() {
        assert_eq!(logistic(0.25).delta0().unwrap(), 0.25);
        assert_abs_diff_eq!(logistic(-2.0).delta0().unwrap(), 4.0);
        assert!(logistic(0.0).delta0().is_err());
        assert!(logistic(-4.0).delta0().is_err());
        assert!(logistic(-5.0).delta0().is_err());
    }

    #[test]
    fn epsilon1_examples() {
        assert_abs_diff_eq!(logistic(0.25).epsilon1().unwrap(), 0.25);
        assert_abs_diff_eq!(logistic(-2.0).epsilon1().unwrap(), 0.21875, epsilon = 1e-15);
        assert_abs_diff_eq!(logistic(5.0).epsilon1().unwrap(), 1.0);
    }

    #[test]
    fn epsilon1_vanishes_at_the_ends() {
        let mut last = f64::INFINITY;
        for k in 1..12 {
            let d = 10f64.powi(-k);
            let e = logistic(d).epsilon1().unwrap();
            assert!(e > 0.0 && e < last);
            last = e;
        }
        assert!(last < 1e-10);
        let mut last = f64::INFINITY;
        for k in 1..8 {
            let d = -4.0 + 10f64.powi(-k);
            let e = logistic(d).epsilon1().unwrap();
            assert!(e > 0.0 && e < last);
            last = e;
        }
        assert!(last < 1e-7);
    }

    #[test]
    fn b_matrix_examples() {
        let b = logistic(0.25).b_matrix(0.5).unwrap();
        assert_abs_diff_eq!(b, Matrix2::new(0.25, -0.0625, 0.0625, 0.25), epsilon = 1e-15);
        let b0 = logistic(0.25).b_matrix(0.0).unwrap();
        assert_eq!(b0[(0, 0)], 0.0);
        assert_eq!(b0[(0, 1)], 0.0);
        assert_eq!(b0[(1, 0)], 0.0);
        assert_eq!(b0[(1, 1)], 0.25);
    }

    #[test]
    fn chi_rate_examples() {
        let p = ModelParams {
            delta: 1.0,
            alpha: 10.0,
            ..Default::default()
        };
        assert_abs_diff_eq!(p.chi_rate().unwrap().rate().unwrap(), 0.975, epsilon = 1e-15);
        let weak = ModelParams {
            delta: 0.01,
            alpha: 0.1,
            ..Default::default()
        };
        assert!(matches!(
            weak.chi_rate().unwrap(),
            DecayRate::NotGuaranteed { margin } if margin <= 0.0
        ));
        let strong = ModelParams {
            delta: 1.0,
            alpha: 1e9,
            ..Default::default()
        };
        let chi = strong.chi_rate().unwrap().rate().unwrap();
        assert_abs_diff_eq!(chi, strong.epsilon1().unwrap() / strong.c_sobolev, epsilon = 1e-8);
    }

    #[test]
    fn critical_delta_examples() {
        let p = ModelParams::default();
        assert_eq!(p.delta_star(), -4.0);
        let q = ModelParams {
            u1_mean: 0.594,
            ..Default::default()
        };
        assert_abs_diff_eq!(q.delta_d(), -4.1466, epsilon = 1e-4);
        // g(u₁*) ≤ γ puts δ_d at or below δ*, with equality only at the maximiser
        assert!(q.delta_d() < q.delta_star());
        assert_eq!(p.delta_d(), p.delta_star());
    }

    #[test]
    fn steady_state_examples() {
        let p = ModelParams {
            u1_mean: 0.594,
            alpha: 0.2,
            ..Default::default()
        };
        let (a, b) = p.steady_state().unwrap();
        assert_eq!(a, 0.594);
        assert_abs_diff_eq!(b, 1.20582, epsilon = 1e-12);
        let q = ModelParams {
            u1_mean: 0.5,
            alpha: 1.0,
            ..Default::default()
        };
        assert_eq!(q.steady_state().unwrap(), (0.5, 0.25));
        let r = ModelParams {
            u1_mean: 0.211325,
            alpha: 0.001,
            ..Default::default()
        };
        assert_abs_diff_eq!(r.steady_state().unwrap().1, 166.6665, epsilon = 1e-3);
    }

    #[test]
    fn decay_region_for_huge_alpha_fills_admissible_set() {
        let p = ModelParams {
            alpha: 1e6,
            ..Default::default()
        };
        let grid: Vec<f64> = (0..=200).map(|i| -3.99 + i as f64 * 0.04).collect();
        let region = p.decay_region(&grid).unwrap();
        assert_eq!(region.delta_star, -4.0);
        assert_eq!(region.decay_intervals.len(), 2);
        let (a, b) = region.decay_intervals[0];
        let (c, d) = region.decay_intervals[1];
        // below the first node the bracket is unresolved
        assert!(a < -3.98 && b == 0.0);
        assert!(c > 0.0 && c < 1e-3 && d == *grid.last().unwrap());
    }

    #[test]
    fn decay_region_can_be_empty() {
        let p = ModelParams {
            alpha: 1e-4,
            ..Default::default()
        };
        let grid: Vec<f64> = (0..50).map(|i| -3.9 + i as f64 * 0.1).collect();
        assert!(p.decay_region(&grid).unwrap().decay_intervals.is_empty());
    }

    #[test]
    fn decay_region_endpoints_bisected() {
        let p = ModelParams {
            alpha: 1.0,
            ..Default::default()
        };
        let grid: Vec<f64> = (0..=60).map(|i| 0.05 + i as f64 * 0.05).collect();
        let region = p.decay_region(&grid).unwrap();
        let (lo, _) = region.decay_intervals[0];
        // δ·min(1, δ) = 1/4 ⇒ δ = 1/2
        assert_abs_diff_eq!(lo, 0.5, epsilon = 1e-9);
    }
}
