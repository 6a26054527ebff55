//! Implicit Euler time stepping, either in the entropy variables
//! `w = (h₀′(u₁), u₂/δ₀)` with H¹ regularization or directly in `u`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{HerdError, Result};
use crate::grid::{entropy_report, fmt_f64, EntropyReport, StateField};
use crate::linalg::{norm_inf, BandMatrix};
use crate::model::{source, source_prime, ModelParams};
use crate::scheme::{add_divergence, chain_rule_mobility, primal_face, FaceFlux, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    EntropyVariables,
    Primal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeStepperConfig {
    pub tau: f64,
    pub eps_reg: f64,
    pub mode: SolverMode,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub t_final: f64,
}

impl Default for TimeStepperConfig {
    fn default() -> Self {
        TimeStepperConfig {
            tau: 1e-2,
            eps_reg: 1e-8,
            mode: SolverMode::EntropyVariables,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            t_final: 10.0,
        }
    }
}

impl TimeStepperConfig {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        params.validate()?;
        let bad = |m: &str| Err(HerdError::InvalidParameter(m.into()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be > 0");
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad("t_final must be > 0");
        }
        if !(self.newton_tol > 0.0) {
            return bad("newton_tol must be > 0");
        }
        if self.newton_max_iter == 0 {
            return bad("newton_max_iter must be >= 1");
        }
        if self.mode == SolverMode::EntropyVariables {
            if !(self.eps_reg > 0.0) {
                return bad("eps_reg must be > 0 in entropy-variable mode");
            }
            params.delta0()?;
        } else if self.eps_reg < 0.0 {
            return bad("eps_reg must be >= 0");
        }
        Ok(())
    }
}

/// Maximum number of step-size halvings inside [`evolve`].
pub const MAX_HALVINGS: usize = 10;
const MAX_BACKTRACK: usize = 8;
const PRIMAL_BOUND_SLACK: f64 = 1e-8;

/// Nonlinear system for one implicit Euler step.
trait StepSystem {
    fn layout(&self) -> Layout;
    fn eval(&self, x: &[f64], jac: Option<&mut BandMatrix>) -> Result<Vec<f64>>;
}

fn newton<S: StepSystem>(sys: &S, mut x: Vec<f64>, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let lay = sys.layout();
    let dim = lay.n * lay.stride;
    let mut res = sys.eval(&x, None)?;
    let mut rn = norm_inf(&res);
    for it in 0..max_iter {
        if rn <= tol {
            return Ok(x);
        }
        let mut jac = BandMatrix::zeros(dim, 3, 3);
        sys.eval(&x, Some(&mut jac))?;
        let lu = jac.factor().map_err(|_| HerdError::NewtonDiverged {
            iterations: it,
            residual: rn,
            hint: "singular Jacobian; try a smaller tau",
        })?;
        let dx = lu.solve(&res);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_BACKTRACK {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a - lambda * d).collect();
            if let Ok(r) = sys.eval(&trial, None) {
                let n = norm_inf(&r);
                if n.is_finite() && (n < rn || n <= tol) {
                    x = trial;
                    res = r;
                    rn = n;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(HerdError::NewtonDiverged {
                iterations: it + 1,
                residual: rn,
                hint: "line search failed; try a smaller tau",
            });
        }
    }
    if rn <= tol {
        Ok(x)
    } else {
        Err(HerdError::NewtonDiverged {
            iterations: max_iter,
            residual: rn,
            hint: "try a smaller tau",
        })
    }
}

struct PrimalStep<'a> {
    params: &'a ModelParams,
    prev: &'a StateField,
    tau: f64,
}

impl StepSystem for PrimalStep<'_> {
    fn layout(&self) -> Layout {
        Layout {
            n: self.prev.n_cells(),
            stride: 2,
        }
    }

    fn eval(&self, x: &[f64], mut jac: Option<&mut BandMatrix>) -> Result<Vec<f64>> {
        let lay = self.layout();
        let p = self.params;
        let h = self.prev.grid.spacing();
        let u1: Vec<f64> = x.iter().step_by(2).copied().collect();
        let u2: Vec<f64> = x.iter().skip(1).step_by(2).copied().collect();
        let mut res = vec![0.0; x.len()];
        let inv_tau = 1.0 / self.tau;
        for i in 0..lay.n {
            let (r1, r2) = (lay.at(i, 0), lay.at(i, 1));
            res[r1] = (u1[i] - self.prev.u1[i]) * inv_tau;
            res[r2] = (u2[i] - self.prev.u2[i]) * inv_tau - source(u1[i]) + p.alpha * u2[i];
            if let Some(m) = jac.as_deref_mut() {
                m.add(r1, r1, inv_tau);
                m.add(r2, r2, inv_tau + p.alpha);
                m.add(r2, r1, -source_prime(u1[i]));
            }
        }
        let nl = &p.nonlinearity;
        add_divergence(
            lay,
            h,
            -1.0,
            |i| primal_face(nl, p.delta, p.kappa, h, &u1, &u2, i),
            &mut res,
            jac,
        );
        Ok(res)
    }
}

struct EntropyStep<'a> {
    params: &'a ModelParams,
    prev: &'a StateField,
    tau: f64,
    eps: f64,
    delta0: f64,
}

impl EntropyStep<'_> {
    fn to_u(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let u1 = x.iter().step_by(2).map(|&w| self.params.h0_prime_inverse(w)).collect();
        let u2 = x.iter().skip(1).step_by(2).map(|&w| self.delta0 * w).collect();
        (u1, u2)
    }
}

impl StepSystem for EntropyStep<'_> {
    fn layout(&self) -> Layout {
        Layout {
            n: self.prev.n_cells(),
            stride: 2,
        }
    }

    fn eval(&self, x: &[f64], mut jac: Option<&mut BandMatrix>) -> Result<Vec<f64>> {
        let lay = self.layout();
        let p = self.params;
        let nl = &p.nonlinearity;
        let (d0, eps) = (self.delta0, self.eps);
        let h = self.prev.grid.spacing();
        let (u1, u2) = self.to_u(x);
        let w1: Vec<f64> = x.iter().step_by(2).copied().collect();
        let w2: Vec<f64> = x.iter().skip(1).step_by(2).copied().collect();
        let mut res = vec![0.0; x.len()];
        let inv_tau = 1.0 / self.tau;
        let inv_h2 = 1.0 / (h * h);
        for i in 0..lay.n {
            let (r1, r2) = (lay.at(i, 0), lay.at(i, 1));
            let s1 = nl.g(u1[i]);
            res[r1] = (u1[i] - self.prev.u1[i]) * inv_tau + eps * w1[i];
            res[r2] = (u2[i] - self.prev.u2[i]) * inv_tau - source(u1[i]) + p.alpha * u2[i] + eps * w2[i];
            if let Some(m) = jac.as_deref_mut() {
                m.add(r1, r1, s1 * inv_tau + eps);
                m.add(r2, r2, d0 * (inv_tau + p.alpha) + eps);
                m.add(r2, r1, -source_prime(u1[i]) * s1);
            }
            // ε(−Δ_h w) with reflecting ghost cells
            for (nb, ok) in [(i.wrapping_sub(1), i > 0), (i + 1, i + 1 < lay.n)] {
                if !ok {
                    continue;
                }
                res[r1] -= eps * (w1[nb] - w1[i]) * inv_h2;
                res[r2] -= eps * (w2[nb] - w2[i]) * inv_h2;
                if let Some(m) = jac.as_deref_mut() {
                    m.add(r1, r1, eps * inv_h2);
                    m.add(r1, lay.at(nb, 0), -eps * inv_h2);
                    m.add(r2, r2, eps * inv_h2);
                    m.add(r2, lay.at(nb, 1), -eps * inv_h2);
                }
            }
        }
        add_divergence(
            lay,
            h,
            -1.0,
            |i| {
                let (gm, ga, gb) = chain_rule_mobility(nl, w1[i], w1[i + 1], u1[i], u1[i + 1]);
                let (sa, sb) = (nl.g(u1[i]), nl.g(u1[i + 1]));
                let d1 = u1[i + 1] - u1[i];
                let dw2 = w2[i + 1] - w2[i];
                FaceFlux {
                    j: (d1 - gm * d0 * dw2) / h,
                    k: (p.delta * d1 + p.kappa * d0 * dw2) / h,
                    dj: [
                        (-sa - ga * d0 * dw2) / h,
                        gm * d0 / h,
                        (sb - gb * d0 * dw2) / h,
                        -gm * d0 / h,
                    ],
                    dk: [
                        -p.delta * sa / h,
                        -p.kappa * d0 / h,
                        p.delta * sb / h,
                        p.kappa * d0 / h,
                    ],
                }
            },
            &mut res,
            jac,
        );
        Ok(res)
    }
}

fn check_interior(state: &StateField) -> Result<()> {
    match state.u1.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
        Some(index) => Err(HerdError::EntropyUndefined {
            index,
            value: state.u1[index],
        }),
        None => Ok(()),
    }
}

fn step_entropy_tau(prev: &StateField, params: &ModelParams, cfg: &TimeStepperConfig, tau: f64) -> Result<StateField> {
    check_interior(prev)?;
    let delta0 = params.delta0()?;
    let sys = EntropyStep {
        params,
        prev,
        tau,
        eps: cfg.eps_reg,
        delta0,
    };
    let w0: Vec<f64> = prev
        .u1
        .iter()
        .zip(&prev.u2)
        .map(|(&a, &b)| Ok([params.h0_prime(a)?, b / delta0]))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let w = newton(&sys, w0, cfg.newton_tol, cfg.newton_max_iter)?;
    let (u1, u2) = sys.to_u(&w);
    let out = StateField::new(prev.grid, u1, u2)?;
    // the sigmoid saturates in floating point for |w₁| ≳ 37
    check_interior(&out).map_err(|_| HerdError::NewtonDiverged {
        iterations: cfg.newton_max_iter,
        residual: f64::INFINITY,
        hint: "u1 saturated at 0 or 1 in floating point; try a smaller tau",
    })?;
    Ok(out)
}

fn step_primal_tau(prev: &StateField, params: &ModelParams, cfg: &TimeStepperConfig, tau: f64) -> Result<StateField> {
    let sys = PrimalStep { params, prev, tau };
    let x = newton(&sys, prev.to_interleaved(), cfg.newton_tol, cfg.newton_max_iter)?;
    StateField::from_interleaved(prev.grid, &x)
}

/// One step of the regularized entropy-variable scheme.
pub fn step_entropy_variables(prev: &StateField, params: &ModelParams, config: &TimeStepperConfig) -> Result<StateField> {
    config.validate(params)?;
    step_entropy_tau(prev, params, config, config.tau)
}

/// One implicit Euler step in the primal variables.
pub fn step_primal(prev: &StateField, params: &ModelParams, config: &TimeStepperConfig) -> Result<StateField> {
    config.validate(params)?;
    step_primal_tau(prev, params, config, config.tau)
}

fn step_mode(prev: &StateField, params: &ModelParams, cfg: &TimeStepperConfig, tau: f64) -> Result<StateField> {
    match cfg.mode {
        SolverMode::EntropyVariables => step_entropy_tau(prev, params, cfg, tau),
        SolverMode::Primal => step_primal_tau(prev, params, cfg, tau),
    }
}

/// Residual of one step at a given new state, for Jacobian checks.
pub fn step_residual(
    next_unknowns: &[f64],
    prev: &StateField,
    params: &ModelParams,
    config: &TimeStepperConfig,
) -> Result<Vec<f64>> {
    step_residual_and_jacobian(next_unknowns, prev, params, config).map(|(r, _)| r)
}

/// Residual and analytic Jacobian of one step. The unknowns are the
/// interleaved entropy variables in entropy mode and `u` in primal mode.
pub fn step_residual_and_jacobian(
    next_unknowns: &[f64],
    prev: &StateField,
    params: &ModelParams,
    config: &TimeStepperConfig,
) -> Result<(Vec<f64>, BandMatrix)> {
    config.validate(params)?;
    let mut jac = BandMatrix::zeros(next_unknowns.len(), 3, 3);
    let res = match config.mode {
        SolverMode::EntropyVariables => EntropyStep {
            params,
            prev,
            tau: config.tau,
            eps: config.eps_reg,
            delta0: params.delta0()?,
        }
        .eval(next_unknowns, Some(&mut jac))?,
        SolverMode::Primal => PrimalStep {
            params,
            prev,
            tau: config.tau,
        }
        .eval(next_unknowns, Some(&mut jac))?,
    };
    Ok((res, jac))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub time: f64,
    pub state: StateField,
    pub report: EntropyReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    /// Scheme-quality warnings (primal iterates leaving `[0, 1]`).
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }

    pub fn relative_entropies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.report.relative_entropy).collect()
    }

    pub fn last(&self) -> Option<&TrajectorySample> {
        self.samples.last()
    }

    /// `time,entropy,relative_entropy,dissipation,mass_u1,l2_u2`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,entropy,relative_entropy,dissipation,mass_u1,l2_u2")?;
        for s in &self.samples {
            let r = &s.report;
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_f64(s.time),
                fmt_f64(r.entropy),
                fmt_f64(r.relative_entropy),
                fmt_f64(r.dissipation),
                fmt_f64(r.mass_u1),
                fmt_f64(r.l2_u2)
            )?;
        }
        Ok(())
    }
}

/// Step failure inside [`evolve`]; carries everything computed so far.
#[derive(Debug, Clone, thiserror::Error)]
#[error("evolution stopped at t = {time}: {source}")]
pub struct EvolveFailure {
    pub time: f64,
    pub partial: Trajectory,
    pub source: HerdError,
}

fn report_or_nan(state: &StateField, params: &ModelParams, time: f64) -> Result<EntropyReport> {
    match entropy_report(state, params, time) {
        Err(HerdError::EntropyUndefined { .. }) => Ok(EntropyReport {
            time,
            entropy: f64::NAN,
            relative_entropy: f64::NAN,
            dissipation: f64::NAN,
            mass_u1: state.mass_u1(),
            l2_u2: state.l2_u2(),
        }),
        other => other,
    }
}

/// Advances `tau` by recursive halving when a step fails.
fn advance(prev: &StateField, params: &ModelParams, cfg: &TimeStepperConfig, tau: f64, depth: usize) -> Result<StateField> {
    match step_mode(prev, params, cfg, tau) {
        Ok(s) => Ok(s),
        Err(e) if depth >= MAX_HALVINGS => Err(e),
        Err(_) => {
            let mid = advance(prev, params, cfg, 0.5 * tau, depth + 1)?;
            advance(&mid, params, cfg, 0.5 * tau, depth + 1)
        }
    }
}

/// Runs to `t_final` and records a sample at every multiple of `tau`.
pub fn evolve(
    initial: &StateField,
    params: &ModelParams,
    config: &TimeStepperConfig,
) -> std::result::Result<Trajectory, EvolveFailure> {
    let fail = |time, partial, source| EvolveFailure { time, partial, source };
    if let Err(e) = config.validate(params) {
        return Err(fail(0.0, Trajectory::default(), e));
    }
    let mut traj = Trajectory::default();
    let n_steps = (config.t_final / config.tau - 1e-9).ceil().max(1.0) as usize;
    let mut state = initial.clone();
    match report_or_nan(&state, params, 0.0) {
        Ok(report) => traj.samples.push(TrajectorySample {
            time: 0.0,
            state: state.clone(),
            report,
        }),
        Err(e) => return Err(fail(0.0, traj, e)),
    }
    for k in 1..=n_steps {
        let time = k as f64 * config.tau;
        state = match advance(&state, params, config, config.tau, 0) {
            Ok(s) => s,
            Err(e) => return Err(fail(time - config.tau, traj, e)),
        };
        if config.mode == SolverMode::Primal {
            if let Some(i) = state
                .u1
                .iter()
                .position(|&v| !(-PRIMAL_BOUND_SLACK..=1.0 + PRIMAL_BOUND_SLACK).contains(&v))
            {
                traj.warnings.push(format!(
                    "t = {time}: u1[{i}] = {} left [0, 1]",
                    state.u1[i]
                ));
            }
        }
        match report_or_nan(&state, params, time) {
            Ok(report) => traj.samples.push(TrajectorySample {
                time,
                state: state.clone(),
                report,
            }),
            Err(e) => return Err(fail(time, traj, e)),
        }
    }
    Ok(traj)
}

/// Floor below which relative-entropy samples are ignored by
/// [`fit_decay_rate`].
pub const DECAY_FLOOR: f64 = 1e-14;
pub const MIN_FIT_SAMPLES: usize = 10;

/// Least-squares exponential rate of the relative entropy (positive means
/// decaying), fitted over the second half of the samples that are above
/// [`DECAY_FLOOR`].
pub fn fit_decay_rate(trajectory: &Trajectory) -> Result<f64> {
    fit_decay_rate_series(&trajectory.times(), &trajectory.relative_entropies())
}

/// [`fit_decay_rate`] on raw `(t, H)` samples.
pub fn fit_decay_rate_series(times: &[f64], values: &[f64]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > DECAY_FLOOR && v.is_finite())
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.is_empty() {
        return Err(HerdError::NoDecayMeasurable { floor: DECAY_FLOOR });
    }
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(HerdError::NotEnoughSamples {
            needed: MIN_FIT_SAMPLES,
            have: pts.len(),
        });
    }
    let tail = &pts[pts.len() / 2..];
    let n = tail.len() as f64;
    let (mt, my) = tail
        .iter()
        .fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let (sty, stt) = tail.iter().fold((0.0, 0.0), |(a, b), (t, y)| {
        (a + (t - mt) * (y - my), b + (t - mt) * (t - mt))
    });
    Ok(-sty / stt)
}
