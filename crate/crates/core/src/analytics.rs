//! Closed-form bifurcation values of the homogeneous steady state.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{HerdError, Result};
use crate::grid::{Grid, StateField};
use crate::model::{source_prime, ModelParams};

/// `(nπ/l)²`, the `n`-th nonzero eigenvalue of the negative Neumann
/// Laplacian on `[0, l]`.
pub fn neumann_eigenvalue(n: usize, length: f64) -> Result<f64> {
    if n == 0 {
        return Err(HerdError::InvalidParameter(
            "mode index must be >= 1 (the constant mode is excluded by the mass constraint)".into(),
        ));
    }
    if !(length > 0.0) {
        return Err(HerdError::InvalidParameter("length must be > 0".into()));
    }
    Ok((n as f64 * PI / length).powi(2))
}

/// Values at the homogeneous state that every formula below needs.
struct Linearization {
    g: f64,
    fp: f64,
    delta_d: f64,
}

fn linearization(params: &ModelParams) -> Result<Linearization> {
    params.validate()?;
    let g = params.g_eval(params.u1_mean)?;
    Ok(Linearization {
        g,
        fp: source_prime(params.u1_mean),
        delta_d: params.delta_d(),
    })
}

/// Bifurcation value of mode `n`.
///
/// With `include_rho` the mass-regularized linearization is used, otherwise
/// ρ is ignored. Both are evaluated as `δ_d + bracket/μ` so that nothing
/// cancels near `δ_d`.
pub fn delta_b(n: usize, params: &ModelParams, include_rho: bool) -> Result<f64> {
    let mu = neumann_eigenvalue(n, params.length)?;
    let lin = linearization(params)?;
    let rho = if include_rho { params.rho } else { 0.0 };
    let (k, a) = (params.kappa, params.alpha);
    let bracket = lin.fp - (k * rho + a) / lin.g - a * rho / (lin.g * mu);
    Ok(lin.delta_d + bracket / mu)
}

/// `√(2/l)·cos(nπx/l)·(g(u₁*), 1)` sampled at the cell centres.
pub fn null_eigenfunction(n: usize, params: &ModelParams, grid: &Grid) -> Result<StateField> {
    let _ = neumann_eigenvalue(n, grid.length())?;
    let g = params.g_eval(params.u1_mean)?;
    let (amp, k) = ((2.0 / grid.length()).sqrt(), n as f64 * PI / grid.length());
    Ok(StateField::from_fn(*grid, |x| {
        let e = amp * (k * x).cos();
        (g * e, e)
    }))
}

/// Shape of the null eigenfunction of mode `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenfunction {
    /// `g(u₁*)`.
    pub amplitude_u1: f64,
    pub amplitude_u2: f64,
    /// `nπ/l`.
    pub wavenumber: f64,
    /// `√(2/l)`, so that `∫e² = 1`.
    pub normalization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BifurcationPrediction {
    pub mode_index: usize,
    pub mu_n: f64,
    pub delta_b: f64,
    pub delta_b_rho0: f64,
    pub eigenfunction: Eigenfunction,
}

pub fn predict(n: usize, params: &ModelParams) -> Result<BifurcationPrediction> {
    let mu_n = neumann_eigenvalue(n, params.length)?;
    Ok(BifurcationPrediction {
        mode_index: n,
        mu_n,
        delta_b: delta_b(n, params, true)?,
        delta_b_rho0: delta_b(n, params, false)?,
        eigenfunction: Eigenfunction {
            amplitude_u1: params.g_eval(params.u1_mean)?,
            amplitude_u2: 1.0,
            wavenumber: mu_n.sqrt(),
            normalization: (2.0 / params.length).sqrt(),
        },
    })
}

pub fn predict_modes(modes: std::ops::RangeInclusive<usize>, params: &ModelParams) -> Result<Vec<BifurcationPrediction>> {
    modes.map(|n| predict(n, params)).collect()
}

/// Outcome of the transversality test for mode `n` at the current δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    /// Determinant of the projected linearization
    /// `[μ+ρ, −gμ; f′−δμ, −(κμ+α)]`, scaled by its entry magnitudes.
    pub relative_determinant: f64,
    /// Distance of the projected δ-derivative `(0, μg)` from the column
    /// space, relative to its length.
    pub inconsistency: f64,
    /// True iff the projected matrix is singular and the δ-derivative lies
    /// outside its range.
    pub nondegenerate: bool,
    pub warning: Option<String>,
}

const SINGULAR_TOL: f64 = 1e-10;
const NEAR_SINGULAR: f64 = 1e-4;

/// Projects the linearization and its δ-derivative onto mode `n` and checks
/// that the resulting 2×2 system is singular but inconsistent.
pub fn crossing_check(n: usize, params: &ModelParams) -> Result<CrossingReport> {
    let mu = neumann_eigenvalue(n, params.length)?;
    let lin = linearization(params)?;
    let delta = params.delta;
    if (params.kappa + delta * lin.g).abs() <= 1e-12 * params.kappa {
        return Err(HerdError::InvalidParameter(format!(
            "delta = {delta} equals delta_d = {}: the crossing is degenerate there",
            lin.delta_d
        )));
    }
    let (k, a, rho) = (params.kappa, params.alpha, params.rho);
    let m = [[mu + rho, -lin.g * mu], [lin.fp - delta * mu, -(k * mu + a)]];
    let rhs = [0.0, mu * lin.g];

    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = (m[0][0] * m[1][1]).abs().max((m[0][1] * m[1][0]).abs());
    let relative_determinant = det / scale;

    // column space of a rank-one matrix: its larger column
    let c0 = [m[0][0], m[1][0]];
    let c1 = [m[0][1], m[1][1]];
    let col = if c0[0].hypot(c0[1]) >= c1[0].hypot(c1[1]) { c0 } else { c1 };
    let cn = col[0].hypot(col[1]);
    let proj = (col[0] * rhs[0] + col[1] * rhs[1]) / (cn * cn);
    let perp = [rhs[0] - proj * col[0], rhs[1] - proj * col[1]];
    let inconsistency = perp[0].hypot(perp[1]) / rhs[0].hypot(rhs[1]);

    let singular = relative_determinant.abs() <= SINGULAR_TOL;
    let warning = (!singular && relative_determinant.abs() <= NEAR_SINGULAR).then(|| {
        format!(
            "projected determinant {relative_determinant:.3e} is small but above {SINGULAR_TOL:e}; delta is near but not at delta_b"
        )
    });
    Ok(CrossingReport {
        relative_determinant,
        inconsistency,
        nondegenerate: singular && inconsistency > 1e-8,
        warning,
    })
}

/// Position of the bifurcation values relative to δ_d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRegime {
    /// Every δ_b^n lies below δ_d.
    Large,
    /// Every δ_b^n lies above δ_d.
    Small,
    /// Mixed, or some mode sits exactly on the threshold.
    Boundary,
}

/// Number of modes inspected by [`alpha_regime`] before the `n → ∞` limit.
pub const REGIME_MODES: usize = 50;

/// Compares α with `μ(f′g − κρ)/(ρ + μ)` for `n = 1..=50` and for the limit
/// `n → ∞`.
pub fn alpha_regime(params: &ModelParams) -> Result<AlphaRegime> {
    let lin = linearization(params)?;
    let (k, a, rho) = (params.kappa, params.alpha, params.rho);
    let num = lin.fp * lin.g - k * rho;
    let mut thresholds = (1..=REGIME_MODES)
        .map(|n| neumann_eigenvalue(n, params.length).map(|mu| mu * num / (rho + mu)))
        .collect::<Result<Vec<_>>>()?;
    thresholds.push(num);
    let tol = 1e-12 * a.max(num.abs());
    let above = thresholds.iter().all(|&t| a > t + tol);
    let below = thresholds.iter().all(|&t| a < t - tol);
    Ok(match (above, below) {
        (true, _) => AlphaRegime::Large,
        (_, true) => AlphaRegime::Small,
        _ => AlphaRegime::Boundary,
    })
}
