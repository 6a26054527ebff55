//! Finite-volume discretization of the steady problem
//!
//! ```text
//! 0 = (u₁′ − g(u₁)u₂′)′ − ρ(u₁ − ū₁)
//! 0 = δu₁″ + κu₂″ − αu₂ + f(u₁)
//! ```
//!
//! with zero boundary fluxes. The solver works on an extended vector with
//! four unknowns per cell, `(u₁, u₂, M, ν)`. `M` is the running mass
//! defect `Σ_{j≤i}(u₁ⱼ − ū₁)` and `ν` a cell-wise copy of a mass
//! multiplier. This pins the mass even at ρ = 0 and keeps the Jacobian
//! banded. At every solution `ν = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{HerdError, Result};
use crate::grid::{Grid, StateField};
use crate::linalg::BandMatrix;
use crate::model::{source, source_prime, ModelParams};
use crate::scheme::{add_divergence, primal_face, FaceFlux, Layout};

/// Parameter varied by continuation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveParameter {
    Delta,
    Rho,
    Kappa,
    Alpha,
    Length,
}

impl ActiveParameter {
    pub fn get(self, p: &ModelParams) -> f64 {
        match self {
            ActiveParameter::Delta => p.delta,
            ActiveParameter::Rho => p.rho,
            ActiveParameter::Kappa => p.kappa,
            ActiveParameter::Alpha => p.alpha,
            ActiveParameter::Length => p.length,
        }
    }

    pub fn set(self, p: &mut ModelParams, v: f64) {
        match self {
            ActiveParameter::Delta => p.delta = v,
            ActiveParameter::Rho => p.rho = v,
            ActiveParameter::Kappa => p.kappa = v,
            ActiveParameter::Alpha => p.alpha = v,
            ActiveParameter::Length => p.length = v,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActiveParameter::Delta => "delta",
            ActiveParameter::Rho => "rho",
            ActiveParameter::Kappa => "kappa",
            ActiveParameter::Alpha => "alpha",
            ActiveParameter::Length => "length",
        }
    }
}

pub(crate) const STRIDE: usize = 4;
pub(crate) const BAND: usize = 5;

/// Discrete steady problem on `n_cells` cells with one active parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct BvpSystem {
    pub n_cells: usize,
    pub params: ModelParams,
    pub active: ActiveParameter,
}

impl BvpSystem {
    pub fn new(n_cells: usize, params: ModelParams, active: ActiveParameter) -> Result<Self> {
        params.validate()?;
        Grid::new(n_cells, params.length)?;
        Ok(BvpSystem {
            n_cells,
            params,
            active,
        })
    }

    pub fn parameter(&self) -> f64 {
        self.active.get(&self.params)
    }

    pub fn params_at(&self, p: f64) -> ModelParams {
        let mut q = self.params;
        self.active.set(&mut q, p);
        q
    }

    pub fn grid_at(&self, p: f64) -> Result<Grid> {
        Grid::new(self.n_cells, self.params_at(p).length)
    }

    /// Length of the extended unknown vector.
    pub fn dim(&self) -> usize {
        STRIDE * self.n_cells
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout {
            n: self.n_cells,
            stride: STRIDE,
        }
    }

    /// Extended vector of `state` with the running mass defect filled in and
    /// ν = 0.
    pub fn extend(&self, state: &StateField) -> Result<Vec<f64>> {
        if state.n_cells() != self.n_cells {
            return Err(HerdError::LengthMismatch {
                expected: self.n_cells,
                got: state.n_cells(),
            });
        }
        let ub = self.params.u1_mean;
        let mut x = vec![0.0; self.dim()];
        let mut m = 0.0;
        for i in 0..self.n_cells {
            m += state.u1[i] - ub;
            x[STRIDE * i] = state.u1[i];
            x[STRIDE * i + 1] = state.u2[i];
            x[STRIDE * i + 2] = m;
        }
        Ok(x)
    }

    pub fn state_of(&self, x: &[f64], p: f64) -> Result<StateField> {
        let u1 = x.iter().step_by(STRIDE).copied().collect();
        let u2 = x.iter().skip(1).step_by(STRIDE).copied().collect();
        StateField::new(self.grid_at(p)?, u1, u2)
    }

    /// Extended residual at `(x, p)`, optionally with the banded Jacobian
    /// w.r.t. `x` and the derivative w.r.t. the active parameter.
    pub fn eval_extended(
        &self,
        x: &[f64],
        p: f64,
        mut jac: Option<&mut BandMatrix>,
        dp: Option<&mut Vec<f64>>,
    ) -> Vec<f64> {
        let q = self.params_at(p);
        let lay = self.layout();
        let n = self.n_cells;
        let h = q.length / n as f64;
        let u1: Vec<f64> = x.iter().step_by(STRIDE).copied().collect();
        let u2: Vec<f64> = x.iter().skip(1).step_by(STRIDE).copied().collect();
        let nl = &q.nonlinearity;

        let mut div = vec![0.0; x.len()];
        add_divergence(
            lay,
            h,
            1.0,
            |i| primal_face(nl, q.delta, q.kappa, h, &u1, &u2, i),
            &mut div,
            jac.as_deref_mut(),
        );
        let mut res = div.clone();
        let ub = q.u1_mean;
        for i in 0..n {
            let (r1, r2, r3, r4) = (STRIDE * i, STRIDE * i + 1, STRIDE * i + 2, STRIDE * i + 3);
            res[r1] += -q.rho * (u1[i] - ub) - x[r4];
            res[r2] += -q.alpha * u2[i] + source(u1[i]);
            let m_prev = if i > 0 { x[r3 - STRIDE] } else { 0.0 };
            res[r3] = x[r3] - m_prev - (u1[i] - ub);
            res[r4] = if i + 1 < n { x[r4] - x[r4 + STRIDE] } else { x[r3] };
            if let Some(m) = jac.as_deref_mut() {
                m.add(r1, r1, -q.rho);
                m.add(r1, r4, -1.0);
                m.add(r2, r2, -q.alpha);
                m.add(r2, r1, source_prime(u1[i]));
                m.add(r3, r3, 1.0);
                if i > 0 {
                    m.add(r3, r3 - STRIDE, -1.0);
                }
                m.add(r3, r1, -1.0);
                if i + 1 < n {
                    m.add(r4, r4, 1.0);
                    m.add(r4, r4 + STRIDE, -1.0);
                } else {
                    m.add(r4, r3, 1.0);
                }
            }
        }

        if let Some(d) = dp {
            d.clear();
            d.resize(x.len(), 0.0);
            match self.active {
                ActiveParameter::Delta | ActiveParameter::Kappa => {
                    let comp = if self.active == ActiveParameter::Delta { &u1 } else { &u2 };
                    add_divergence(
                        lay,
                        h,
                        1.0,
                        |i| FaceFlux {
                            k: (comp[i + 1] - comp[i]) / h,
                            ..FaceFlux::default()
                        },
                        d,
                        None,
                    );
                }
                ActiveParameter::Rho => {
                    for i in 0..n {
                        d[STRIDE * i] = -(u1[i] - ub);
                    }
                }
                ActiveParameter::Alpha => {
                    for i in 0..n {
                        d[STRIDE * i + 1] = -u2[i];
                    }
                }
                ActiveParameter::Length => {
                    // flux terms scale like 1/h² = n²/l²
                    for (di, v) in d.iter_mut().zip(&div) {
                        *di = -2.0 * v / q.length;
                    }
                }
            }
        }
        res
    }

    pub(crate) fn jacobian(&self, x: &[f64], p: f64) -> (Vec<f64>, BandMatrix, Vec<f64>) {
        let mut jac = BandMatrix::zeros(self.dim(), BAND, BAND);
        let mut dp = Vec::new();
        let r = self.eval_extended(x, p, Some(&mut jac), Some(&mut dp));
        (r, jac, dp)
    }

    /// `κ + δg(u₁)` at every cell centre.
    pub fn dg_nodes(&self, state: &StateField, p: f64) -> Vec<f64> {
        let q = self.params_at(p);
        state
            .u1
            .iter()
            .map(|&u| q.kappa + q.delta * q.nonlinearity.g(u))
            .collect()
    }
}

/// Residual of the steady problem: the `n` rows of the u₁ equation
/// followed by the `n` rows of the u₂ equation (strong form, per unit
/// length).
pub fn bvp_residual(state: &StateField, params: &ModelParams) -> Result<Vec<f64>> {
    let n = state.n_cells();
    let mut q = *params;
    q.length = state.grid.length();
    let sys = BvpSystem::new(n, q, ActiveParameter::Delta)?;
    let x = sys.extend(state)?;
    let r = sys.eval_extended(&x, q.delta, None, None);
    let mut out: Vec<f64> = r.iter().step_by(STRIDE).copied().collect();
    out.extend(r.iter().skip(1).step_by(STRIDE));
    Ok(out)
}

/// `sqrt((1/l)∫(u₁² + u₂² + u₁′² + u₂′²))`, with derivatives taken as face
/// differences.
pub fn l2_norm_z(state: &StateField) -> f64 {
    let h = state.grid.spacing();
    let mut s: f64 = state
        .u1
        .iter()
        .zip(&state.u2)
        .map(|(a, b)| a * a + b * b)
        .sum::<f64>()
        * h;
    for i in 0..state.n_cells() - 1 {
        let d1 = state.u1[i + 1] - state.u1[i];
        let d2 = state.u2[i + 1] - state.u2[i];
        s += (d1 * d1 + d2 * d2) / h;
    }
    (s / state.grid.length()).sqrt()
}

/// Threshold below which `|u₁ − ū₁|` counts as a plateau.
pub const INTERFACE_PLATEAU: f64 = 1e-6;

/// Strict sign changes of `u₁ − ū₁`, skipping near-zero plateaus.
pub fn n_interfaces(state: &StateField, u1_mean: f64) -> usize {
    sign_changes(state.u1.iter().map(|u| u - u1_mean), INTERFACE_PLATEAU)
}

pub(crate) fn sign_changes(v: impl Iterator<Item = f64>, floor: f64) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for d in v {
        if d.abs() < floor {
            continue;
        }
        if last != 0.0 && d.signum() != last {
            count += 1;
        }
        last = d.signum();
    }
    count
}
