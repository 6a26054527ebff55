//! Uniform cell-centred grid on `[0, l]`, discrete fields and diagnostics.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{HerdError, Result};
use crate::model::ModelParams;

/// Uniform grid of `n_cells` cells; unknowns live at the cell centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n_cells: usize,
    length: f64,
}

impl Grid {
    pub const MIN_CELLS: usize = 8;

    pub fn new(n_cells: usize, length: f64) -> Result<Self> {
        if n_cells < Self::MIN_CELLS {
            return Err(HerdError::InvalidParameter(format!(
                "grid needs at least {} cells (got {n_cells})",
                Self::MIN_CELLS
            )));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(HerdError::InvalidParameter("grid length must be > 0".into()));
        }
        Ok(Grid { n_cells, length })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n_cells as f64
    }

    /// Centre of cell `i`.
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.x(i)).collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.n_cells {
            Ok(())
        } else {
            Err(HerdError::LengthMismatch {
                expected: self.n_cells,
                got: len,
            })
        }
    }

    /// Midpoint rule `h Σ vᵢ`.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values.len())?;
        Ok(self.spacing() * values.iter().sum::<f64>())
    }

    /// Three-point Laplacian with reflecting ghost cells (zero flux at both
    /// ends).
    pub fn neumann_laplacian_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        let n = self.n_cells;
        let inv_h2 = 1.0 / self.spacing().powi(2);
        Ok((0..n)
            .map(|i| {
                let left = if i == 0 { 0.0 } else { v[i - 1] - v[i] };
                let right = if i + 1 == n { 0.0 } else { v[i + 1] - v[i] };
                (left + right) * inv_h2
            })
            .collect())
    }
}

/// Discrete pair `(u₁, u₂)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub grid: Grid,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl StateField {
    pub fn new(grid: Grid, u1: Vec<f64>, u2: Vec<f64>) -> Result<Self> {
        grid.check_len(u1.len())?;
        grid.check_len(u2.len())?;
        Ok(StateField { grid, u1, u2 })
    }

    pub fn constant(grid: Grid, u1: f64, u2: f64) -> Self {
        let n = grid.n_cells();
        StateField {
            grid,
            u1: vec![u1; n],
            u2: vec![u2; n],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> (f64, f64)) -> Self {
        let (u1, u2) = grid.nodes().into_iter().map(f).unzip();
        StateField { grid, u1, u2 }
    }

    /// Homogeneous steady state of `params`.
    pub fn steady(grid: Grid, params: &ModelParams) -> Result<Self> {
        let (a, b) = params.steady_state()?;
        Ok(Self::constant(grid, a, b))
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn mass_u1(&self) -> f64 {
        self.grid.spacing() * self.u1.iter().sum::<f64>()
    }

    pub fn mean_u1(&self) -> f64 {
        self.u1.iter().sum::<f64>() / self.n_cells() as f64
    }

    pub fn l2_u1(&self) -> f64 {
        (self.grid.spacing() * self.u1.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn l2_u2(&self) -> f64 {
        (self.grid.spacing() * self.u2.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Interleaved `[u1_0, u2_0, u1_1, u2_1, …]`.
    pub fn to_interleaved(&self) -> Vec<f64> {
        self.u1
            .iter()
            .zip(&self.u2)
            .flat_map(|(&a, &b)| [a, b])
            .collect()
    }

    pub fn from_interleaved(grid: Grid, v: &[f64]) -> Result<Self> {
        grid.check_len(v.len() / 2)?;
        let u1 = v.iter().step_by(2).copied().collect();
        let u2 = v.iter().skip(1).step_by(2).copied().collect();
        Ok(StateField { grid, u1, u2 })
    }

    /// Maximum of `|u − v|` over both components.
    pub fn max_abs_diff(&self, other: &StateField) -> f64 {
        self.u1
            .iter()
            .zip(&other.u1)
            .chain(self.u2.iter().zip(&other.u2))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `x,u1,u2` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,u1,u2")?;
        for i in 0..self.n_cells() {
            writeln!(
                w,
                "{},{},{}",
                fmt_f64(self.grid.x(i)),
                fmt_f64(self.u1[i]),
                fmt_f64(self.u2[i])
            )?;
        }
        Ok(())
    }

    /// Reads the format produced by [`StateField::write_csv`]; the grid
    /// length is reconstructed from the cell centres.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |msg: String| HerdError::InvalidParameter(format!("state csv: {msg}"));
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .map_err(|e| bad(e.to_string()))?;
        if header.trim() != "x,u1,u2" {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let (mut xs, mut u1, mut u2) = (Vec::new(), Vec::new(), Vec::new());
        for (k, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("row {}: {e}", k + 2)))?;
            if cols.len() != 3 {
                return Err(bad(format!("row {} has {} columns", k + 2, cols.len())));
            }
            xs.push(cols[0]);
            u1.push(cols[1]);
            u2.push(cols[2]);
        }
        let n = xs.len();
        if n < Grid::MIN_CELLS {
            return Err(bad(format!("only {n} rows")));
        }
        let length = 2.0 * xs[0] * n as f64;
        StateField::new(Grid::new(n, length)?, u1, u2)
    }
}

/// Shortest round-trip formatting padded to 17 significant digits in
/// scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Per-step entropy diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub time: f64,
    /// `∫ h₀(u₁) + u₂²/(2δ₀)`.
    pub entropy: f64,
    /// Bregman distance of the entropy from the homogeneous steady state.
    pub relative_entropy: f64,
    /// Discrete entropy production
    /// `∫ |u₁′|²/g + (δ/δ₀ − 1)u₁′u₂′ + (κ/δ₀)|u₂′|²`.
    pub dissipation: f64,
    pub mass_u1: f64,
    pub l2_u2: f64,
}

/// Evaluates the entropy functionals of `state` against the homogeneous
/// steady state of `params`.
pub fn entropy_report(state: &StateField, params: &ModelParams, time: f64) -> Result<EntropyReport> {
    let d0 = params.delta0()?;
    if let Some((index, &value)) = state
        .u1
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > 0.0 && v < 1.0))
    {
        return Err(HerdError::EntropyUndefined { index, value });
    }
    let (u1s, u2s) = params.steady_state()?;
    let h0s = params.h0_eval(u1s)?;
    let h0ps = params.h0_prime(u1s)?;
    let h = state.grid.spacing();

    let mut entropy = 0.0;
    let mut relative = 0.0;
    for (&a, &b) in state.u1.iter().zip(&state.u2) {
        let h0 = params.h0_eval(a)?;
        entropy += h0 + b * b / (2.0 * d0);
        relative += (h0 - h0s - h0ps * (a - u1s)) + (b - u2s).powi(2) / (2.0 * d0);
    }

    let mut dissipation = 0.0;
    for i in 0..state.n_cells() - 1 {
        let d1 = (state.u1[i + 1] - state.u1[i]) / h;
        let d2 = (state.u2[i + 1] - state.u2[i]) / h;
        let g_face = params.nonlinearity.g(0.5 * (state.u1[i] + state.u1[i + 1]));
        dissipation += d1 * d1 / g_face
            + (params.delta / d0 - 1.0) * d1 * d2
            + params.kappa / d0 * d2 * d2;
    }

    Ok(EntropyReport {
        time,
        entropy: h * entropy,
        relative_entropy: (h * relative).max(0.0),
        dissipation: h * dissipation,
        mass_u1: state.mass_u1(),
        l2_u2: state.l2_u2(),
    })
}
