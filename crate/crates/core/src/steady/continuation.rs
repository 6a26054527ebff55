//! Pseudo-arclength continuation, branch-point location, branch switching
//! and the ρ-homotopy.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::system::{l2_norm_z, n_interfaces, sign_changes, BvpSystem, ActiveParameter, STRIDE};
use crate::error::{HerdError, Result};
use crate::grid::{fmt_f64, StateField};
use crate::linalg::{dot, norm_inf, smallest_singular, BandMatrix, BorderedSystem};
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    /// Initial arclength step in the weighted (state, parameter) norm.
    pub ds_initial: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_points: usize,
    /// Residual tolerance (∞-norm) for accepted points.
    pub tol: f64,
    pub max_corrector_iter: usize,
    /// Continuation stops when `|κ + δg(u₁)|` falls below this at a node.
    pub dg_floor: f64,
    /// Branch points are located to this accuracy in the parameter.
    pub param_tol: f64,
    /// +1 or −1: initial direction of the parameter when the start point
    /// carries no tangent.
    pub direction: f64,
    pub detect: bool,
    /// Detections whose null vector has fewer cells per half-wavelength
    /// than `2·min_cells_per_wavelength / 2` are discarded as grid modes.
    pub min_cells_per_wavelength: usize,
    pub sigma_iterations: usize,
    /// Branch-switch amplitude relative to the weighted state norm.
    pub switch_amplitude: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            ds_initial: 1e-2,
            ds_min: 1e-8,
            ds_max: 0.1,
            max_points: 5000,
            tol: 1e-9,
            max_corrector_iter: 10,
            dg_floor: 1e-6,
            param_tol: 1e-6,
            direction: 1.0,
            detect: true,
            min_cells_per_wavelength: 8,
            sigma_iterations: 60,
            switch_amplitude: 1e-2,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ds_initial > 0.0
            && self.ds_min > 0.0
            && self.ds_max >= self.ds_initial
            && self.ds_initial >= self.ds_min
            && self.tol > 0.0
            && self.dg_floor >= 0.0
            && self.param_tol > 0.0
            && self.direction.abs() == 1.0
            && self.max_corrector_iter > 0
            && self.max_points > 0
            && self.switch_amplitude > 0.0;
        if ok {
            Ok(())
        } else {
            Err(HerdError::InvalidParameter(
                "continuation step configuration: need 0 < ds_min <= ds_initial <= ds_max, tol > 0, direction = ±1".into(),
            ))
        }
    }
}

/// One converged solution on a branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub parameter_value: f64,
    pub state: StateField,
    pub l2_norm: f64,
    /// Unit tangent in the weighted norm, over the extended unknowns
    /// `(u₁, u₂, M, ν)` per cell followed by the parameter. Empty if
    /// unknown.
    pub tangent: Vec<f64>,
    pub smallest_singular_value: f64,
    pub second_singular_value: f64,
    pub n_interfaces: usize,
    pub is_bifurcation: bool,
    /// Sign of det of the extended Jacobian w.r.t. the state.
    pub det_sign: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Homogeneous,
    SwitchedAt { parameter_value: f64, mode_hint: usize },
    Homotopy { from_parameter: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RangeBoundary,
    DgDegeneracy,
    MaxPoints,
    CorrectorFailure,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::RangeBoundary => "range boundary",
            StopReason::DgDegeneracy => "D_g degeneracy",
            StopReason::MaxPoints => "max points",
            StopReason::CorrectorFailure => "corrector failure",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Bifurcation,
    Fold,
}

/// A located zero of det(G_u) along a branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub parameter_value: f64,
    pub kind: PointKind,
    pub point: BranchPoint,
    /// `(U₁, U₂)` part of the right singular vector, unit 2-norm.
    pub null_vector: StateField,
    /// Number of sign changes of `U₂`; equals `n` for `cos(nπx/l)`.
    pub mode_index: usize,
    /// `|ψᵀG_p|/‖G_p‖` with ψ the left singular vector (0 on a branch
    /// where `G_p` vanishes). Diagnostic only: the kind is decided by
    /// whether the tangent's parameter component changes sign.
    pub fold_indicator: f64,
    /// Index of the branch point preceding the detection.
    pub after_index: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionReport {
    pub detections: Vec<Detection>,
    /// `(parameter, reason)` of discarded sign changes.
    pub rejected: Vec<(f64, String)>,
    pub warnings: Vec<String>,
}

impl DetectionReport {
    pub fn bifurcations(&self) -> impl Iterator<Item = &Detection> {
        self.detections.iter().filter(|d| d.kind == PointKind::Bifurcation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub system: BvpSystem,
    pub points: Vec<BranchPoint>,
    pub provenance: Provenance,
    pub stop_reason: StopReason,
    pub range: (f64, f64),
    pub detections: DetectionReport,
}

impl Branch {
    pub fn parameters(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.parameter_value).collect()
    }

    pub fn last(&self) -> &BranchPoint {
        self.points.last().expect("branches are never empty")
    }

    /// Branch points with the located bifurcations merged in parameter
    /// order along the branch.
    pub fn points_with_detections(&self) -> Vec<BranchPoint> {
        let mut out = Vec::with_capacity(self.points.len() + self.detections.detections.len());
        let mut dets = self.detections.bifurcations().peekable();
        for (i, p) in self.points.iter().enumerate() {
            out.push(p.clone());
            while let Some(d) = dets.peek() {
                if d.after_index != i {
                    break;
                }
                out.push(d.point.clone());
                dets.next();
            }
        }
        out
    }

    /// `index,parameter,l2_norm,sigma_min,n_interfaces,is_bifurcation`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "index,parameter,l2_norm,sigma_min,n_interfaces,is_bifurcation")?;
        for (i, p) in self.points_with_detections().iter().enumerate() {
            writeln!(
                w,
                "{i},{},{},{},{},{}",
                fmt_f64(p.parameter_value),
                fmt_f64(p.l2_norm),
                fmt_f64(p.smallest_singular_value),
                p.n_interfaces,
                p.is_bifurcation
            )?;
        }
        Ok(())
    }

    /// Solution at a prescribed parameter value, corrected from the nearest
    /// stored point by Newton at fixed parameter.
    pub fn solution_at(&self, value: f64, cfg: &StepConfig) -> Result<StateField> {
        let best = self
            .points
            .windows(2)
            .enumerate()
            .filter(|(_, w)| {
                let (a, b) = (w[0].parameter_value, w[1].parameter_value);
                (a - value) * (b - value) <= 0.0
            })
            .map(|(i, _)| i)
            .next()
            .ok_or_else(|| HerdError::Continuation(format!("{value} is not bracketed by the branch")))?;
        let (a, b) = (&self.points[best], &self.points[best + 1]);
        let t = if b.parameter_value == a.parameter_value {
            0.0
        } else {
            (value - a.parameter_value) / (b.parameter_value - a.parameter_value)
        };
        let eng = Engine::new(&self.system, cfg)?;
        let xa = self.system.extend(&a.state)?;
        let xb = self.system.extend(&b.state)?;
        let guess: Vec<f64> = xa.iter().zip(&xb).map(|(u, v)| u + t * (v - u)).collect();
        let x = eng.newton_fixed(guess, value)?;
        self.system.state_of(&x, value)
    }
}

/// Weighted geometry and the corrector/predictor machinery for one system.
struct Engine<'a> {
    sys: &'a BvpSystem,
    cfg: &'a StepConfig,
    weights: Vec<f64>,
}

/// Internal converged point: extended state, parameter and tangent.
#[derive(Debug, Clone)]
struct Pt {
    x: Vec<f64>,
    p: f64,
    t: Vec<f64>,
    det_sign: f64,
    iters: usize,
}

impl<'a> Engine<'a> {
    fn new(sys: &'a BvpSystem, cfg: &'a StepConfig) -> Result<Self> {
        cfg.validate()?;
        let n = sys.n_cells;
        let (_, u2s) = sys.params.steady_state()?;
        let u2_scale = u2s.abs().max(1.0);
        let mut weights = vec![0.0; sys.dim() + 1];
        for i in 0..n {
            weights[STRIDE * i] = 1.0 / n as f64;
            weights[STRIDE * i + 1] = 1.0 / (n as f64 * u2_scale * u2_scale);
        }
        weights[sys.dim()] = 1.0;
        Ok(Engine { sys, cfg, weights })
    }

    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn wdot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| w * x * y).sum()
    }

    fn wnorm(&self, a: &[f64]) -> f64 {
        self.wdot(a, a).sqrt()
    }

    fn normalize(&self, v: &mut [f64]) {
        let n = self.wnorm(v);
        v.iter_mut().for_each(|x| *x /= n);
    }

    fn bordered(&self, jac: BandMatrix, dp: Vec<f64>, row: &[f64]) -> Result<BorderedSystem> {
        let n = self.dim();
        let c: Vec<f64> = row[..n].iter().zip(&self.weights).map(|(r, w)| r * w).collect();
        let d = DMatrix::from_element(1, 1, row[n] * self.weights[n]);
        BorderedSystem::new(jac, vec![dp], vec![c], d)
    }

    /// Tangent from a bordered system whose last row is `rowᵀW`, oriented
    /// along `row`.
    fn tangent_from(&self, bs: &BorderedSystem, row: &[f64]) -> Vec<f64> {
        let mut rhs = vec![0.0; self.dim() + 1];
        rhs[self.dim()] = 1.0;
        let mut t = bs.solve(&rhs);
        self.normalize(&mut t);
        if self.wdot(&t, row) < 0.0 {
            t.iter_mut().for_each(|v| *v = -*v);
        }
        t
    }

    fn check_range(&self, x: &[f64]) -> Result<()> {
        if x.iter().step_by(STRIDE).all(|u| (-0.5..=1.5).contains(u)) && x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(HerdError::NewtonDiverged {
                iterations: 0,
                residual: f64::INFINITY,
                hint: "u1 left [-0.5, 1.5]",
            })
        }
    }

    /// Moore-Penrose corrector from `(x, p)` with the bordering row updated
    /// to the current tangent each sweep.
    fn correct(&self, x0: Vec<f64>, p0: f64, t0: &[f64]) -> Result<Pt> {
        let n = self.dim();
        let mut x = x0;
        let mut p = p0;
        let mut t = t0.to_vec();
        for it in 0..=self.cfg.max_corrector_iter {
            self.check_range(&x)?;
            let (r, jac, dp) = self.sys.jacobian(&x, p);
            let rn = norm_inf(&r);
            if !rn.is_finite() {
                break;
            }
            let det_sign_jac = jac.factor().map(|lu| lu.det_sign()).unwrap_or(0.0);
            let bs = self.bordered(jac, dp, &t)?;
            let t_new = self.tangent_from(&bs, &t);
            if rn <= self.cfg.tol {
                return Ok(Pt {
                    x,
                    p,
                    t: t_new,
                    det_sign: det_sign_jac,
                    iters: it,
                });
            }
            if it == self.cfg.max_corrector_iter {
                break;
            }
            let mut rhs = r;
            rhs.push(0.0);
            let dx = bs.solve(&rhs);
            for (xi, d) in x.iter_mut().zip(&dx[..n]) {
                *xi -= d;
            }
            p -= dx[n];
            t = t_new;
        }
        Err(HerdError::NewtonDiverged {
            iterations: self.cfg.max_corrector_iter,
            residual: norm_inf(&self.sys.eval_extended(&x, p, None, None)),
            hint: "corrector failed; the step will be reduced",
        })
    }

    /// Corrector with a fixed bordering row: `rowᵀW((x, p) − anchor) = 0`.
    fn correct_fixed_row(&self, x0: Vec<f64>, p0: f64, anchor: &[f64], row: &[f64]) -> Result<Pt> {
        let n = self.dim();
        let mut x = x0;
        let mut p = p0;
        for it in 0..=self.cfg.max_corrector_iter {
            self.check_range(&x)?;
            let (r, jac, dp) = self.sys.jacobian(&x, p);
            let mut cur = x.clone();
            cur.push(p);
            let diff: Vec<f64> = cur.iter().zip(anchor).map(|(a, b)| a - b).collect();
            let arc = self.wdot(row, &diff);
            let det_sign_jac = jac.factor().map(|lu| lu.det_sign()).unwrap_or(0.0);
            let bs = self.bordered(jac, dp, row)?;
            if norm_inf(&r) <= self.cfg.tol && arc.abs() <= self.cfg.tol {
                let t = self.tangent_from(&bs, row);
                return Ok(Pt {
                    x,
                    p,
                    t,
                    det_sign: det_sign_jac,
                    iters: it,
                });
            }
            let mut rhs = r;
            rhs.push(arc);
            let dx = bs.solve(&rhs);
            for (xi, d) in x.iter_mut().zip(&dx[..n]) {
                *xi -= d;
            }
            p -= dx[n];
        }
        Err(HerdError::NewtonDiverged {
            iterations: self.cfg.max_corrector_iter,
            residual: norm_inf(&self.sys.eval_extended(&x, p, None, None)),
            hint: "corrector with fixed constraint failed",
        })
    }

    /// Newton at fixed parameter.
    fn newton_fixed(&self, mut x: Vec<f64>, p: f64) -> Result<Vec<f64>> {
        newton_extended(self.sys, &mut x, p, self.cfg.tol, 4 * self.cfg.max_corrector_iter)?;
        Ok(x)
    }

    fn step_from(&self, a: &Pt, dir: &[f64], ds: f64) -> Result<Pt> {
        let n = self.dim();
        let x: Vec<f64> = a.x.iter().zip(dir).map(|(v, d)| v + ds * d).collect();
        let p = a.p + ds * dir[n];
        self.correct(x, p, dir)
    }

    fn branch_point(&self, pt: &Pt, is_bifurcation: bool) -> Result<BranchPoint> {
        let state = self.sys.state_of(&pt.x, pt.p)?;
        let (_, jac, _) = self.sys.jacobian(&pt.x, pt.p);
        let (s1, s2) = match jac.factor() {
            Ok(lu) => {
                let s = smallest_singular(&jac, &lu, self.cfg.sigma_iterations);
                (s.sigma_min, s.sigma_second)
            }
            Err(_) => (0.0, f64::NAN),
        };
        Ok(BranchPoint {
            parameter_value: pt.p,
            l2_norm: l2_norm_z(&state),
            n_interfaces: n_interfaces(&state, self.sys.params.u1_mean),
            state,
            tangent: pt.t.clone(),
            smallest_singular_value: s1,
            second_singular_value: s2,
            is_bifurcation,
            det_sign: pt.det_sign,
        })
    }

    fn pt_of(&self, bp: &BranchPoint) -> Result<Pt> {
        let x = self.sys.extend(&bp.state)?;
        Ok(Pt {
            x,
            p: bp.parameter_value,
            t: bp.tangent.clone(),
            det_sign: bp.det_sign,
            iters: 0,
        })
    }

    fn dg_extremes(&self, pt: &Pt) -> Result<(f64, f64)> {
        let state = self.sys.state_of(&pt.x, pt.p)?;
        let d = self.sys.dg_nodes(&state, pt.p);
        Ok(d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))))
    }
}

/// Damped Newton on the extended system at fixed parameter.
fn newton_extended(sys: &BvpSystem, x: &mut Vec<f64>, p: f64, tol: f64, max_iter: usize) -> Result<usize> {
    let mut r = sys.eval_extended(x, p, None, None);
    let mut rn = norm_inf(&r);
    for it in 0..max_iter {
        if rn <= tol {
            return Ok(it);
        }
        if !x.iter().step_by(STRIDE).all(|u| (-0.5..=1.5).contains(u)) {
            return Err(HerdError::NewtonDiverged {
                iterations: it,
                residual: rn,
                hint: "u1 left [-0.5, 1.5]; the initial guess is too far from a solution",
            });
        }
        let mut jac = BandMatrix::zeros(sys.dim(), super::system::BAND, super::system::BAND);
        sys.eval_extended(x, p, Some(&mut jac), None);
        let lu = jac.factor()?;
        let dx = lu.solve(&r);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=8 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a - lambda * d).collect();
            let rt = sys.eval_extended(&trial, p, None, None);
            let nt = norm_inf(&rt);
            if nt.is_finite() && nt < rn {
                *x = trial;
                r = rt;
                rn = nt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(HerdError::NewtonDiverged {
                iterations: it + 1,
                residual: rn,
                hint: "line search failed",
            });
        }
    }
    if rn <= tol {
        Ok(max_iter)
    } else {
        Err(HerdError::NewtonDiverged {
            iterations: max_iter,
            residual: rn,
            hint: "increase max_iter or improve the initial guess",
        })
    }
}

/// Damped Newton for the steady problem at the parameters of `params`,
/// with the mass of `u₁` pinned to `ū₁·l`.
pub fn newton_solve(initial_guess: &StateField, params: &super::ModelParams, tol: f64, max_iter: usize) -> Result<StateField> {
    if !(tol > 0.0) {
        return Err(HerdError::InvalidParameter("tol must be > 0".into()));
    }
    let mut q = *params;
    q.length = initial_guess.grid.length();
    let sys = BvpSystem::new(initial_guess.n_cells(), q, ActiveParameter::Delta)?;
    let mut x = sys.extend(initial_guess)?;
    newton_extended(&sys, &mut x, q.delta, tol, max_iter)?;
    sys.state_of(&x, q.delta)
}

impl BranchPoint {
    /// Converged point at the system's current parameter, starting from
    /// `guess`; no tangent is attached.
    pub fn solve(system: &BvpSystem, guess: &StateField, cfg: &StepConfig) -> Result<BranchPoint> {
        let eng = Engine::new(system, cfg)?;
        let p = system.parameter();
        let x = eng.newton_fixed(system.extend(guess)?, p)?;
        let (_, jac, _) = system.jacobian(&x, p);
        let det_sign = jac.factor().map(|lu| lu.det_sign()).unwrap_or(0.0);
        eng.branch_point(
            &Pt {
                x,
                p,
                t: Vec::new(),
                det_sign,
                iters: 0,
            },
            false,
        )
    }

    /// The homogeneous steady state at the system's current parameter.
    pub fn homogeneous(system: &BvpSystem, cfg: &StepConfig) -> Result<BranchPoint> {
        let grid = system.grid_at(system.parameter())?;
        Self::solve(system, &StateField::steady(grid, &system.params)?, cfg)
    }
}

/// Pseudo-arclength continuation from `start` until the parameter leaves
/// `range`, the diffusion determinant degenerates, the corrector fails or
/// `max_points` is reached. Sign changes of det(G_u) are located afterwards
/// if `cfg.detect` is set.
pub fn continue_branch(start: &BranchPoint, system: &BvpSystem, range: (f64, f64), cfg: &StepConfig) -> Result<Branch> {
    continue_with_provenance(start, system, range, cfg, Provenance::Homogeneous)
}

fn continue_with_provenance(
    start: &BranchPoint,
    system: &BvpSystem,
    range: (f64, f64),
    cfg: &StepConfig,
    provenance: Provenance,
) -> Result<Branch> {
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    let sys = BvpSystem {
        params: system.params_at(start.parameter_value),
        ..system.clone()
    };
    let eng = Engine::new(&sys, cfg)?;
    let n = eng.dim();
    if !(lo..=hi).contains(&start.parameter_value) {
        return Err(HerdError::InvalidParameter(format!(
            "start parameter {} outside range [{lo}, {hi}]",
            start.parameter_value
        )));
    }
    let mut a = eng.pt_of(start)?;
    {
        let r = sys.eval_extended(&a.x, a.p, None, None);
        if norm_inf(&r) > cfg.tol * 10.0 {
            return Err(HerdError::Continuation(format!(
                "start point is not converged (residual {:.3e})",
                norm_inf(&r)
            )));
        }
    }
    // initial tangent: supplied, or along ±parameter
    if a.t.len() != n + 1 {
        let mut row = vec![0.0; n + 1];
        row[n] = cfg.direction;
        let (_, jac, dp) = sys.jacobian(&a.x, a.p);
        let bs = eng.bordered(jac, dp, &row)?;
        a.t = eng.tangent_from(&bs, &row);
    }
    let first = eng.branch_point(&a, false)?;
    let mut pts = vec![a.clone()];
    let mut points = vec![first];
    let mut ds = cfg.ds_initial;
    let mut stop = StopReason::MaxPoints;

    while points.len() < cfg.max_points {
        let dir = if pts.len() >= 2 {
            let prev = &pts[pts.len() - 2];
            let mut s: Vec<f64> = a.x.iter().zip(&prev.x).map(|(u, v)| u - v).collect();
            s.push(a.p - prev.p);
            let nrm = eng.wnorm(&s);
            if nrm > 0.0 {
                s.iter_mut().for_each(|v| *v /= nrm);
                if eng.wdot(&s, &a.t) < 0.0 {
                    a.t.clone()
                } else {
                    s
                }
            } else {
                a.t.clone()
            }
        } else {
            a.t.clone()
        };
        let b = match eng.step_from(&a, &dir, ds) {
            Ok(b) => b,
            Err(_) => {
                ds *= 0.5;
                if ds < cfg.ds_min {
                    stop = StopReason::CorrectorFailure;
                    break;
                }
                continue;
            }
        };

        // range boundary: land exactly on it
        if b.p < lo || b.p > hi {
            let edge = if b.p < lo { lo } else { hi };
            let t = (edge - a.p) / (b.p - a.p);
            let guess: Vec<f64> = a.x.iter().zip(&b.x).map(|(u, v)| u + t * (v - u)).collect();
            if let Ok(x) = eng.newton_fixed(guess, edge) {
                let (_, jac, dp) = sys.jacobian(&x, edge);
                let det_sign = jac.factor().map(|lu| lu.det_sign()).unwrap_or(0.0);
                let bs = eng.bordered(jac, dp, &b.t)?;
                let t_edge = eng.tangent_from(&bs, &b.t);
                let e = Pt {
                    x,
                    p: edge,
                    t: t_edge,
                    det_sign,
                    iters: 0,
                };
                points.push(eng.branch_point(&e, false)?);
                pts.push(e);
            }
            stop = StopReason::RangeBoundary;
            break;
        }

        // whole-domain sign flip of D_g: the homogeneous degeneracy
        let (amin, amax) = eng.dg_extremes(&a)?;
        let (bmin, bmax) = eng.dg_extremes(&b)?;
        let flipped = (amax < 0.0 && bmin > 0.0) || (amin > 0.0 && bmax < 0.0);
        if flipped {
            let from_negative = amax < 0.0;
            let guard = |pt: &Pt| -> Result<f64> {
                let (mn, mx) = eng.dg_extremes(pt)?;
                Ok(if from_negative { -mx } else { mn })
            };
            let (mut s_lo, mut s_hi) = (0.0, ds);
            let mut best = a.clone();
            for _ in 0..80 {
                let s = 0.5 * (s_lo + s_hi);
                match eng.step_from(&a, &dir, s) {
                    Ok(c) if guard(&c)? >= cfg.dg_floor => {
                        s_lo = s;
                        best = c;
                    }
                    Ok(_) => s_hi = s,
                    Err(_) => s_hi = s,
                }
                if guard(&best)? <= 4.0 * cfg.dg_floor.max(1e-300) || s_hi - s_lo < 1e-15 {
                    break;
                }
            }
            if best.p != a.p {
                points.push(eng.branch_point(&best, false)?);
                pts.push(best);
            }
            stop = StopReason::DgDegeneracy;
            break;
        }
        if bmin.abs().min(bmax.abs()) < cfg.dg_floor || {
            let st = sys.state_of(&b.x, b.p)?;
            sys.dg_nodes(&st, b.p).iter().any(|d| d.abs() < cfg.dg_floor)
        } {
            stop = StopReason::DgDegeneracy;
            break;
        }

        if b.iters <= 3 {
            ds = (ds * 2.0).min(cfg.ds_max);
        } else if b.iters >= 8 {
            ds = (ds * 0.5).max(cfg.ds_min);
        }
        points.push(eng.branch_point(&b, false)?);
        pts.push(b.clone());
        a = b;
    }

    let mut branch = Branch {
        system: sys.clone(),
        points,
        provenance,
        stop_reason: stop,
        range: (lo, hi),
        detections: DetectionReport::default(),
    };
    if cfg.detect {
        branch.detections = detect_branch_points(&branch, cfg)?;
    }
    Ok(branch)
}

/// Locates every sign change of det(G_u) between consecutive points by
/// bisection in arclength, classifies it by the projection test and drops
/// under-resolved modes.
pub fn detect_branch_points(branch: &Branch, cfg: &StepConfig) -> Result<DetectionReport> {
    let sys = &branch.system;
    let eng = Engine::new(sys, cfg)?;
    let n = eng.dim();
    let mut report = DetectionReport::default();
    let max_mode = sys.n_cells / cfg.min_cells_per_wavelength.max(1) * 2;
    for (i, w) in branch.points.windows(2).enumerate() {
        let (pa, pb) = (&w[0], &w[1]);
        if pa.det_sign == 0.0 || pb.det_sign == 0.0 || pa.det_sign == pb.det_sign {
            continue;
        }
        let a = eng.pt_of(pa)?;
        let b = eng.pt_of(pb)?;
        let mut dir: Vec<f64> = b.x.iter().zip(&a.x).map(|(u, v)| u - v).collect();
        dir.push(b.p - a.p);
        let len = eng.wnorm(&dir);
        dir.iter_mut().for_each(|v| *v /= len);
        let (mut s_lo, mut s_hi) = (0.0, len);
        let (mut lo_pt, mut hi_pt) = (a.clone(), b.clone());
        let mut failed = false;
        for _ in 0..200 {
            if (hi_pt.p - lo_pt.p).abs() < cfg.param_tol && s_hi - s_lo < cfg.param_tol.max(1e-12) {
                break;
            }
            let s = 0.5 * (s_lo + s_hi);
            match eng.step_from(&a, &dir, s) {
                Ok(c) if c.det_sign == pa.det_sign => {
                    s_lo = s;
                    lo_pt = c;
                }
                Ok(c) if c.det_sign == pb.det_sign => {
                    s_hi = s;
                    hi_pt = c;
                }
                _ => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            report.warnings.push(format!(
                "could not refine the sign change between {} and {}",
                pa.parameter_value, pb.parameter_value
            ));
            continue;
        }

        // the endpoint with the smaller σ_min carries the best null vector
        let mut best = None;
        for c in [&lo_pt, &hi_pt] {
            let (_, jac, dp) = sys.jacobian(&c.x, c.p);
            let lu = match jac.factor() {
                Ok(lu) => lu,
                Err(_) => continue,
            };
            let s = smallest_singular(&jac, &lu, cfg.sigma_iterations.max(200));
            if best.as_ref().is_none_or(|(_, b, _): &(Pt, crate::linalg::SmallestSingular, Vec<f64>)| s.sigma_min < b.sigma_min) {
                best = Some((c.clone(), s, dp));
            }
        }
        let Some((c, sv, dp)) = best else {
            report.warnings.push(format!("singular factorization near {}", pa.parameter_value));
            continue;
        };
        let dp_norm = dp.iter().map(|v| v * v).sum::<f64>().sqrt();
        let fold_indicator = if dp_norm <= 1e-12 {
            0.0
        } else {
            dot(&sv.left, &dp).abs() / dp_norm
        };
        // a fold reverses the parameter direction of the tangent; a branch
        // point on a branch does not
        let turns = pa.tangent.len() == n + 1
            && pb.tangent.len() == n + 1
            && pa.tangent[n] * pb.tangent[n] < 0.0;
        let kind = if turns { PointKind::Fold } else { PointKind::Bifurcation };
        let mut u1: Vec<f64> = sv.right.iter().step_by(STRIDE).copied().collect();
        let mut u2: Vec<f64> = sv.right.iter().skip(1).step_by(STRIDE).copied().collect();
        let nrm = (dot(&u1, &u1) + dot(&u2, &u2)).sqrt();
        // sign convention: positive u₂ component at x = 0
        let sgn = if u2[0] < 0.0 { -1.0 } else { 1.0 };
        u1.iter_mut().for_each(|v| *v *= sgn / nrm);
        u2.iter_mut().for_each(|v| *v *= sgn / nrm);
        let peak = u2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mode_index = sign_changes(u2.iter().copied(), 1e-3 * peak);
        if mode_index > max_mode {
            report.rejected.push((
                c.p,
                format!("mode {mode_index} is under-resolved (fewer than {} cells per wavelength)", cfg.min_cells_per_wavelength),
            ));
            continue;
        }
        let mut point = eng.branch_point(&c, kind == PointKind::Bifurcation)?;
        point.smallest_singular_value = sv.sigma_min;
        point.second_singular_value = sv.sigma_second;
        let null_vector = StateField::new(point.state.grid, u1, u2)?;
        if let Some(prev) = report.detections.last() {
            if (prev.parameter_value - c.p).abs() < 10.0 * cfg.param_tol {
                report
                    .warnings
                    .push(format!("merged clustered detections at {} and {}", prev.parameter_value, c.p));
                continue;
            }
        }
        report.detections.push(Detection {
            parameter_value: c.p,
            kind,
            point,
            null_vector,
            mode_index,
            fold_indicator,
            after_index: i,
        });
    }
    Ok(report)
}


/// Leaves a branch point along `±null_vector` and continues the new branch.
pub fn switch_branch(
    branch_point: &BranchPoint,
    null_vector: &StateField,
    direction: f64,
    system: &BvpSystem,
    range: (f64, f64),
    cfg: &StepConfig,
) -> Result<Branch> {
    let sys = BvpSystem {
        params: system.params_at(branch_point.parameter_value),
        ..system.clone()
    };
    let eng = Engine::new(&sys, cfg)?;
    let n = eng.dim();
    let base = eng.pt_of(branch_point)?;

    // extended null direction: running sums of U₁, zero multiplier
    let mut phi = vec![0.0; n + 1];
    let mut m = 0.0;
    for i in 0..sys.n_cells {
        m += null_vector.u1[i];
        phi[STRIDE * i] = null_vector.u1[i];
        phi[STRIDE * i + 1] = null_vector.u2[i];
        phi[STRIDE * i + 2] = m;
    }
    eng.normalize(&mut phi);
    let dir = direction.signum();

    let mut anchor = base.x.clone();
    anchor.push(base.p);
    let mut state_only = anchor.clone();
    state_only[n] = 0.0;
    let mut a0 = cfg.switch_amplitude * eng.wnorm(&state_only);
    let u1_peak = phi.iter().step_by(STRIDE).take(sys.n_cells).fold(0.0f64, |m, v| m.max(v.abs()));
    let ub = sys.params.u1_mean;
    if u1_peak > 0.0 {
        a0 = a0.min(0.5 * ub.min(1.0 - ub) / u1_peak);
    }

    let mut last_err = None;
    for k in 0..=6 {
        let a = a0 * 0.5f64.powi(k);
        let x: Vec<f64> = base.x.iter().zip(&phi).map(|(u, v)| u + dir * a * v).collect();
        let mut target = anchor.clone();
        for (t, v) in target.iter_mut().zip(&phi) {
            *t += dir * a * v;
        }
        let row: Vec<f64> = phi.iter().map(|v| dir * v).collect();
        match eng.correct_fixed_row(x, base.p, &target, &row) {
            Ok(mut c) => {
                let mut d: Vec<f64> = c.x.iter().zip(&base.x).map(|(u, v)| u - v).collect();
                d.push(c.p - base.p);
                let along = eng.wdot(&d, &phi) * dir;
                if along < 0.5 * a {
                    last_err = Some(HerdError::Continuation("corrected point fell back onto the original branch".into()));
                    continue;
                }
                eng.normalize(&mut d);
                if eng.wdot(&c.t, &d) < 0.0 {
                    c.t.iter_mut().for_each(|v| *v = -*v);
                }
                let start = eng.branch_point(&c, false)?;
                let mode_hint = sign_changes(null_vector.u2.iter().copied(), 1e-3 * norm_inf(&null_vector.u2));
                return continue_with_provenance(
                    &start,
                    &sys,
                    range,
                    cfg,
                    Provenance::SwitchedAt {
                        parameter_value: branch_point.parameter_value,
                        mode_hint,
                    },
                );
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| HerdError::Continuation("branch switching failed".into())))
}

/// Continues a solution of the ρ-regularized problem in ρ down to 0 at
/// fixed δ.
pub fn homotopy_rho_to_zero(start: &BranchPoint, params: &super::ModelParams, cfg: &StepConfig) -> Result<Branch> {
    let rho0 = params.rho;
    if !(rho0 > 0.0) {
        return Err(HerdError::InvalidParameter("homotopy needs rho > 0 at the start".into()));
    }
    let sys = BvpSystem::new(start.state.n_cells(), *params, ActiveParameter::Rho)?;
    let mut s = start.clone();
    s.parameter_value = rho0;
    s.tangent.clear();
    let mut c = cfg.clone();
    c.direction = -1.0;
    let upper = (10.0 * rho0).max(1.0);
    let branch = continue_with_provenance(&s, &sys, (0.0, upper), &c, Provenance::Homotopy { from_parameter: rho0 })?;
    let last = branch.last().parameter_value;
    if last != 0.0 {
        return Err(HerdError::Continuation(format!(
            "homotopy stopped at rho = {last} ({})",
            branch.stop_reason
        )));
    }
    Ok(branch)
}
