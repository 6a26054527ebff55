//! Steady states of the no-flux boundary-value problem: residual, Newton,
//! pseudo-arclength continuation, branch-point detection and switching.
//!
//! At ρ = 0 the u₁ equation is a pure divergence and the steady problem
//! only fixes u₁ up to its mass. The solver appends a running mass `M` and
//! a multiplier `ν` per cell so the Jacobian stays banded and nonsingular;
//! `ν = 0` at every solution.

mod continuation;
mod system;

pub use crate::model::ModelParams;
pub use continuation::{
    continue_branch, detect_branch_points, homotopy_rho_to_zero, newton_solve, switch_branch, Branch,
    BranchPoint, Detection, DetectionReport, PointKind, Provenance, StepConfig, StopReason,
};
pub use system::{bvp_residual, l2_norm_z, n_interfaces, ActiveParameter, BvpSystem, INTERFACE_PLATEAU};
