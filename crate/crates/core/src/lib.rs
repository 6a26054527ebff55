//! Numerical laboratory for the one-dimensional cross-diffusion herding
//! system
//!
//! ```text
//! ∂ₜu₁ = ∂ₓ(∂ₓu₁ − g(u₁)∂ₓu₂)
//! ∂ₜu₂ = ∂ₓ(δ∂ₓu₁ + κ∂ₓu₂) + f(u₁) − αu₂
//! ```
//!
//! with no-flux boundary conditions on `[0, l]`.
//!
//! * [`model`]: closed-form quantities (entropy densities, ε₁, χ, δ*, δ_d).
//! * [`grid`]: cell-centred grid, fields, quadrature and entropy diagnostics.
//! * [`time`]: implicit Euler in entropy or primal variables.
//! * [`steady`]: steady-state residual, Newton, pseudo-arclength
//!   continuation, branch points, branch switching and ρ-homotopy.
//! * [`analytics`]: closed-form bifurcation values and eigenfunctions.

pub mod analytics;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod model;
mod quad;
mod scheme;
pub mod steady;
pub mod time;

pub use error::{HerdError, Result};
pub use grid::{EntropyReport, Grid, StateField};
pub use model::{CriticalDeltas, DecayRate, ModelParams, Nonlinearity};
