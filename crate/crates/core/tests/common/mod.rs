#![allow(dead_code)]

use herdlab_core::time::{step_residual, step_residual_and_jacobian, TimeStepperConfig};
use herdlab_core::{Grid, ModelParams, StateField};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// (κ, α, l, ū₁, ρ) = (1, 0.2, 20, 0.594, 0.05).
pub fn case1() -> ModelParams {
    ModelParams {
        kappa: 1.0,
        alpha: 0.2,
        length: 20.0,
        u1_mean: 0.594,
        rho: 0.05,
        ..ModelParams::default()
    }
}

/// (κ, α, l, ū₁, ρ) = (1, 0.001, 50, 0.211325, 0.05).
pub fn case2() -> ModelParams {
    ModelParams {
        kappa: 1.0,
        alpha: 0.001,
        length: 50.0,
        u1_mean: 0.211325,
        rho: 0.05,
        ..ModelParams::default()
    }
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Smallest `max|a − T c|` over the shifts and reflections `T` of the even
/// periodic extension of `c` (cell-centred, period `2n`).
pub fn aligned_distance(a: &[f64], c: &[f64], map: impl Fn(f64) -> f64) -> f64 {
    let n = c.len();
    let ext = |k: usize| {
        let k = k % (2 * n);
        if k < n { c[k] } else { c[2 * n - 1 - k] }
    };
    let mut best = f64::INFINITY;
    for s in 0..2 * n {
        for flip in [false, true] {
            let d = (0..n)
                .map(|i| {
                    let k = if flip { s + 2 * n - i } else { s + i };
                    (a[i] - map(ext(k))).abs()
                })
                .fold(0.0, f64::max);
            best = best.min(d);
        }
    }
    best
}

/// `|⟨a, b⟩| / (‖a‖‖b‖)`.
pub fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot.abs() / (na * nb)
}

/// Cell values drawn uniformly around the homogeneous state; `u₁` is kept in
/// `[0.02, 0.98]`.
pub fn random_state(rng: &mut ChaCha8Rng, grid: Grid, p: &ModelParams, spread: f64) -> StateField {
    let (a, b) = p.steady_state().unwrap();
    let n = grid.n_cells();
    let u1 = (0..n)
        .map(|_| (a + rng.random_range(-spread..spread)).clamp(0.02, 0.98))
        .collect();
    let u2 = (0..n).map(|_| b + rng.random_range(-spread..spread)).collect();
    StateField::new(grid, u1, u2).unwrap()
}

/// Largest `|analytic − fd| / max(|analytic|, |fd|, 1)` over all entries of
/// the step Jacobian, with central differences.
pub fn jacobian_fd_error(unknowns: &[f64], prev: &StateField, p: &ModelParams, cfg: &TimeStepperConfig) -> f64 {
    let (_, jac) = step_residual_and_jacobian(unknowns, prev, p, cfg).unwrap();
    let n = unknowns.len();
    let mut worst = 0.0f64;
    for j in 0..n {
        let e = 1e-6 * unknowns[j].abs().max(1.0);
        let mut up = unknowns.to_vec();
        let mut dn = unknowns.to_vec();
        up[j] += e;
        dn[j] -= e;
        let ru = step_residual(&up, prev, p, cfg).unwrap();
        let rd = step_residual(&dn, prev, p, cfg).unwrap();
        for i in 0..n {
            let fd = (ru[i] - rd[i]) / (2.0 * e);
            let an = if i.abs_diff(j) <= 3 { jac.get(i, j) } else { 0.0 };
            let scale = an.abs().max(fd.abs()).max(1.0);
            worst = worst.max((an - fd).abs() / scale);
        }
    }
    worst
}

/// Entropy variables `(h₀′(u₁), u₂/δ₀)`, interleaved.
pub fn entropy_unknowns(s: &StateField, p: &ModelParams) -> Vec<f64> {
    let d0 = p.delta0().unwrap();
    s.u1.iter()
        .zip(&s.u2)
        .flat_map(|(&a, &b)| [p.h0_prime(a).unwrap(), b / d0])
        .collect()
}
