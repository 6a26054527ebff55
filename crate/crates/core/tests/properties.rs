//! Randomized structural invariants of the model functions and the grid
//! operators. Seeds are fixed so failures reproduce.

use herdlab_core::{Grid, ModelParams, Nonlinearity, StateField};
use nalgebra::Vector2;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// Admissible δ: (−κ/γ, 0) ∪ (0, 20].
fn sample_delta(rng: &mut ChaCha8Rng, kappa: f64, gamma: f64) -> f64 {
    let star = -kappa / gamma;
    if rng.random_bool(0.5) {
        // stay a hair inside the open interval
        star * rng.random_range(1e-6..1.0 - 1e-9)
    } else {
        rng.random_range(1e-6..20.0)
    }
}

#[test]
fn coercivity_bound_over_ten_thousand_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = f64::INFINITY;
    for _ in 0..10_000 {
        let kappa = rng.random_range(0.05..5.0);
        let p0 = ModelParams {
            kappa,
            ..ModelParams::default()
        };
        let delta = sample_delta(&mut rng, kappa, p0.gamma());
        let p = ModelParams { delta, ..p0 };
        let u1 = rng.random_range(1e-6..1.0 - 1e-6);
        let z = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let b = p.b_matrix(u1).unwrap();
        let eps1 = p.epsilon1().unwrap();
        assert!(eps1 > 0.0, "ε₁ = {eps1} at δ = {delta}, κ = {kappa}");
        let g = p.g_eval(u1).unwrap();
        let lhs = z.dot(&(b * z));
        let rhs = eps1 * (g * z[0] * z[0] + z[1] * z[1]);
        assert!(
            lhs >= rhs - 1e-12 * (1.0 + lhs.abs()),
            "zᵀBz = {lhs} < ε₁(gz₁² + z₂²) = {rhs} at δ = {delta}, κ = {kappa}, u₁ = {u1}"
        );
        worst = worst.min((lhs - rhs) / rhs.max(1e-300));
    }
    assert!(worst > -1e-10);
}

#[test]
fn relative_entropy_dominates_l2_distance() {
    // Bregman distance of h₀ with h₀″ = 1/g ≥ 1/γ
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let p = ModelParams {
            delta: rng.random_range(0.1..5.0),
            alpha: rng.random_range(0.1..10.0),
            u1_mean: rng.random_range(0.05..0.95),
            ..ModelParams::default()
        };
        let (u1s, u2s) = p.steady_state().unwrap();
        let grid = Grid::new(32, 1.0).unwrap();
        let u1: Vec<f64> = (0..32).map(|_| rng.random_range(1e-3..1.0 - 1e-3)).collect();
        let u2: Vec<f64> = (0..32).map(|_| u2s + rng.random_range(-1.0..1.0)).collect();
        let s = StateField::new(grid, u1, u2).unwrap();
        let r = herdlab_core::grid::entropy_report(&s, &p, 0.0).unwrap();
        let h = grid.spacing();
        let d1: f64 = s.u1.iter().map(|u| (u - u1s).powi(2)).sum::<f64>() * h;
        let d2: f64 = s.u2.iter().map(|u| (u - u2s).powi(2)).sum::<f64>() * h;
        let bound = d1 / (2.0 * p.gamma()) + d2 / (2.0 * p.delta0().unwrap());
        assert!(r.relative_entropy >= bound * (1.0 - 1e-12), "{} < {bound}", r.relative_entropy);
    }
}

proptest! {
    #![proptest_config(cfg(256))]

    #[test]
    fn entropy_density_is_convex(a in 0.001f64..0.999, b in 0.001f64..0.999, t in 0.0f64..1.0) {
        for nl in [Nonlinearity::Logistic, Nonlinearity::PowerAB { a: 1.5, b: 2.0 }] {
            let p = ModelParams { nonlinearity: nl, ..ModelParams::default() };
            let m = t * a + (1.0 - t) * b;
            let lhs = p.h0_eval(m).unwrap();
            let rhs = t * p.h0_eval(a).unwrap() + (1.0 - t) * p.h0_eval(b).unwrap();
            prop_assert!(lhs <= rhs + 1e-10, "{nl:?}: h₀({m}) = {lhs} > {rhs}");
        }
    }

    #[test]
    fn inverse_of_entropy_derivative(s in 0.001f64..0.999) {
        for nl in [Nonlinearity::Logistic, Nonlinearity::PowerAB { a: 2.0, b: 1.5 }] {
            let p = ModelParams { nonlinearity: nl, ..ModelParams::default() };
            let w = p.h0_prime(s).unwrap();
            let back = p.h0_prime_inverse(w);
            prop_assert!((back - s).abs() < 1e-10 * s.min(1.0 - s).max(1e-3), "{nl:?}: {s} -> {w} -> {back}");
        }
    }

    #[test]
    fn neumann_laplacian_is_symmetric_and_nonpositive(
        u in prop::collection::vec(-1.0f64..1.0, 16),
        v in prop::collection::vec(-1.0f64..1.0, 16),
        len in 0.5f64..50.0,
    ) {
        let g = Grid::new(16, len).unwrap();
        let lu = g.neumann_laplacian_apply(&u).unwrap();
        let lv = g.neumann_laplacian_apply(&v).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let scale = lu.iter().chain(&lv).fold(1.0f64, |m, x| m.max(x.abs()));
        prop_assert!((dot(&lu, &v) - dot(&u, &lv)).abs() < 1e-12 * scale * 16.0);
        prop_assert!(dot(&lu, &u) <= 1e-12 * scale);
        // constants are in the kernel
        let ones = g.neumann_laplacian_apply(&[1.0; 16]).unwrap();
        prop_assert!(ones.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn critical_deltas_are_ordered(kappa in 0.01f64..10.0, u in 0.01f64..0.99) {
        let p = ModelParams { kappa, u1_mean: u, ..ModelParams::default() };
        // δ_d = −κ/g(u*) ≤ −κ/γ = δ*
        prop_assert!(p.delta_d() <= p.delta_star() * (1.0 - 1e-15));
    }
}
