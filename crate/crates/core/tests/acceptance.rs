//! One line per acceptance criterion. Criteria listed in [`KNOWN_FAILING`]
//! are evaluated in full and print FAIL; the run fails if any other
//! criterion fails or if a known one starts passing. With
//! `HERDLAB_STRICT_ACCEPTANCE=1` every FAIL fails the run.
//!
//! Built with `harness = false` so the report is printed by `cargo test`.

mod common;

use common::{
    abs_cosine, aligned_distance, case1, case2, entropy_unknowns, jacobian_fd_error, max_abs, random_state,
};
use herdlab_core::analytics::{delta_b, null_eigenfunction, predict_modes};
use herdlab_core::grid::entropy_report;
use herdlab_core::model::SOURCE_MAX;
use herdlab_core::steady::{
    bvp_residual, continue_branch, homotopy_rho_to_zero, l2_norm_z, switch_branch, ActiveParameter, Branch, BranchPoint,
    BvpSystem, StepConfig, StopReason,
};
use herdlab_core::time::{evolve, fit_decay_rate, step_entropy_variables, step_primal, SolverMode, TimeStepperConfig};
use herdlab_core::{Grid, ModelParams, StateField};
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::time::Instant;

/// 7: the switched pair is related by a spatial symmetry, not by u₁ ↦ 1 − u₁.
/// 8: the branch from δ_b² folds back near δ = −3.50 and never reaches −9.
const KNOWN_FAILING: &[usize] = &[7, 8];

const TABLE_RHO: [f64; 9] = [-121.89, -20.81, -10.50, -7.51, -6.24, -5.58, -5.19, -4.94, -4.77];
const TABLE_RHO0: [f64; 9] = [-45.38, -14.45, -8.73, -6.72, -5.80, -5.29, -4.99, -4.79, -4.66];
const TABLE_AUTO: [f64; 5] = [-20.81, -10.50, -7.51, -6.24, -5.58];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn homogeneous_run(params: ModelParams, n_cells: usize, start: f64, range: (f64, f64), direction: f64) -> Branch {
    let p = ModelParams { delta: start, ..params };
    let sys = BvpSystem::new(n_cells, p, ActiveParameter::Delta).unwrap();
    let cfg = StepConfig {
        direction,
        ..StepConfig::default()
    };
    let b0 = BranchPoint::homogeneous(&sys, &cfg).unwrap();
    continue_branch(&b0, &sys, range, &cfg).unwrap()
}

fn detection(branch: &Branch, mode: usize) -> Option<f64> {
    branch
        .detections
        .bifurcations()
        .find(|d| d.mode_index == mode)
        .map(|d| d.parameter_value)
}

fn criterion_1() -> Outcome {
    let rows = predict_modes(1..=9, &case1()).unwrap();
    let mut bad = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        for (got, want) in [(r.delta_b, TABLE_RHO[k]), (r.delta_b_rho0, TABLE_RHO0[k])] {
            if format!("{got:.2}") != format!("{want:.2}") {
                bad.push(format!("n = {}: {got:.4} vs {want}", k + 1));
            }
        }
    }
    let detail = format!("δ_b¹ = {:.2} / {:.2}; {} mismatches {bad:?}", rows[0].delta_b, rows[0].delta_b_rho0, bad.len());
    outcome(bad.is_empty(), detail)
}

/// Case 1 from δ = −25 upwards at n_cells = 200 and 400.
struct Case1Runs {
    coarse: Branch,
    fine: Branch,
}

fn criterion_2(runs: &Case1Runs) -> Outcome {
    let mut worst_ext = 0.0f64;
    let mut worst_coarse = 0.0f64;
    for (k, &want) in TABLE_AUTO.iter().enumerate() {
        let n = k + 2;
        let (Some(c), Some(f)) = (detection(&runs.coarse, n), detection(&runs.fine, n)) else {
            return outcome(false, format!("mode {n} not detected"));
        };
        let ext = f + (f - c) / 3.0;
        worst_ext = worst_ext.max((ext - want).abs());
        worst_coarse = worst_coarse.max((c - want).abs());
    }
    outcome(
        worst_ext <= 5e-3 && worst_coarse <= 5e-2,
        format!("max |extrapolated − table| = {worst_ext:.2e} (≤ 5e-3), max |n=200 − table| = {worst_coarse:.2e} (≤ 5e-2)"),
    )
}

fn criterion_3(runs: &Case1Runs) -> Outcome {
    let b = &runs.fine;
    let dd = case1().delta_d();
    let end = b.last().parameter_value;
    let nearest = b
        .detections
        .detections
        .iter()
        .map(|d| (d.parameter_value - dd).abs())
        .fold(f64::INFINITY, f64::min);
    let pass = b.stop_reason == StopReason::DgDegeneracy && (end - dd).abs() < 1e-3 && nearest > 1e-3;
    outcome(
        pass,
        format!("stop \"{}\" at δ = {end:.6} (δ_d = {dd:.6}); nearest detection {nearest:.3e} away", b.stop_reason),
    )
}

fn criterion_4(runs: &Case1Runs) -> Outcome {
    let p = case1();
    let mut worst_cos = f64::INFINITY;
    let mut worst_ratio = f64::INFINITY;
    for n in 2..=5 {
        let Some(d) = runs.fine.detections.bifurcations().find(|d| d.mode_index == n) else {
            return outcome(false, format!("mode {n} not detected"));
        };
        let e = null_eigenfunction(n, &p, &d.null_vector.grid).unwrap();
        let got: Vec<f64> = d.null_vector.u1.iter().chain(&d.null_vector.u2).copied().collect();
        let want: Vec<f64> = e.u1.iter().chain(&e.u2).copied().collect();
        worst_cos = worst_cos.min(abs_cosine(&got, &want));
        worst_ratio = worst_ratio.min(d.point.second_singular_value / d.point.smallest_singular_value);
    }
    outcome(
        worst_cos >= 0.99 && worst_ratio >= 100.0,
        format!("min |cos| = {worst_cos:.6}, min σ₂/σ₁ = {worst_ratio:.3e}"),
    )
}

fn criterion_5() -> Outcome {
    let p = ModelParams {
        delta: 1.0,
        kappa: 1.0,
        alpha: 10.0,
        u1_mean: 0.5,
        c_lipschitz: 1.0,
        c_sobolev: 1.0,
        ..ModelParams::default()
    };
    let Some(chi) = p.chi_rate().unwrap().rate() else {
        return outcome(false, "decay condition does not hold".into());
    };
    let grid = Grid::new(50, p.length).unwrap();
    let (a, b) = p.steady_state().unwrap();
    let init = StateField::from_fn(grid, |x| (a + 0.1 * (PI * x / p.length).cos(), b));
    let cfg = TimeStepperConfig {
        t_final: 10.0,
        ..TimeStepperConfig::default()
    };
    let traj = evolve(&init, &p, &cfg).unwrap();
    let rate = fit_decay_rate(&traj).unwrap();

    let h0 = traj.samples[0].report.relative_entropy;
    let c = 2.0 * (p.gamma().max(p.delta) * h0).sqrt();
    let h = grid.spacing();
    let violations = traj
        .samples
        .iter()
        .filter(|s| {
            let d1 = (s.state.u1.iter().map(|u| (u - a).powi(2)).sum::<f64>() * h).sqrt();
            let d2 = (s.state.u2.iter().map(|u| (u - b).powi(2)).sum::<f64>() * h).sqrt();
            d1 + d2 > c * (-chi * s.time / 2.0).exp() * (1.0 + 1e-9)
        })
        .count();
    outcome(
        rate >= 0.95 * chi && violations == 0,
        format!("χ = {chi:.4}, fitted rate {rate:.4}, L² bound violated at {violations} samples"),
    )
}

fn criterion_6() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // coercivity of B over 10⁴ samples
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut coercive = 0;
    for _ in 0..10_000 {
        let kappa = rng.random_range(0.05..5.0);
        let p0 = ModelParams {
            kappa,
            ..ModelParams::default()
        };
        let star = -kappa / p0.gamma();
        let delta = if rng.random_bool(0.5) {
            star * rng.random_range(1e-6..1.0 - 1e-9)
        } else {
            rng.random_range(1e-6..20.0)
        };
        let p = ModelParams { delta, ..p0 };
        let u1 = rng.random_range(1e-6..1.0 - 1e-6);
        let z = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let lhs = z.dot(&(p.b_matrix(u1).unwrap() * z));
        let rhs = p.epsilon1().unwrap() * (p.g_eval(u1).unwrap() * z[0] * z[0] + z[1] * z[1]);
        if lhs >= rhs - 1e-12 * (1.0 + lhs.abs()) {
            coercive += 1;
        }
    }
    pass &= coercive == 10_000;
    notes.push(format!("coercivity {coercive}/10000"));

    // 0 < u₁ < 1 over 10³ steps at δ = −2
    let p = ModelParams {
        delta: -2.0,
        ..ModelParams::default()
    };
    let mut s = random_state(&mut ChaCha8Rng::seed_from_u64(11), Grid::new(40, 1.0).unwrap(), &p, 0.45);
    let cfg = TimeStepperConfig::default();
    let mut inside = true;
    for _ in 0..1000 {
        s = step_entropy_variables(&s, &p, &cfg).unwrap();
        inside &= s.u1.iter().all(|&u| u > 0.0 && u < 1.0);
    }
    pass &= inside;
    notes.push(format!("δ = −2 bounds kept: {inside}"));

    // primal mass
    let p = ModelParams {
        delta: 0.7,
        alpha: 2.0,
        length: 3.0,
        ..ModelParams::default()
    };
    let pcfg = TimeStepperConfig {
        mode: SolverMode::Primal,
        ..TimeStepperConfig::default()
    };
    let mut s = random_state(&mut ChaCha8Rng::seed_from_u64(12), Grid::new(60, 3.0).unwrap(), &p, 0.3);
    let mut mass_err = 0.0f64;
    for _ in 0..200 {
        let next = step_primal(&s, &p, &pcfg).unwrap();
        mass_err = mass_err.max((next.mass_u1() - s.mass_u1()).abs() / s.mass_u1());
        s = next;
    }
    pass &= mass_err <= 1e-12;
    notes.push(format!("mass drift {mass_err:.1e}"));

    // discrete entropy inequality on every step
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut steps, mut ok) = (0, 0);
    for &delta in &[1.0, 0.3, 4.0, -1.0, -2.0, -3.5] {
        for &alpha in &[0.2, 1.0, 10.0] {
            let p = ModelParams {
                delta,
                alpha,
                length: 2.0,
                ..ModelParams::default()
            };
            let d0 = p.delta0().unwrap();
            let c0 = p.epsilon1().unwrap() * (1.0 / p.gamma()).min(1.0 / (d0 * d0));
            let cf = p.length * SOURCE_MAX * SOURCE_MAX / (4.0 * alpha * d0);
            let cfg = TimeStepperConfig {
                tau: 0.05,
                ..TimeStepperConfig::default()
            };
            let grid = Grid::new(30, 2.0).unwrap();
            let h = grid.spacing();
            let mut s = random_state(&mut rng, grid, &p, 0.4);
            for _ in 0..40 {
                let next = step_entropy_variables(&s, &p, &cfg).unwrap();
                let h_prev = entropy_report(&s, &p, 0.0).unwrap().entropy;
                let h_next = entropy_report(&next, &p, 0.0).unwrap().entropy;
                let diss: f64 = (0..grid.n_cells() - 1)
                    .map(|i| {
                        let d1 = (next.u1[i + 1] - next.u1[i]) / h;
                        let d2 = (next.u2[i + 1] - next.u2[i]) / h;
                        h * (d1 * d1 + d2 * d2)
                    })
                    .sum();
                let rhs = cf * cfg.tau + h_prev;
                steps += 1;
                if h_next + c0 * cfg.tau * diss <= rhs + 1e-10 * rhs.abs().max(1.0) {
                    ok += 1;
                }
                s = next;
            }
        }
    }
    pass &= ok == steps;
    notes.push(format!("entropy inequality {ok}/{steps} steps"));

    // analytic vs finite-difference Jacobians
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for &delta in &[0.8, -1.5] {
        let p = ModelParams {
            delta,
            alpha: 0.7,
            length: 1.5,
            ..ModelParams::default()
        };
        let grid = Grid::new(12, 1.5).unwrap();
        let prev = random_state(&mut rng, grid, &p, 0.3);
        let next = random_state(&mut rng, grid, &p, 0.3);
        worst = worst.max(jacobian_fd_error(&next.to_interleaved(), &prev, &p, &pcfg));
        let ecfg = TimeStepperConfig {
            eps_reg: 1e-3,
            ..TimeStepperConfig::default()
        };
        worst = worst.max(jacobian_fd_error(&entropy_unknowns(&next, &p), &prev, &p, &ecfg));
    }
    pass &= worst <= 1e-6;
    notes.push(format!("Jacobian rel. error {worst:.1e}"));

    outcome(pass, notes.join(", "))
}

/// Both switched branches at the first bifurcation of the ū₁ = 1/2 problem,
/// sampled at one δ below it.
fn pitchfork_pair() -> (StateField, StateField, f64) {
    let p = ModelParams {
        u1_mean: 0.5,
        ..case1()
    };
    let b = homogeneous_run(p, 200, -25.0, (-25.0, -10.0), 1.0);
    let d = b.detections.bifurcations().next().unwrap();
    let cfg = StepConfig {
        max_points: 40,
        ..StepConfig::default()
    };
    let at = d.parameter_value - 1.0;
    let mut side = [1.0, -1.0].iter().map(|&dir| {
        switch_branch(&d.point, &d.null_vector, dir, &b.system, (-40.0, 0.0), &cfg)
            .unwrap()
            .solution_at(at, &cfg)
            .unwrap()
    });
    (side.next().unwrap(), side.next().unwrap(), at)
}

fn criterion_7() -> Outcome {
    let (a, c, at) = pitchfork_pair();
    let norm_gap = (l2_norm_z(&a) - l2_norm_z(&c)).abs();
    let flip = aligned_distance(&a.u1, &c.u1, |u| 1.0 - u);
    let spatial = aligned_distance(&a.u1, &c.u1, |u| u).max(aligned_distance(&a.u2, &c.u2, |u| u));
    outcome(
        norm_gap <= 1e-8 && flip <= 1e-8,
        format!(
            "δ = {at:.4}: |Δ‖z‖| = {norm_gap:.1e}; u₁ ↦ 1 − u₁ aligned defect {flip:.3e} (need ≤ 1e-8); \
             spatial image defect {spatial:.1e}"
        ),
    )
}

/// Switched branch from δ_b² of Case 2 continued towards δ = −9.
fn case2_branch() -> Branch {
    let b = homogeneous_run(case2(), 400, 12.0, (8.0, 12.0), -1.0);
    let d = b.detections.bifurcations().find(|d| d.mode_index == 2).unwrap();
    switch_branch(&d.point, &d.null_vector, 1.0, &b.system, (-9.0, 12.0), &StepConfig::default()).unwrap()
}

/// Homotopy in ρ at fixed δ; `(residual at ρ = 0, ‖u₁ − ū₁‖_∞, min u₁, max u₁)`.
fn homotopy_at(branch: &Branch, delta: f64) -> Result<(f64, f64, f64, f64), String> {
    let cfg = StepConfig::default();
    let p = ModelParams { delta, ..case2() };
    let sol = branch.solution_at(delta, &cfg).map_err(|e| e.to_string())?;
    let sys = BvpSystem::new(sol.n_cells(), p, ActiveParameter::Delta).unwrap();
    let start = BranchPoint::solve(&sys, &sol, &cfg).map_err(|e| e.to_string())?;
    let h = homotopy_rho_to_zero(&start, &p, &cfg).map_err(|e| e.to_string())?;
    let s = &h.last().state;
    let res = max_abs(&bvp_residual(s, &ModelParams { rho: 0.0, ..p }).unwrap());
    let dev = s.u1.iter().map(|u| (u - p.u1_mean).abs()).fold(0.0, f64::max);
    let lo = s.u1.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.u1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((res, dev, lo, hi))
}

fn criterion_8() -> Outcome {
    let br = case2_branch();
    let lowest = br.parameters().into_iter().fold(f64::INFINITY, f64::min);
    match homotopy_at(&br, -9.0) {
        Ok((res, dev, lo, hi)) => outcome(
            res <= 1e-8 && dev >= 0.1 && lo < 0.1 && hi > 0.9,
            format!("δ = −9: residual {res:.1e}, ‖u₁ − ū₁‖ = {dev:.3}, u₁ ∈ [{lo:.3}, {hi:.3}]"),
        ),
        Err(e) => {
            let fallback = match homotopy_at(&br, -3.0) {
                Ok((res, dev, lo, hi)) => {
                    format!("at δ = −3: residual {res:.1e}, ‖u₁ − ū₁‖ = {dev:.3}, u₁ ∈ [{lo:.4}, {hi:.4}]")
                }
                Err(e) => format!("at δ = −3: {e}"),
            };
            outcome(
                false,
                format!("δ = −9 not on the branch (lowest δ reached {lowest:.4}, stop \"{}\": {e}); {fallback}", br.stop_reason),
            )
        }
    }
}

fn criterion_9() -> Outcome {
    let check = |p: ModelParams, below: bool| {
        let p = ModelParams { rho: 0.0, ..p };
        let dd = p.delta_d();
        let v: Vec<f64> = (1..=50).map(|n| delta_b(n, &p, false).unwrap()).collect();
        let side = v.iter().all(|&d| if below { d < dd } else { d > dd });
        let mono = v.windows(2).all(|w| if below { w[0] < w[1] } else { w[0] > w[1] });
        side && mono
    };
    let (c1, c2) = (check(case1(), true), check(case2(), false));
    outcome(c1 && c2, format!("Case 1 increasing below δ_d: {c1}; Case 2 decreasing above δ_d: {c2}"))
}

fn main() {
    let strict = std::env::var("HERDLAB_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1");
    let timed = |k: usize, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        (k, o, t.elapsed().as_secs_f64())
    };
    let mut results = vec![timed(1, &criterion_1)];
    let t = Instant::now();
    let runs = Case1Runs {
        coarse: homogeneous_run(case1(), 200, -25.0, (-25.0, 0.0), 1.0),
        fine: homogeneous_run(case1(), 400, -25.0, (-25.0, 0.0), 1.0),
    };
    let shared = t.elapsed().as_secs_f64();
    for (k, f) in [(2, criterion_2 as fn(&Case1Runs) -> Outcome), (3, criterion_3), (4, criterion_4)] {
        let (k, o, s) = timed(k, &|| f(&runs));
        results.push((k, o, s + shared));
    }
    results.push(timed(5, &criterion_5));
    results.push(timed(6, &criterion_6));
    results.push(timed(7, &criterion_7));
    results.push(timed(8, &criterion_8));
    results.push(timed(9, &criterion_9));

    let mut surprises = Vec::new();
    for (k, o, secs) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_FAILING.contains(k) { " [known]" } else { "" };
        println!("criterion {k}: {tag}{note} ({secs:.2} s) {}", o.detail);
        let expected = !KNOWN_FAILING.contains(k) || strict;
        if o.pass != expected {
            surprises.push(*k);
        }
    }
    if surprises.is_empty() {
        println!("acceptance: all outcomes as expected");
    } else {
        println!("acceptance: unexpected outcome for criteria {surprises:?}");
        std::process::exit(1);
    }
}
