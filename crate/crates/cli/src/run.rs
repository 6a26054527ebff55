//! One function per scenario. Each writes its artifacts through the
//! [`Recorder`] and leaves the manifest to [`run_scenario`].

use crate::config::{RunConfig, Scenario, Side};
use crate::manifest::{Manifest, Recorder};
use crate::{thread_pool, CliError};
use herdlab_core::analytics::{alpha_regime, delta_b, predict_modes};
use herdlab_core::grid::fmt_f64;
use herdlab_core::steady::{
    bvp_residual, continue_branch, homotopy_rho_to_zero, n_interfaces, switch_branch, ActiveParameter, Branch,
    BranchPoint, BvpSystem, Detection, PointKind,
};
use herdlab_core::time::{evolve, fit_decay_rate};
use herdlab_core::{Grid, ModelParams, StateField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;
use std::f64::consts::PI;

/// Runs the scenario and writes `manifest.json`, also when the scenario
/// fails. The manifest is returned on success.
pub fn run_scenario(cfg: &RunConfig) -> Result<Manifest, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        CliError::Validation(format!("output_dir {} is not writable: {e}", cfg.output_dir.display()))
    })?;
    let pool = thread_pool()?;
    let mut rec = Recorder::new(cfg, pool.current_num_threads());

    let outcome = rec
        .write("config.toml", cfg.to_toml()?.as_bytes())
        .and_then(|_| match cfg.scenario {
            Scenario::Predict => predict(cfg, &mut rec),
            Scenario::Simulate => simulate(cfg, &mut rec),
            Scenario::Continue => continue_homogeneous(cfg, &mut rec),
            Scenario::Switch => switch(cfg, &mut rec, &pool).map(|_| ()),
            Scenario::Homotopy => homotopy(cfg, &mut rec, &pool),
            Scenario::DecayMap => decay_map(cfg, &mut rec, &pool),
        });
    let manifest = rec.finish(&outcome)?;
    outcome.map(|_| manifest)
}

fn csv_table(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn predict(cfg: &RunConfig, rec: &mut Recorder) -> Result<(), CliError> {
    let modes = cfg.predict_section().modes;
    let p = &cfg.model;
    let preds = predict_modes(1..=modes, p)?;
    rec.lap("predict");

    let json = serde_json::to_vec_pretty(&preds).map_err(|e| CliError::Io(e.to_string()))?;
    rec.write("predictions.json", &json)?;

    // one row per formula, one column per mode
    let mut header = vec!["row".to_string()];
    header.extend((1..=modes).map(|n| n.to_string()));
    let row = |name: &str, f: fn(&herdlab_core::analytics::BifurcationPrediction) -> f64| {
        let mut r = vec![name.to_string()];
        r.extend(preds.iter().map(|q| fmt_f64(f(q))));
        r
    };
    let rows = [row("delta_b_rho0", |q| q.delta_b_rho0), row("delta_b", |q| q.delta_b)];
    rec.write("table1.csv", &csv_table(&header, &rows)?)?;

    let rows: Vec<Vec<String>> = preds
        .iter()
        .map(|q| {
            vec![
                q.mode_index.to_string(),
                fmt_f64(q.mu_n),
                fmt_f64(q.delta_b),
                fmt_f64(q.delta_b_rho0),
            ]
        })
        .collect();
    rec.write(
        "predictions.csv",
        &csv_table(&strings(&["n", "mu_n", "delta_b", "delta_b_rho0"]), &rows)?,
    )?;

    rec.result("delta_star", p.delta_star());
    rec.result("delta_d", p.delta_d());
    rec.result("alpha_regime", alpha_regime(p)?);
    Ok(())
}

fn initial_state(cfg: &RunConfig) -> Result<StateField, CliError> {
    let s = cfg.simulate_section();
    let p = &cfg.model;
    let grid = Grid::new(cfg.n_cells, p.length)?;
    let (a, b) = p.steady_state()?;
    let k = s.mode as f64 * PI / p.length;
    let mut init = StateField::from_fn(grid, |x| (a + s.amplitude * (k * x).cos(), b + s.u2_amplitude * (k * x).cos()));
    if s.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for u in &mut init.u1 {
            *u += rng.random_range(-s.noise..=s.noise);
        }
    }
    Ok(init)
}

fn simulate(cfg: &RunConfig, rec: &mut Recorder) -> Result<(), CliError> {
    let p = &cfg.model;
    let init = initial_state(cfg)?;
    rec.write_with("initial_state.csv", |w| init.write_csv(w))?;
    let run = evolve(&init, p, &cfg.time);
    rec.lap("evolve");
    let traj = match run {
        Ok(t) => t,
        Err(fail) => {
            rec.write_with("trajectory.csv", |w| fail.partial.write_csv(w))?;
            rec.stop_reason("evolve", format!("failed at t = {}", fail.time));
            return Err(CliError::Solver(fail.to_string()));
        }
    };
    rec.write_with("trajectory.csv", |w| traj.write_csv(w))?;
    let last = traj.last().expect("evolve records the initial sample");
    rec.write_with("final_state.csv", |w| last.state.write_csv(w))?;
    rec.stop_reason("evolve", "t_final reached");

    rec.manifest.warnings.extend(traj.warnings.iter().cloned());
    rec.result("t_final", last.time);
    rec.result("steps", traj.samples.len() - 1);
    rec.result("decay_rate_bound", p.chi_rate().ok().and_then(|r| r.rate()));
    match fit_decay_rate(&traj) {
        Ok(r) => rec.result("fitted_decay_rate", r),
        Err(e) => {
            rec.result("fitted_decay_rate", Option::<f64>::None);
            rec.manifest.warnings.push(format!("no decay rate fitted: {e}"));
        }
    }
    rec.result("final_relative_entropy", last.report.relative_entropy);
    rec.result("mass_drift", (last.report.mass_u1 - traj.samples[0].report.mass_u1).abs());
    Ok(())
}

fn homogeneous_branch(cfg: &RunConfig, range: [f64; 2]) -> Result<Branch, CliError> {
    let sys = BvpSystem::new(cfg.n_cells, cfg.model, ActiveParameter::Delta)?;
    let b0 = BranchPoint::homogeneous(&sys, &cfg.continuation)?;
    Ok(continue_branch(&b0, &sys, (range[0], range[1]), &cfg.continuation)?)
}

fn detections_csv(branch: &Branch, params: &ModelParams) -> Result<Vec<u8>, CliError> {
    let rows: Vec<Vec<String>> = branch
        .detections
        .detections
        .iter()
        .map(|d: &Detection| {
            let predicted = (d.kind == PointKind::Bifurcation && d.mode_index > 0)
                .then(|| delta_b(d.mode_index, params, true).ok())
                .flatten();
            vec![
                fmt_f64(d.parameter_value),
                match d.kind {
                    PointKind::Bifurcation => "bifurcation".into(),
                    PointKind::Fold => "fold".into(),
                },
                d.mode_index.to_string(),
                opt(predicted),
                fmt_f64(d.point.smallest_singular_value),
                fmt_f64(d.point.second_singular_value),
                fmt_f64(d.fold_indicator),
            ]
        })
        .collect();
    csv_table(
        &strings(&[
            "parameter",
            "kind",
            "mode_index",
            "predicted_delta_b",
            "sigma_min",
            "sigma_second",
            "fold_indicator",
        ]),
        &rows,
    )
}

fn record_branch(rec: &mut Recorder, name: &str, branch: &Branch) -> Result<(), CliError> {
    rec.write_with(&format!("{name}.csv"), |w| branch.write_csv(w))?;
    rec.stop_reason(name, branch.stop_reason);
    let ps = branch.parameters();
    let lo = ps.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    rec.result(
        name,
        json!({
            "points": branch.points.len(),
            "parameter_min": lo,
            "parameter_max": hi,
            "end_parameter": branch.last().parameter_value,
            "end_interfaces": branch.last().n_interfaces,
        }),
    );
    Ok(())
}

fn continue_homogeneous(cfg: &RunConfig, rec: &mut Recorder) -> Result<(), CliError> {
    let branch = homogeneous_branch(cfg, cfg.continue_section().range)?;
    rec.lap("continue");
    record_branch(rec, "branch", &branch)?;
    rec.write("detections.csv", &detections_csv(&branch, &cfg.model)?)?;
    let found: Vec<_> = branch
        .detections
        .detections
        .iter()
        .map(|d| json!({"parameter": d.parameter_value, "kind": d.kind, "mode_index": d.mode_index}))
        .collect();
    rec.result("detections", found);
    rec.result("rejected", &branch.detections.rejected);
    rec.manifest.warnings.extend(branch.detections.warnings.iter().cloned());
    Ok(())
}

fn side_name(sign: f64) -> &'static str {
    if sign > 0.0 {
        "plus"
    } else {
        "minus"
    }
}

/// Homogeneous run, branch point of the requested mode, switched branches.
fn switch(cfg: &RunConfig, rec: &mut Recorder, pool: &rayon::ThreadPool) -> Result<Vec<(f64, Branch)>, CliError> {
    let sec = cfg.switch_section();
    let homog = homogeneous_branch(cfg, sec.detect_range)?;
    rec.lap("homogeneous");
    record_branch(rec, "homogeneous", &homog)?;
    rec.write("detections.csv", &detections_csv(&homog, &cfg.model)?)?;
    let bp = homog
        .detections
        .bifurcations()
        .find(|d| d.mode_index == sec.mode)
        .ok_or_else(|| {
            CliError::Solver(format!(
                "no branch point of mode {} detected in {:?}",
                sec.mode, sec.detect_range
            ))
        })?;
    rec.result("branch_point", json!({"parameter": bp.parameter_value, "mode_index": bp.mode_index}));

    let range = (sec.branch_range[0], sec.branch_range[1]);
    let runs: Vec<(f64, Result<Branch, herdlab_core::HerdError>)> = pool.install(|| {
        sec.side
            .signs()
            .par_iter()
            .map(|&s| (s, switch_branch(&bp.point, &bp.null_vector, s, &homog.system, range, &cfg.continuation)))
            .collect()
    });
    rec.lap("switch");

    let mut out = Vec::new();
    for (sign, run) in runs {
        let branch = run?;
        let name = format!("branch_{}", side_name(sign));
        record_branch(rec, &name, &branch)?;
        for (k, &delta) in sec.profiles_at.iter().enumerate() {
            match branch.solution_at(delta, &cfg.continuation) {
                Ok(s) => {
                    rec.write_with(&format!("profile_{}_{k}.csv", side_name(sign)), |w| s.write_csv(w))?;
                }
                Err(e) => rec
                    .manifest
                    .warnings
                    .push(format!("{name}: no profile at δ = {delta}: {e}")),
            }
        }
        out.push((sign, branch));
    }
    if !sec.profiles_at.is_empty() {
        rec.result("profiles_at", &sec.profiles_at);
    }
    Ok(out)
}

fn homotopy(cfg: &RunConfig, rec: &mut Recorder, pool: &rayon::ThreadPool) -> Result<(), CliError> {
    debug_assert!(cfg.switch_section().side != Side::Both);
    let (_, branch) = switch(cfg, rec, pool)?.pop().expect("one side requested");
    let at = cfg.homotopy_section().at_delta;
    let p = ModelParams { delta: at, ..cfg.model };
    let ps = branch.parameters();
    let sol = branch.solution_at(at, &cfg.continuation).map_err(|e| {
        let lo = ps.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        CliError::Solver(format!("δ = {at} is not on the switched branch (it spans [{lo}, {hi}]): {e}"))
    })?;
    rec.write_with("start_state.csv", |w| sol.write_csv(w))?;
    let sys = BvpSystem::new(cfg.n_cells, p, ActiveParameter::Delta)?;
    let start = BranchPoint::solve(&sys, &sol, &cfg.continuation)?;
    let h = homotopy_rho_to_zero(&start, &p, &cfg.continuation)?;
    rec.lap("homotopy");
    rec.write_with("homotopy.csv", |w| h.write_csv(w))?;
    rec.stop_reason("homotopy", h.stop_reason);

    let end = &h.last().state;
    rec.write_with("final_state.csv", |w| end.write_csv(w))?;
    let res = bvp_residual(end, &ModelParams { rho: 0.0, ..p })?;
    let fold = |f: fn(f64, f64) -> f64, init: f64| end.u1.iter().copied().fold(init, f);
    rec.result("residual_rho0", res.iter().fold(0.0f64, |m, r| m.max(r.abs())));
    rec.result("u1_min", fold(f64::min, f64::INFINITY));
    rec.result("u1_max", fold(f64::max, f64::NEG_INFINITY));
    rec.result(
        "u1_deviation",
        end.u1.iter().map(|u| (u - p.u1_mean).abs()).fold(0.0, f64::max),
    );
    rec.result("n_interfaces", n_interfaces(end, p.u1_mean));
    Ok(())
}

struct MapPoint {
    alpha: f64,
    delta: f64,
    admissible: bool,
    holds: bool,
    chi: Option<f64>,
    fitted: Option<f64>,
    status: String,
}

fn map_point(cfg: &RunConfig, alpha: f64, delta: f64, simulate: bool) -> MapPoint {
    let p = ModelParams { alpha, delta, ..cfg.model };
    let admissible = p.delta0().is_ok();
    let holds = p.decay_condition_holds(delta);
    let chi = p.chi_rate().ok().and_then(|r| r.rate());
    let mut pt = MapPoint {
        alpha,
        delta,
        admissible,
        holds,
        chi,
        fitted: None,
        status: if admissible { "analytic".into() } else { "inadmissible".into() },
    };
    if !(simulate && admissible) {
        return pt;
    }
    let sec = cfg.decay_map_section();
    let run = Grid::new(cfg.n_cells, p.length).and_then(|grid| {
        let (a, b) = p.steady_state()?;
        let k = PI / p.length;
        let init = StateField::from_fn(grid, |x| (a + sec.amplitude * (k * x).cos(), b));
        let traj = evolve(&init, &p, &cfg.time).map_err(|f| f.source)?;
        fit_decay_rate(&traj)
    });
    match run {
        Ok(r) => {
            pt.fitted = Some(r);
            pt.status = "ok".into();
        }
        Err(e) => pt.status = format!("failed: {e}"),
    }
    pt
}

fn decay_map(cfg: &RunConfig, rec: &mut Recorder, pool: &rayon::ThreadPool) -> Result<(), CliError> {
    let sec = cfg.decay_map_section();
    let n = sec.n_delta;
    let span = sec.delta_max - sec.delta_min;
    // nodes that should be 0 or delta_max but carry rounding are snapped
    let deltas: Vec<f64> = (0..n)
        .map(|i| match sec.delta_min + span * i as f64 / (n - 1) as f64 {
            _ if i == n - 1 => sec.delta_max,
            d if d.abs() < 1e-12 * span => 0.0,
            d => d,
        })
        .collect();

    let mut region_rows = Vec::new();
    let mut regions = Vec::new();
    for &alpha in &sec.alphas {
        let p = ModelParams { alpha, ..cfg.model };
        let crit = p.decay_region(&deltas)?;
        for &(a, b) in &crit.decay_intervals {
            region_rows.push(vec![fmt_f64(alpha), fmt_f64(a), fmt_f64(b)]);
        }
        regions.push(json!({"alpha": alpha, "intervals": crit.decay_intervals}));
    }
    rec.lap("regions");

    let jobs: Vec<(f64, f64)> = sec
        .alphas
        .iter()
        .flat_map(|&a| deltas.iter().map(move |&d| (a, d)))
        .collect();
    let points: Vec<MapPoint> = pool.install(|| {
        jobs.par_iter()
            .map(|&(a, d)| map_point(cfg, a, d, !sec.analytic_only))
            .collect()
    });
    rec.lap("simulations");

    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|m| {
            vec![
                fmt_f64(m.alpha),
                fmt_f64(m.delta),
                m.admissible.to_string(),
                m.holds.to_string(),
                opt(m.chi),
                opt(m.fitted),
                m.status.clone(),
            ]
        })
        .collect();
    rec.write(
        "decay_map.csv",
        &csv_table(
            &strings(&["alpha", "delta", "admissible", "condition_holds", "chi", "fitted_rate", "status"]),
            &rows,
        )?,
    )?;
    rec.write(
        "decay_regions.csv",
        &csv_table(&strings(&["alpha", "delta_start", "delta_end"]), &region_rows)?,
    )?;

    // the bound is a lower bound; allow 5% fit noise
    let shortfalls: Vec<_> = points
        .iter()
        .filter_map(|m| match (m.chi, m.fitted) {
            (Some(c), Some(f)) if f < 0.95 * c => Some(json!({"alpha": m.alpha, "delta": m.delta, "chi": c, "fitted": f})),
            _ => None,
        })
        .collect();
    for m in points.iter().filter(|m| m.status.starts_with("failed")) {
        rec.manifest
            .warnings
            .push(format!("α = {}, δ = {}: {}", m.alpha, m.delta, m.status));
    }
    rec.result("delta_star", cfg.model.delta_star());
    rec.result("delta_d", cfg.model.delta_d());
    rec.result("regions", regions);
    rec.result("rate_shortfalls", shortfalls);
    Ok(())
}
