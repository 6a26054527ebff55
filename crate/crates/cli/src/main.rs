use clap::{Args, Parser, Subcommand};
use herdlab_cli::config::{from_tree, load_config, Scenario};
use herdlab_cli::{compare_csv, run_scenario, CliError, Tolerances};
use std::path::PathBuf;
use std::process::ExitCode;

/// Bifurcation and entropy-decay experiments for the 1-D herding model.
#[derive(Parser)]
#[command(name = "herdlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set model.delta=-20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set output_dir=DIR`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form branch points δ_b^n.
    Predict(RunArgs),
    /// Time integration from a perturbed homogeneous state.
    Simulate(RunArgs),
    /// Continue the homogeneous branch in δ and detect branch points.
    Continue(RunArgs),
    /// Switch onto the branch emanating from a detected branch point.
    Switch(RunArgs),
    /// Continue ρ to 0 on a switched branch at fixed δ.
    Homotopy(RunArgs),
    /// Decay condition and measured decay rates over a (δ, α) grid.
    DecayMap(RunArgs),
    /// Compare two CSV files cell by cell.
    Compare {
        #[arg(long)]
        produced: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 5e-3)]
        abs: f64,
        #[arg(long, default_value_t = 0.0)]
        rel: f64,
        /// Write the full report as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn run(args: RunArgs, scenario: Scenario) -> Result<(), CliError> {
    let mut set = args.set;
    if let Some(dir) = args.output_dir {
        set.push(format!("output_dir={:?}", dir.display().to_string()));
    }
    let cfg = match &args.config {
        Some(path) => load_config(path, Some(scenario), &set)?,
        None => from_tree(serde_json::json!({}), Some(scenario), &set)?,
    };
    let m = run_scenario(&cfg)?;
    println!(
        "{}: {} artifacts in {}",
        m.scenario,
        m.artifacts.len(),
        cfg.output_dir.display()
    );
    for (k, v) in &m.stop_reasons {
        println!("  stop {k}: {}", v.as_str().unwrap_or_default());
    }
    Ok(())
}

fn compare(produced: PathBuf, reference: PathBuf, tol: Tolerances, report: Option<PathBuf>) -> Result<(), CliError> {
    let r = compare_csv(&produced, &reference, tol)?;
    if let Some(path) = report {
        let text = serde_json::to_string_pretty(&r).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(&path, text)?;
    }
    println!(
        "{} cells compared, max |difference| {:.3e}",
        r.cells, r.max_abs_difference
    );
    for v in &r.violations {
        println!(
            "  row {} column {}: {} vs {} (|diff| {:.3e})",
            v.row, v.column, v.produced, v.reference, v.difference
        );
    }
    if r.passed() {
        Ok(())
    } else {
        Err(CliError::Comparison(format!("{} cells outside tolerance", r.violations.len())))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Predict(a) => run(a, Scenario::Predict),
        Command::Simulate(a) => run(a, Scenario::Simulate),
        Command::Continue(a) => run(a, Scenario::Continue),
        Command::Switch(a) => run(a, Scenario::Switch),
        Command::Homotopy(a) => run(a, Scenario::Homotopy),
        Command::DecayMap(a) => run(a, Scenario::DecayMap),
        Command::Compare {
            produced,
            reference,
            abs,
            rel,
            report,
        } => compare(produced, reference, Tolerances { abs, rel }, report),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("herdlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
