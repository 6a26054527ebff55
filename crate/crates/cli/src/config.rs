//! Run configuration: TOML (or JSON) file, optional `--set key=value`
//! overrides, strict key checking.

use crate::CliError;
use herdlab_core::steady::StepConfig;
use herdlab_core::time::TimeStepperConfig;
use herdlab_core::{Grid, ModelParams};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Predict,
    Simulate,
    Continue,
    Switch,
    Homotopy,
    DecayMap,
}

impl Scenario {
    /// Config sections this scenario reads besides `model`, `time` and
    /// `continuation`.
    fn sections(self) -> &'static [&'static str] {
        match self {
            Scenario::Predict => &["predict"],
            Scenario::Simulate => &["simulate"],
            Scenario::Continue => &["continue"],
            Scenario::Switch => &["switch"],
            Scenario::Homotopy => &["switch", "homotopy"],
            Scenario::DecayMap => &["decay_map"],
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Predict => "predict",
            Scenario::Simulate => "simulate",
            Scenario::Continue => "continue",
            Scenario::Switch => "switch",
            Scenario::Homotopy => "homotopy",
            Scenario::DecayMap => "decay_map",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    /// Modes `1..=modes` are tabulated.
    pub modes: usize,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection { modes: 9 }
    }
}

/// Initial state `u₁ = ū₁ + a cos(mπx/l) + noise`, `u₂ = u₂* + b cos(mπx/l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub amplitude: f64,
    pub u2_amplitude: f64,
    pub mode: usize,
    /// Uniform noise of this half-width on `u₁`, drawn from `seed`.
    pub noise: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            amplitude: 0.1,
            u2_amplitude: 0.0,
            mode: 1,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinueSection {
    /// δ range of the homogeneous branch; the run starts at `model.delta`.
    pub range: [f64; 2],
}

impl Default for ContinueSection {
    fn default() -> Self {
        ContinueSection { range: [-25.0, 0.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Plus,
    Minus,
    Both,
}

impl Side {
    pub fn signs(self) -> &'static [f64] {
        match self {
            Side::Plus => &[1.0],
            Side::Minus => &[-1.0],
            Side::Both => &[1.0, -1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchSection {
    /// δ range scanned on the homogeneous branch, starting at `model.delta`.
    pub detect_range: [f64; 2],
    /// Mode index of the branch point to switch at.
    pub mode: usize,
    pub side: Side,
    /// δ range for the switched branch.
    pub branch_range: [f64; 2],
    /// Solution profiles are written at these δ.
    pub profiles_at: Vec<f64>,
}

impl Default for SwitchSection {
    fn default() -> Self {
        SwitchSection {
            detect_range: [-25.0, 0.0],
            mode: 2,
            side: Side::Both,
            branch_range: [-40.0, 0.0],
            profiles_at: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomotopySection {
    /// δ held fixed while ρ is continued to 0.
    pub at_delta: f64,
}

impl Default for HomotopySection {
    fn default() -> Self {
        HomotopySection { at_delta: -3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayMapSection {
    pub delta_min: f64,
    pub delta_max: f64,
    pub n_delta: usize,
    pub alphas: Vec<f64>,
    /// Cosine perturbation of `u₁` used for the measured rate.
    pub amplitude: f64,
    /// Skip the simulations and only evaluate the decay condition.
    pub analytic_only: bool,
}

impl Default for DecayMapSection {
    fn default() -> Self {
        DecayMapSection {
            delta_min: -3.9,
            delta_max: 2.0,
            n_delta: 60,
            alphas: vec![0.2, 1.0, 10.0],
            amplitude: 0.1,
            analytic_only: false,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("herdlab-out")
}

fn default_n_cells() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_cells")]
    pub n_cells: usize,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub time: TimeStepperConfig,
    #[serde(default)]
    pub continuation: StepConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predict: Option<PredictSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, rename = "continue", skip_serializing_if = "Option::is_none")]
    pub continue_: Option<ContinueSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch: Option<SwitchSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homotopy: Option<HomotopySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_map: Option<DecayMapSection>,
}

impl RunConfig {
    pub fn new(scenario: Scenario) -> Self {
        RunConfig {
            scenario,
            output_dir: default_output_dir(),
            seed: 0,
            n_cells: default_n_cells(),
            model: ModelParams::default(),
            time: TimeStepperConfig::default(),
            continuation: StepConfig::default(),
            predict: None,
            simulate: None,
            continue_: None,
            switch: None,
            homotopy: None,
            decay_map: None,
        }
    }

    pub fn predict_section(&self) -> PredictSection {
        self.predict.clone().unwrap_or_default()
    }

    pub fn simulate_section(&self) -> SimulateSection {
        self.simulate.clone().unwrap_or_default()
    }

    pub fn continue_section(&self) -> ContinueSection {
        self.continue_.clone().unwrap_or_default()
    }

    pub fn switch_section(&self) -> SwitchSection {
        self.switch.clone().unwrap_or_default()
    }

    pub fn homotopy_section(&self) -> HomotopySection {
        self.homotopy.clone().unwrap_or_default()
    }

    pub fn decay_map_section(&self) -> DecayMapSection {
        self.decay_map.clone().unwrap_or_default()
    }

    /// Checks every numeric field the scenario will use.
    pub fn validate(&self) -> Result<(), CliError> {
        let present = [
            ("predict", self.predict.is_some()),
            ("simulate", self.simulate.is_some()),
            ("continue", self.continue_.is_some()),
            ("switch", self.switch.is_some()),
            ("homotopy", self.homotopy.is_some()),
            ("decay_map", self.decay_map.is_some()),
        ];
        for (name, is_set) in present {
            if is_set && !self.scenario.sections().contains(&name) {
                return Err(invalid(format!(
                    "section [{name}] does not belong to scenario {}",
                    self.scenario
                )));
            }
        }
        let core = |e: herdlab_core::HerdError| invalid(e.to_string());
        self.model.validate().map_err(core)?;
        if self.output_dir.as_os_str().is_empty() {
            return Err(invalid("output_dir must not be empty".into()));
        }
        let grid = || Grid::new(self.n_cells, self.model.length).map(|_| ()).map_err(core);

        match self.scenario {
            Scenario::Predict => {
                if self.predict_section().modes == 0 {
                    return Err(invalid("predict.modes must be >= 1".into()));
                }
            }
            Scenario::Simulate => {
                grid()?;
                self.time.validate(&self.model).map_err(core)?;
                let s = self.simulate_section();
                if !(s.noise >= 0.0) || !s.amplitude.is_finite() || !s.u2_amplitude.is_finite() {
                    return Err(invalid("simulate: amplitudes must be finite and noise >= 0".into()));
                }
            }
            Scenario::Continue => {
                grid()?;
                self.continuation.validate().map_err(core)?;
                in_range("continue.range", self.continue_section().range, self.model.delta)?;
            }
            Scenario::Switch | Scenario::Homotopy => {
                grid()?;
                self.continuation.validate().map_err(core)?;
                let s = self.switch_section();
                in_range("switch.detect_range", s.detect_range, self.model.delta)?;
                ordered("switch.branch_range", s.branch_range)?;
                if s.mode == 0 {
                    return Err(invalid("switch.mode must be >= 1".into()));
                }
                if self.scenario == Scenario::Homotopy {
                    if !(self.model.rho > 0.0) {
                        return Err(invalid("homotopy needs model.rho > 0".into()));
                    }
                    if s.side == Side::Both {
                        return Err(invalid("homotopy follows one side: switch.side must be plus or minus".into()));
                    }
                    in_range("switch.branch_range", s.branch_range, self.homotopy_section().at_delta)?;
                }
            }
            Scenario::DecayMap => {
                grid()?;
                let d = self.decay_map_section();
                ordered("decay_map delta range", [d.delta_min, d.delta_max])?;
                if d.n_delta < 2 {
                    return Err(invalid("decay_map.n_delta must be >= 2".into()));
                }
                if d.alphas.is_empty() || d.alphas.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                    return Err(invalid("decay_map.alphas must be a non-empty list of positive values".into()));
                }
                // δ is swept, so check the solver settings at an admissible one
                let probe = ModelParams { delta: 1.0, ..self.model };
                self.time.validate(&probe).map_err(core)?;
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| invalid(format!("cannot serialize config: {e}")))
    }
}

fn invalid(msg: String) -> CliError {
    CliError::Validation(msg)
}

fn ordered(name: &str, r: [f64; 2]) -> Result<(), CliError> {
    if r[0] < r[1] && r.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be an increasing pair of finite values, got {r:?}")))
    }
}

fn in_range(name: &str, r: [f64; 2], v: f64) -> Result<(), CliError> {
    ordered(name, r)?;
    if r[0] <= v && v <= r[1] {
        Ok(())
    } else {
        Err(invalid(format!("{v} lies outside {name} = {r:?}")))
    }
}

/// Parses `text` as JSON when `json` is set, TOML otherwise. Syntax errors
/// carry line and column.
pub fn parse_tree(text: &str, json: bool) -> Result<Value, CliError> {
    if json {
        serde_json::from_str(text).map_err(|e| invalid(format!("JSON parse error: {e}")))
    } else {
        let table: toml::Table = toml::from_str(text).map_err(|e| invalid(format!("TOML parse error: {e}")))?;
        serde_json::to_value(table).map_err(|e| invalid(e.to_string()))
    }
}

/// Applies `key.path=value`; the value is read as a TOML literal and falls
/// back to a bare string.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("--set expects key=value, got {assignment:?}")))?;
    let (key, raw) = (key.trim(), raw.trim());
    if key.is_empty() {
        return Err(invalid(format!("--set {assignment:?}: empty key")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").unwrap()).map_err(|e| invalid(e.to_string()))?,
        Err(_) => Value::String(raw.to_string()),
    };
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| invalid(format!("--set {key}: {} is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!()
}

/// Builds a validated config from a parsed tree. A missing `scenario` is
/// filled from `scenario`; a conflicting one is an error.
pub fn from_tree(mut tree: Value, scenario: Option<Scenario>, overrides: &[String]) -> Result<RunConfig, CliError> {
    if !tree.is_object() {
        return Err(invalid("config root must be a table".into()));
    }
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    if let Some(s) = scenario {
        let want = serde_json::to_value(s).unwrap();
        let obj = tree.as_object_mut().unwrap();
        match obj.get("scenario") {
            None => {
                obj.insert("scenario".into(), want);
            }
            Some(v) if *v == want => {}
            Some(v) => {
                return Err(invalid(format!("config is for scenario {v}, but the command is {s}")));
            }
        }
    }
    let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| invalid(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, overrides and validates a config file. Files ending in `.json` are
/// read as JSON, everything else as TOML.
pub fn load_config(path: &Path, scenario: Option<Scenario>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let tree = parse_tree(&text, json).map_err(|e| match e {
        CliError::Validation(m) => invalid(format!("{}: {m}", path.display())),
        other => other,
    })?;
    from_tree(tree, scenario, overrides)
}

pub fn save_config(cfg: &RunConfig, path: &Path) -> Result<(), CliError> {
    let text = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::to_string_pretty(cfg).map_err(|e| invalid(e.to_string()))?
    } else {
        cfg.to_toml()?
    };
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
