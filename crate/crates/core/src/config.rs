//! JSON scenario documents.
//!
//! ```json
//! {
//!   "grid": {"min_salary": 20, "max_salary": 3000, "levels": 100,
//!            "spacing": "uniform", "unit_scale": 1000},
//!   "classes": [{"alpha": 215, "beta": 20.5, "gamma": 5, "count": 950000}],
//!   "dynamics": {"mode": "agent", "seed": 42, "epochs_max": 2000,
//!                "stationarity": {"window": 100, "threshold": 0.001}},
//!   "outputs": {"directory": "out", "snapshot_cadence": 10}
//! }
//! ```
//!
//! Salaries are given in units of `unit_scale` dollars and converted to
//! kilodollars, the unit the class parameters refer to. A run manifest, which
//! embeds its config under `"config"`, is accepted as well.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{
    ClassGroup, ClassParams, DynamicsSettings, OfferSampling, SalaryGrid, Scenario, Spacing,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub grid: GridConfig,
    pub classes: Vec<ClassConfig>,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
    /// Salary budget, in the same units as the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min_salary: f64,
    pub max_salary: f64,
    pub levels: usize,
    #[serde(default = "default_spacing")]
    pub spacing: Spacing,
    /// Dollars per configured salary unit.
    #[serde(default = "default_unit_scale")]
    pub unit_scale: f64,
}

fn default_spacing() -> Spacing {
    Spacing::Uniform
}

fn default_unit_scale() -> f64 {
    1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Agent,
    MeanField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs_max: usize,
    #[serde(default)]
    pub stationarity: StationarityConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offer_sampling: Option<OfferSampling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub firing_hazard: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shards: Option<usize>,
}

fn default_seed() -> u64 {
    1
}

fn default_epochs() -> usize {
    DynamicsSettings::default().epochs_max
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Agent,
            seed: default_seed(),
            epochs_max: default_epochs(),
            stationarity: StationarityConfig::default(),
            dt: None,
            tolerance: None,
            max_steps: None,
            offer_sampling: None,
            firing_hazard: None,
            shards: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarityConfig {
    pub window: usize,
    pub threshold: f64,
}

impl Default for StationarityConfig {
    fn default() -> Self {
        let d = DynamicsSettings::default();
        Self {
            window: d.window,
            threshold: d.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_cadence")]
    pub snapshot_cadence: usize,
}

fn default_directory() -> String {
    "out".into()
}

fn default_cadence() -> usize {
    DynamicsSettings::default().snapshot_cadence
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            snapshot_cadence: default_cadence(),
        }
    }
}

/// A rejected config: the offending field and, when known, its line and column.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: Option<String>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}")?;
            if let Some(col) = self.column {
                write!(f, ", column {col}")?;
            }
            write!(f, ": ")?;
        }
        if let Some(field) = &self.field {
            write!(f, "{field}: ")?;
        }
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn field(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: Some(path.into()),
            line: None,
            column: None,
            message: message.into(),
        }
    }

    fn from_serde(e: &serde_json::Error) -> Self {
        let line = (e.line() > 0).then_some(e.line());
        let column = (e.column() > 0).then_some(e.column());
        Self {
            field: None,
            line,
            column,
            message: strip_position(&e.to_string()),
        }
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// Line of the `occurrence`-th (0-based) `"key"` in `text`, 1-based.
fn locate(text: &str, key: &str, occurrence: usize) -> Option<usize> {
    let needle = format!("\"{key}\"");
    let (pos, _) = text.match_indices(&needle).nth(occurrence)?;
    Some(text[..pos].matches('\n').count() + 1)
}

impl Config {
    /// Parses a config document, or the config embedded in a run manifest.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg = match serde_json::from_str::<Config>(text) {
            Ok(c) => c,
            Err(e) => {
                let embedded = serde_json::from_str::<serde_json::Value>(text)
                    .ok()
                    .and_then(|v| v.get("config").cloned());
                match embedded {
                    Some(v) => serde_json::from_value(v).map_err(|e| {
                        let mut err = ConfigError::from_serde(&e);
                        err.field = Some("config".into());
                        err
                    })?,
                    None => return Err(ConfigError::from_serde(&e)),
                }
            }
        };
        if let Err(mut e) = cfg.validate() {
            if let Some(field) = &e.field {
                let key = field.rsplit('.').next().unwrap_or(field);
                let key = key.split('[').next().unwrap_or(key);
                let occurrence = field
                    .strip_prefix("classes[")
                    .and_then(|r| r.split(']').next())
                    .and_then(|i| i.parse().ok())
                    .filter(|_| field.contains("]."))
                    .unwrap_or(0);
                e.line = locate(text, key, occurrence);
            }
            return Err(e);
        }
        Ok(cfg)
    }

    /// Field-level checks beyond the document's shape.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario().map(|_| ())
    }

    /// Salary grid in kilodollars.
    pub fn salary_grid(&self) -> Result<SalaryGrid, ConfigError> {
        let g = &self.grid;
        if !(g.unit_scale.is_finite() && g.unit_scale > 0.0) {
            return Err(ConfigError::field("grid.unit_scale", "must be > 0"));
        }
        if !(g.min_salary.is_finite() && g.min_salary > 0.0) {
            return Err(ConfigError::field("grid.min_salary", "must be > 0"));
        }
        if !(g.max_salary.is_finite() && g.max_salary > g.min_salary) {
            return Err(ConfigError::field("grid.max_salary", "must exceed grid.min_salary"));
        }
        if g.levels < 2 {
            return Err(ConfigError::field("grid.levels", "need at least 2 levels"));
        }
        let k = g.unit_scale / 1000.0;
        SalaryGrid::with_spacing(g.min_salary * k, g.max_salary * k, g.levels, g.spacing)
            .map_err(|e| ConfigError::field("grid", e.to_string()))
    }

    /// Budget in kilodollars.
    pub fn budget_kusd(&self) -> Option<f64> {
        self.budget.map(|b| b * self.grid.unit_scale / 1000.0)
    }

    pub fn to_settings(&self) -> DynamicsSettings {
        let d = &self.dynamics;
        let def = DynamicsSettings::default();
        DynamicsSettings {
            dt: d.dt.unwrap_or(def.dt),
            tolerance: d.tolerance.unwrap_or(def.tolerance),
            max_steps: d.max_steps.unwrap_or(def.max_steps),
            epochs_max: d.epochs_max,
            window: d.stationarity.window,
            threshold: d.stationarity.threshold,
            offer_sampling: d.offer_sampling.unwrap_or(def.offer_sampling),
            firing_hazard: d.firing_hazard.unwrap_or(def.firing_hazard),
            shards: d.shards.unwrap_or(def.shards),
            snapshot_cadence: self.outputs.snapshot_cadence,
        }
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let grid = self.salary_grid()?;
        if self.classes.is_empty() {
            return Err(ConfigError::field("classes", "need at least one class"));
        }
        let mut classes = Vec::with_capacity(self.classes.len());
        for (j, c) in self.classes.iter().enumerate() {
            for (name, v) in [("alpha", c.alpha), ("beta", c.beta), ("gamma", c.gamma)] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(ConfigError::field(
                        format!("classes[{j}].{name}"),
                        format!("must be finite and > 0, got {v}"),
                    ));
                }
            }
            if c.count == 0 {
                return Err(ConfigError::field(format!("classes[{j}].count"), "must be >= 1"));
            }
            classes.push(ClassGroup {
                params: ClassParams::new(c.alpha, c.beta, c.gamma)
                    .map_err(|e| ConfigError::field(format!("classes[{j}]"), e.to_string()))?,
                count: c.count,
            });
        }
        if let Some(b) = self.budget {
            if !(b.is_finite() && b > 0.0) {
                return Err(ConfigError::field("budget", "must be > 0"));
            }
        }
        if self.dynamics.seed == 0 {
            return Err(ConfigError::field("dynamics.seed", "must be >= 1"));
        }
        let d = &self.dynamics;
        let checks: [(&str, bool, &str); 7] = [
            ("dynamics.stationarity.window", d.stationarity.window >= 1, "must be >= 1"),
            (
                "dynamics.stationarity.threshold",
                d.stationarity.threshold.is_finite() && d.stationarity.threshold >= 0.0,
                "must be >= 0",
            ),
            ("dynamics.dt", d.dt.is_none_or(|v| v.is_finite() && v > 0.0), "must be > 0"),
            (
                "dynamics.tolerance",
                d.tolerance.is_none_or(|v| v.is_finite() && v > 0.0),
                "must be > 0",
            ),
            (
                "dynamics.firing_hazard",
                d.firing_hazard.is_none_or(|v| (0.0..=1.0).contains(&v)),
                "must lie in [0, 1]",
            ),
            ("dynamics.shards", d.shards.is_none_or(|v| v >= 1), "must be >= 1"),
            ("outputs.snapshot_cadence", self.outputs.snapshot_cadence >= 1, "must be >= 1"),
        ];
        if let Some((field, _, msg)) = checks.iter().find(|c| !c.1) {
            return Err(ConfigError::field(*field, *msg));
        }
        let scenario = Scenario {
            grid,
            classes,
            budget_kusd: self.budget_kusd(),
            seed: self.dynamics.seed,
            dynamics: self.to_settings(),
        };
        scenario
            .validate()
            .map_err(|e| ConfigError::field("classes", e.to_string()))?;
        Ok(scenario)
    }
}
