//! TOML scenario files.
//!
//! ```toml
//! [model]
//! generator = [[-1.0, 1.0], [1.0, -1.0]]
//! initial_state = 1          # one-based
//! horizon = 1.0
//! S0 = 1.0                   # scalar or one entry per asset
//! x0 = 1.0
//!
//! [[model.regimes]]
//! b = 0.05                   # scalar or vector
//! sigma = 0.2                # scalar (σ·I), vector (diagonal) or matrix
//! jumps = { intensity = 1.0, marks = [{ x = -0.1, p = 0.4 }, { x = 0.15, p = 0.6 }] }
//!
//! [[model.regimes]]
//! b = -0.02
//! sigma = 0.5
//!
//! [utility]
//! kind = "power"             # log | power | exponential
//! p = 0.5
//!
//! [simulation]
//! paths = 100000
//! steps_per_unit_time = 512
//! seed = 2024
//!
//! [output]
//! directory = "out"
//! formats = ["csv", "json"]
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use super::CliError;
use crate::levy::{JumpMark, JumpSpec, LevyTriplet, SwitchingModel};
use crate::mmm::Utility;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVector {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ScalarOrVector {
    fn to_vector(&self, dim: usize) -> Vec<f64> {
        match self {
            ScalarOrVector::Scalar(v) => vec![*v; dim],
            ScalarOrVector::Vector(v) => v.clone(),
        }
    }

    fn len(&self) -> Option<usize> {
        match self {
            ScalarOrVector::Scalar(_) => None,
            ScalarOrVector::Vector(v) => Some(v.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkConfig {
    pub x: ScalarOrVector,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpsConfig {
    pub intensity: f64,
    #[serde(default)]
    pub marks: Vec<MarkConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub b: ScalarOrVector,
    pub sigma: MatrixSpec,
    pub jumps: Option<JumpsConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub regimes: Vec<RegimeConfig>,
    pub generator: Vec<Vec<f64>>,
    pub initial_state: usize,
    pub horizon: f64,
    #[serde(rename = "S0")]
    pub s0: ScalarOrVector,
    pub x0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtilityKind {
    Log,
    Power,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityConfig {
    pub kind: UtilityKind,
    pub p: Option<f64>,
}

fn default_paths() -> usize {
    10_000
}

fn default_steps() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_steps")]
    pub steps_per_unit_time: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { paths: default_paths(), steps_per_unit_time: default_steps(), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: default_directory(), formats: default_formats() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    pub utility: UtilityConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn utility(&self) -> Result<Utility, CliError> {
        match (self.utility.kind, self.utility.p) {
            (UtilityKind::Log, _) => Ok(Utility::Log),
            (UtilityKind::Exponential, _) => Ok(Utility::Exponential),
            (UtilityKind::Power, None) => Err(CliError::Parse("utility.p is required when utility.kind = \"power\"".into())),
            (UtilityKind::Power, Some(p)) => Utility::power(p).map_err(|e| CliError::Parse(format!("utility.p: {e}"))),
        }
    }

    /// Builds the model. Shapes are checked here; everything else is left
    /// to model validation so that all defects are reported together.
    pub fn model(&self) -> Result<SwitchingModel, CliError> {
        let m = &self.model;
        let dim = m
            .regimes
            .iter()
            .find_map(|r| r.b.len())
            .or_else(|| m.s0.len())
            .unwrap_or(1);
        let shape = |msg: String| CliError::Parse(msg);
        let mut regimes = Vec::with_capacity(m.regimes.len());
        for (j, r) in m.regimes.iter().enumerate() {
            let b = r.b.to_vector(dim);
            let sigma = match &r.sigma {
                MatrixSpec::Scalar(s) => DMatrix::from_diagonal_element(dim, dim, *s),
                MatrixSpec::Diagonal(v) => {
                    if v.len() != dim {
                        return Err(shape(format!("model.regimes[{}].sigma: expected {dim} entries, found {}", j + 1, v.len())));
                    }
                    DMatrix::from_diagonal(&DVector::from_vec(v.clone()))
                }
                MatrixSpec::Full(rows) => {
                    if rows.len() != dim || rows.iter().any(|row| row.len() != dim) {
                        return Err(shape(format!("model.regimes[{}].sigma: expected a {dim}x{dim} matrix", j + 1)));
                    }
                    DMatrix::from_fn(dim, dim, |i, k| rows[i][k])
                }
            };
            let jumps = match &r.jumps {
                None => JumpSpec::none(),
                Some(jc) => JumpSpec {
                    intensity: jc.intensity,
                    marks: jc
                        .marks
                        .iter()
                        .map(|mk| JumpMark { atom: DVector::from_vec(mk.x.to_vector(dim)), prob: mk.p })
                        .collect(),
                },
            };
            regimes.push(LevyTriplet::new(DVector::from_vec(b), sigma, jumps));
        }
        let n = m.generator.len();
        if m.generator.iter().any(|row| row.len() != n) {
            return Err(shape("model.generator: expected a square matrix".into()));
        }
        if m.initial_state == 0 || m.initial_state > n.max(1) {
            return Err(shape(format!("model.initial_state: {} is not in 1..={n}", m.initial_state)));
        }
        Ok(SwitchingModel {
            regimes,
            generator: DMatrix::from_fn(n, n, |i, k| m.generator[i][k]),
            initial_state: m.initial_state - 1,
            horizon: m.horizon,
            initial_prices: DVector::from_vec(m.s0.to_vector(dim)),
            initial_capital: m.x0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const R2: &str = r#"
[model]
generator = [[-1.0, 1.0], [1.0, -1.0]]
initial_state = 1
horizon = 1.0
S0 = 1.0
x0 = 1.0

[[model.regimes]]
b = 0.05
sigma = 0.2

[[model.regimes]]
b = -0.02
sigma = 0.5

[utility]
kind = "log"
"#;

    #[test]
    fn parses_reference_model() {
        let c = ScenarioConfig::parse(R2).unwrap();
        let m = c.model().unwrap();
        assert_eq!(m.n_regimes(), 2);
        assert_eq!(m.dim(), 1);
        assert_eq!(m.initial_state, 0);
        assert_eq!(m.regimes[1].sigma[(0, 0)], 0.5);
        assert_eq!(c.simulation, SimulationConfig::default());
        assert_eq!(c.utility().unwrap(), Utility::Log);
    }

    #[test]
    fn parses_vectors_jumps_and_matrices() {
        let text = r#"
[model]
generator = [[0.0]]
initial_state = 1
horizon = 2.0
S0 = [1.0, 2.0]
x0 = 1.0
[[model.regimes]]
b = [0.01, 0.02]
sigma = [[0.2, 0.0], [0.1, 0.3]]
jumps = { intensity = 0.5, marks = [{ x = [0.1, -0.1], p = 1.0 }] }
[utility]
kind = "power"
p = -1.0
[simulation]
paths = 10
seed = 3
"#;
        let c = ScenarioConfig::parse(text).unwrap();
        let m = c.model().unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.regimes[0].sigma[(1, 0)], 0.1);
        assert_eq!(m.regimes[0].jumps.marks[0].atom[1], -0.1);
        assert_eq!(c.simulation.steps_per_unit_time, 512);
        assert_eq!(c.utility().unwrap().gamma(), 0.5);
    }

    #[test]
    fn power_without_exponent_is_a_parse_error() {
        let c = ScenarioConfig::parse(&R2.replace("kind = \"log\"", "kind = \"power\"")).unwrap();
        assert!(matches!(c.utility(), Err(CliError::Parse(msg)) if msg.contains("utility.p")));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = ScenarioConfig::parse(&R2.replace("horizon = 1.0", "horizon = ")).unwrap_err();
        assert!(matches!(&err, CliError::Parse(msg) if msg.contains("line")), "{err}");
        let err = ScenarioConfig::parse(&R2.replace("horizon", "horizn")).unwrap_err();
        assert!(matches!(&err, CliError::Parse(msg) if msg.contains("horizn")), "{err}");
    }

    #[test]
    fn bad_initial_state_is_rejected() {
        let c = ScenarioConfig::parse(&R2.replace("initial_state = 1", "initial_state = 3")).unwrap();
        assert!(matches!(c.model(), Err(CliError::Parse(_))));
    }
}
