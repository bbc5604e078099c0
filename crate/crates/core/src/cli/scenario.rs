//! Scenario files: one JSON document per verification run.
//!
//! ```json
//! {
//!   "window": { "a": -1.0, "t0": 0.0, "b": 2.0 },
//!   "system": { "type": "constant", "matrix": [[-1.0, 0.0], [0.0, -2.0]] },
//!   "x0": [1.0, 1.0],
//!   "t_end": 1.0,
//!   "stepper": { "method": "rk45", "rel_tol": 1e-9, "abs_tol": 1e-12 },
//!   "tolerances": { "abs_tol": 1e-9, "strict_tol": 1e-12 },
//!   "checks": ["m2", "certificate"]
//! }
//! ```
//!
//! Matrices are row-major arrays of rows. System variants:
//!
//! * `{"type": "constant", "matrix": M}`
//! * `{"type": "piecewise_constant", "breakpoints": [..], "pieces": [M, ..]}`
//! * `{"type": "polynomial", "coefficients": P}` where `P[i][j]` lists the
//!   coefficients of entry `(i, j)`, lowest degree first
//! * `{"type": "sampled_grid", "times": [..], "values": [M, ..]}`
//!
//! `x0` is either a vector or `{"generate": {"seed": S, "boundary_fraction": F,
//! "entry_scale": E, "stream": K}}`. `stepper`, `tolerances`, `checks`,
//! `epsilon_schedule` and `metzler_probe_points` are optional.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::generator::{Case, Generator, GeneratorConfig};
use crate::integrator::{Method, StepperConfig};
use crate::model::{CoefficientMatrix, MatrixBody, ProbePlan, TimeWindow, ToleranceProfile};
use crate::oracles::EpsilonSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckName {
    Metzler,
    M1,
    M2,
    Certificate,
    OracleCompare,
    EpsilonProbe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub a: f64,
    pub t0: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Constant {
        matrix: Vec<Vec<f64>>,
    },
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        pieces: Vec<Vec<Vec<f64>>>,
    },
    Polynomial {
        coefficients: Vec<Vec<Vec<f64>>>,
    },
    SampledGrid {
        times: Vec<f64>,
        values: Vec<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialDirective {
    pub seed: u64,
    pub stream: u64,
    pub boundary_fraction: f64,
    pub entry_scale: f64,
}

impl Default for InitialDirective {
    fn default() -> Self {
        Self {
            seed: 0,
            stream: 0,
            boundary_fraction: 0.0,
            entry_scale: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Vector(Vec<f64>),
    Generate { generate: InitialDirective },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepperSpec {
    Rk4 {
        h: f64,
        max_steps: Option<usize>,
    },
    Rk45 {
        rel_tol: Option<f64>,
        abs_tol: Option<f64>,
        initial_step: Option<f64>,
        min_step: Option<f64>,
        max_step: Option<f64>,
        max_steps: Option<usize>,
    },
}

impl StepperSpec {
    pub fn resolve(&self) -> StepperConfig {
        match *self {
            StepperSpec::Rk4 { h, max_steps } => StepperConfig {
                max_steps: max_steps.unwrap_or(StepperConfig::DEFAULT_MAX_STEPS),
                ..StepperConfig::rk4(h)
            },
            StepperSpec::Rk45 {
                rel_tol,
                abs_tol,
                initial_step,
                min_step,
                max_step,
                max_steps,
            } => {
                let base = StepperConfig::default();
                let Method::EmbeddedRk45 {
                    rel_tol: r,
                    abs_tol: a,
                    initial_step: i,
                    min_step: lo,
                    max_step: hi,
                } = base.method
                else {
                    unreachable!("default stepper is adaptive")
                };
                StepperConfig {
                    method: Method::EmbeddedRk45 {
                        rel_tol: rel_tol.unwrap_or(r),
                        abs_tol: abs_tol.unwrap_or(a),
                        initial_step: initial_step.unwrap_or(i),
                        min_step: min_step.unwrap_or(lo),
                        max_step: max_step.unwrap_or(hi),
                    },
                    max_steps: max_steps.unwrap_or(base.max_steps),
                }
            }
        }
    }

    pub fn from_config(cfg: &StepperConfig) -> Self {
        match cfg.method {
            Method::FixedRk4 { h } => StepperSpec::Rk4 {
                h,
                max_steps: Some(cfg.max_steps),
            },
            Method::EmbeddedRk45 {
                rel_tol,
                abs_tol,
                initial_step,
                min_step,
                max_step,
            } => StepperSpec::Rk45 {
                rel_tol: Some(rel_tol),
                abs_tol: Some(abs_tol),
                initial_step: Some(initial_step),
                min_step: Some(min_step),
                max_step: Some(max_step),
                max_steps: Some(cfg.max_steps),
            },
        }
    }
}

/// The scenario document as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub window: WindowSpec,
    pub system: SystemSpec,
    pub x0: InitialSpec,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stepper: Option<StepperSpec>,
    #[serde(default)]
    pub tolerances: ToleranceProfile,
    #[serde(default)]
    pub checks: Vec<CheckName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_schedule: Option<EpsilonSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metzler_probe_points: Option<usize>,
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub system: CoefficientMatrix,
    pub x0: DVector<f64>,
    pub t0: f64,
    pub t_end: f64,
    pub stepper: StepperConfig,
    pub tolerances: ToleranceProfile,
    pub checks: Vec<CheckName>,
    pub schedule: EpsilonSchedule,
    pub probe: ProbePlan,
}

/// Why a scenario could not be loaded. Every variant maps to exit status 2.
#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(#[from] Error),
}

impl ScenarioError {
    /// Parse failures exit without writing a report.
    pub fn is_parse_failure(&self) -> bool {
        matches!(self, ScenarioError::Io { .. } | ScenarioError::Parse(_))
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, Error> {
    let n = rows.len();
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::InvalidMatrix(format!(
            "{what} must be square: {n} rows but a row of length {}",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows_from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl SystemSpec {
    pub fn build(&self, window: TimeWindow) -> Result<CoefficientMatrix, Error> {
        match self {
            SystemSpec::Constant { matrix } => {
                CoefficientMatrix::constant(window, matrix_from_rows(matrix, "matrix")?)
            }
            SystemSpec::PiecewiseConstant {
                breakpoints,
                pieces,
            } => {
                let pieces = pieces
                    .iter()
                    .enumerate()
                    .map(|(k, p)| matrix_from_rows(p, &format!("piece {k}")))
                    .collect::<Result<_, _>>()?;
                CoefficientMatrix::piecewise_constant(window, breakpoints.clone(), pieces)
            }
            SystemSpec::Polynomial { coefficients } => {
                let n = coefficients.len();
                if let Some(r) = coefficients.iter().find(|r| r.len() != n) {
                    return Err(Error::InvalidMatrix(format!(
                        "polynomial table must be square: {n} rows but a row of length {}",
                        r.len()
                    )));
                }
                CoefficientMatrix::polynomial(window, n, coefficients.iter().flatten().cloned().collect())
            }
            SystemSpec::SampledGrid { times, values } => {
                let values = values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| matrix_from_rows(v, &format!("grid node {k}")))
                    .collect::<Result<_, _>>()?;
                CoefficientMatrix::sampled_grid(window, times.clone(), values)
            }
        }
    }

    pub fn from_matrix(a: &CoefficientMatrix) -> Self {
        match a.body() {
            MatrixBody::Constant(m) => SystemSpec::Constant {
                matrix: rows_from_matrix(m),
            },
            MatrixBody::PiecewiseConstant {
                breakpoints,
                pieces,
            } => SystemSpec::PiecewiseConstant {
                breakpoints: breakpoints.clone(),
                pieces: pieces.iter().map(rows_from_matrix).collect(),
            },
            MatrixBody::PolynomialEntries { coefficients } => {
                let n = a.dimension();
                SystemSpec::Polynomial {
                    coefficients: coefficients.chunks(n).map(|row| row.to_vec()).collect(),
                }
            }
            MatrixBody::SampledGrid { times, values } => SystemSpec::SampledGrid {
                times: times.clone(),
                values: values.iter().map(rows_from_matrix).collect(),
            },
        }
    }
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Scenario document reproducing a generated case.
    pub fn from_case(case: &Case, stepper: &StepperConfig, tolerances: ToleranceProfile, checks: Vec<CheckName>) -> Self {
        let w = case.system.window();
        ScenarioFile {
            window: WindowSpec {
                a: w.a(),
                t0: case.t0,
                b: w.b(),
            },
            system: SystemSpec::from_matrix(&case.system),
            x0: InitialSpec::Vector(case.x0.iter().copied().collect()),
            t_end: case.t_end,
            stepper: Some(StepperSpec::from_config(stepper)),
            tolerances,
            checks,
            epsilon_schedule: None,
            metzler_probe_points: None,
        }
    }

    /// Validates the document. `seed_override` replaces the seed of a
    /// generated initial state.
    pub fn resolve(&self, seed_override: Option<u64>) -> Result<ScenarioSpec, Error> {
        let window = TimeWindow::new(self.window.a, self.window.t0, self.window.b)?;
        let system = self.system.build(window)?;
        let n = system.dimension();
        let x0 = match &self.x0 {
            InitialSpec::Vector(v) => DVector::from_vec(v.clone()),
            InitialSpec::Generate { generate } => {
                let cfg = GeneratorConfig {
                    seed: seed_override.unwrap_or(generate.seed),
                    boundary_fraction: generate.boundary_fraction,
                    entry_scale: generate.entry_scale,
                    ..GeneratorConfig::default()
                };
                Generator::stream(cfg, generate.stream)?.gen_initial(n)
            }
        };
        if x0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x0.len(),
            });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("x0".into()));
        }
        let t0 = window.t0();
        if !(self.t_end > t0 && self.t_end < window.b()) {
            return Err(Error::InvalidConfig(format!(
                "t_end = {} must satisfy t0 < t_end < b ({t0}, {})",
                self.t_end,
                window.b()
            )));
        }
        let stepper = self.stepper.map(|s| s.resolve()).unwrap_or_default();
        stepper.validate()?;
        self.tolerances.validate()?;
        let probe = match self.metzler_probe_points {
            Some(0) => return Err(Error::InvalidConfig("metzler_probe_points must be positive".into())),
            Some(points) => ProbePlan { points },
            None => ProbePlan::default(),
        };
        Ok(ScenarioSpec {
            system,
            x0,
            t0,
            t_end: self.t_end,
            stepper,
            tolerances: self.tolerances,
            checks: self.checks.clone(),
            schedule: self.epsilon_schedule.clone().unwrap_or_default(),
            probe,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{BodyKind, BodyMix};

    const DIAGONAL: &str = r#"{
        "window": {"a": -1.0, "t0": 0.0, "b": 2.0},
        "system": {"type": "constant", "matrix": [[-1.0, 0.0], [0.0, -2.0]]},
        "x0": [1.0, 1.0],
        "t_end": 1.0,
        "checks": ["m2", "certificate"]
    }"#;

    #[test]
    fn parses_minimal_scenario() {
        let file: ScenarioFile = serde_json::from_str(DIAGONAL).unwrap();
        let spec = file.resolve(None).unwrap();
        assert_eq!(spec.system.dimension(), 2);
        assert_eq!(spec.checks, vec![CheckName::M2, CheckName::Certificate]);
        assert_eq!(spec.stepper, StepperConfig::default());
        assert_eq!(spec.tolerances, ToleranceProfile::default());
    }

    #[test]
    fn wrong_x0_length_is_a_dimension_mismatch() {
        let mut file: ScenarioFile = serde_json::from_str(DIAGONAL).unwrap();
        file.x0 = InitialSpec::Vector(vec![1.0, 2.0, 3.0]);
        assert!(matches!(file.resolve(None), Err(Error::DimensionMismatch { expected: 2, found: 3 })));
    }

    #[test]
    fn unknown_fields_and_checks_are_rejected() {
        let bad = DIAGONAL.replace("\"m2\"", "\"m3\"");
        assert!(serde_json::from_str::<ScenarioFile>(&bad).is_err());
        let bad = DIAGONAL.replace("\"t_end\"", "\"t_stop\"");
        assert!(serde_json::from_str::<ScenarioFile>(&bad).is_err());
    }

    #[test]
    fn all_body_variants_parse() {
        let text = r#"{
            "window": {"a": 0.0, "t0": 0.5, "b": 3.0},
            "system": {"type": "piecewise_constant", "breakpoints": [1.0],
                       "pieces": [[[-1.0]], [[-2.0]]]},
            "x0": [1.0], "t_end": 2.0
        }"#;
        let spec = serde_json::from_str::<ScenarioFile>(text).unwrap().resolve(None).unwrap();
        assert_eq!(spec.system.breakpoints(), &[1.0]);

        let text = r#"{
            "window": {"a": 0.0, "t0": 0.5, "b": 3.0},
            "system": {"type": "polynomial", "coefficients": [[[0.0, 0.0, 1.0], []], [[1.0], [-1.0]]]},
            "x0": [1.0, 0.0], "t_end": 2.0,
            "stepper": {"method": "rk4", "h": 0.01}
        }"#;
        let spec = serde_json::from_str::<ScenarioFile>(text).unwrap().resolve(None).unwrap();
        assert_eq!(spec.system.evaluate(2.0).unwrap()[(0, 0)], 4.0);
        assert_eq!(spec.stepper, StepperConfig::rk4(0.01));

        let text = r#"{
            "window": {"a": 0.0, "t0": 0.5, "b": 3.0},
            "system": {"type": "sampled_grid", "times": [0.0, 3.0], "values": [[[0.0]], [[3.0]]]},
            "x0": [1.0], "t_end": 2.0
        }"#;
        let spec = serde_json::from_str::<ScenarioFile>(text).unwrap().resolve(None).unwrap();
        assert_eq!(spec.system.evaluate(1.0).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn generated_initial_state_and_seed_override() {
        let text = DIAGONAL.replace("[1.0, 1.0],", r#"{"generate": {"seed": 5}},"#);
        let file: ScenarioFile = serde_json::from_str(&text).unwrap();
        let a = file.resolve(None).unwrap().x0;
        let b = file.resolve(None).unwrap().x0;
        let c = file.resolve(Some(6)).unwrap().x0;
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn generated_cases_round_trip_through_the_file_format() {
        for kind in [BodyKind::Constant, BodyKind::PiecewiseConstant, BodyKind::Polynomial, BodyKind::SampledGrid] {
            let cfg = GeneratorConfig {
                body_mix: BodyMix::only(kind),
                ..GeneratorConfig::default()
            };
            let case = Generator::new(cfg).unwrap().gen_case();
            let file = ScenarioFile::from_case(&case, &StepperConfig::default(), ToleranceProfile::default(), vec![]);
            let text = serde_json::to_string(&file).unwrap();
            let back: ScenarioFile = serde_json::from_str(&text).unwrap();
            let spec = back.resolve(None).unwrap();
            assert_eq!(spec.system, case.system);
            assert_eq!(spec.x0, case.x0);
            assert_eq!(spec.t_end, case.t_end);
        }
    }

    #[test]
    fn time_constraints_enforced() {
        let bad = DIAGONAL.replace("\"t_end\": 1.0", "\"t_end\": 2.0");
        let file: ScenarioFile = serde_json::from_str(&bad).unwrap();
        assert!(file.resolve(None).is_err());
        let bad = DIAGONAL.replace("\"t0\": 0.0", "\"t0\": 3.0");
        let file: ScenarioFile = serde_json::from_str(&bad).unwrap();
        assert!(matches!(file.resolve(None), Err(Error::InvalidWindow(_))));
    }
}
