//! Machine-readable run reports and trajectory CSV.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certificates::{CertificateReport, MonotonicityVerdict};
use crate::integrator::Trajectory;
use crate::model::CooperativityCheck;
use crate::oracles::{ProbeRow, SignCheck};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Error => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub samples: usize,
    pub final_time: f64,
    #[serde(with = "crate::serde_float::vec")]
    pub final_state: Vec<f64>,
    #[serde(with = "crate::serde_float::scalar")]
    pub trace_integral: f64,
    pub breakpoints: Vec<f64>,
}

impl SolveSummary {
    pub fn of(traj: &Trajectory) -> Self {
        Self {
            samples: traj.len(),
            final_time: traj.final_time(),
            final_state: traj.final_state().iter().copied().collect(),
            trace_integral: *traj.trace_integrals().last().expect("nonempty trajectory"),
            breakpoints: traj.breakpoints().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    /// `‖Φ − Φ_ref‖∞ / ‖Φ_ref‖∞`.
    #[serde(with = "crate::serde_float::scalar")]
    pub relative_error: f64,
    pub threshold: f64,
    /// Sign of `exp((t_end − t0) A)` for constant systems.
    pub sign: Option<SignCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonProbe {
    pub rows: Vec<ProbeRow>,
    pub nonincreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckOutcome {
    Metzler(CooperativityCheck),
    M1(MonotonicityVerdict),
    M2(MonotonicityVerdict),
    Certificate(CertificateReport),
    OracleCompare(OracleComparison),
    EpsilonProbe(EpsilonProbe),
    Solve(SolveSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub passed: bool,
    pub outcome: CheckOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub scenario: Option<String>,
    pub status: Status,
    pub exit_code: i32,
    pub error: Option<String>,
    pub checks: Vec<CheckRecord>,
}

impl RunReport {
    pub fn new(command: &str, scenario: Option<&Path>) -> Self {
        Self {
            command: command.to_string(),
            scenario: scenario.map(|p| p.display().to_string()),
            status: Status::Pass,
            exit_code: 0,
            error: None,
            checks: Vec::new(),
        }
    }

    pub fn push(&mut self, check: &str, passed: bool, outcome: CheckOutcome) {
        self.checks.push(CheckRecord {
            check: check.to_string(),
            passed,
            outcome,
        });
        if !passed && self.status == Status::Pass {
            self.set_status(Status::Fail);
        }
    }

    pub fn fail_with(&mut self, error: impl ToString) {
        self.error = Some(error.to_string());
        self.set_status(Status::Error);
    }

    fn set_status(&mut self, status: Status) {
        self.status = status;
        self.exit_code = status.exit_code();
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Writes `t, x_1..x_n, xi, bound, margin` with 17 significant digits.
pub fn write_trajectory_csv<W: Write>(
    out: W,
    traj: &Trajectory,
    cert: &CertificateReport,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = traj.dimension();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend(["xi", "bound", "margin"].map(String::from));
    w.write_record(&header)?;
    let fmt = |v: f64| format!("{v:.16e}");
    for (k, x) in traj.states().iter().enumerate() {
        let mut row = vec![fmt(traj.times()[k])];
        row.extend(x.iter().map(|&v| fmt(v)));
        row.extend([cert.xi[k], cert.bound[k], cert.margin[k]].map(fmt));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
