//! Positivity certificates on computed trajectories.
//!
//! For a cooperative system the product of coordinates `ξ(t) = ∏ xᵢ(t)`
//! satisfies `ξ' ≥ trace A(t) · ξ`, hence
//! `ξ(t) ≥ ξ(t₀) · exp(∫_{t₀}^{t} trace A)`. A solution starting in the open
//! orthant therefore cannot reach its boundary. This module evaluates both
//! sides of that bound on the accepted samples of a [`Trajectory`], checks
//! the differential form with finite differences, and verifies orthant
//! invariance of the closed and open orthants directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::model::{classify_orthant, is_cooperative, CoefficientMatrix, OrthantTag, ProbePlan, ToleranceProfile};

/// Constant in front of the `h²` term of the finite-difference slack.
pub const DIFFERENTIAL_SLACK_FACTOR: f64 = 10.0;

/// Smallest denominator used for relative margins.
pub const MARGIN_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CertifiedPositive,
    ViolationFound,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// `ξ(t) < ξ(t₀) exp(∫ trace A)` beyond tolerance.
    IntegratedBound,
    /// Finite-difference slope of `ξ` below `trace A · ξ` beyond slack.
    DifferentialForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub times: Vec<f64>,
    #[serde(with = "crate::serde_float::vec")]
    pub xi: Vec<f64>,
    #[serde(with = "crate::serde_float::vec")]
    pub bound: Vec<f64>,
    /// `(ξ − bound) / max(|bound|, floor)`; evaluated through logarithms
    /// where either side underflows.
    #[serde(with = "crate::serde_float::vec")]
    pub margin: Vec<f64>,
    pub verdict: Verdict,
    /// Earliest failing sample, not a refined crossing time.
    pub first_violation_time: Option<f64>,
    /// `(previous sample, failing sample)`.
    pub violation_bracket: Option<(f64, f64)>,
    pub violation_kind: Option<ViolationKind>,
    /// Samples whose integrated comparison was made in the log domain.
    pub log_domain_samples: usize,
}

impl CertificateReport {
    pub fn min_margin(&self) -> f64 {
        self.margin.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_margin(&self) -> f64 {
        self.margin.iter().map(|m| m.abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Property {
    M1,
    M2,
}

/// Outcome of checking invariance of the closed (`M1`) or open (`M2`) orthant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityVerdict {
    pub property: Property,
    pub holds: bool,
    pub worst_time: f64,
    pub worst_coordinate: usize,
    #[serde(with = "crate::serde_float::scalar")]
    pub worst_value: f64,
}

/// `ξ` at every accepted sample, multiplied left to right in coordinate order.
pub fn product_series(traj: &Trajectory) -> (Vec<f64>, Vec<f64>) {
    let xi = traj
        .states()
        .iter()
        .map(|x| x.iter().fold(1.0, |acc, v| acc * v))
        .collect();
    (traj.times().to_vec(), xi)
}

/// `ξ(t₀) · exp(I_k)` at every accepted sample.
pub fn trace_bound_series(traj: &Trajectory) -> (Vec<f64>, Vec<f64>) {
    let xi0 = traj.initial_state().iter().fold(1.0, |acc, v| acc * v);
    let bound = traj
        .trace_integrals()
        .iter()
        .map(|i| xi0 * i.exp())
        .collect();
    (traj.times().to_vec(), bound)
}

fn log_product(x: &nalgebra::DVector<f64>) -> Option<f64> {
    x.iter()
        .all(|v| *v > 0.0)
        .then(|| x.iter().map(|v| v.ln()).sum())
}

fn representable(v: f64) -> bool {
    v.is_normal() && v.is_finite()
}

/// Discrete differential check.
///
/// The inequality `ξ' ≥ trace A · ξ` is equivalent to `w = ξ · exp(−I)`
/// being nondecreasing, since `w' = exp(−I)(ξ' − trace A · ξ)`. At each
/// interior sample `k` that is not a breakpoint, the centred difference
/// `(w_{k+1} − w_{k−1}) / (t_{k+1} − t_{k−1})` of `w / ξ(t₀)` is compared
/// against `−slack`, with
/// `slack = C·h²·max(|w_k|, |trace A(t_k)·w_k|) + rel_cert_tol·|w_k| / (t_{k+1} − t_{k−1})`
/// and `h` the larger of the two neighbouring steps. The second term is the
/// integrated tolerance spread over the stencil.
///
/// Returns `(k, residual, slack)` per checked sample; `residual < −slack` fails.
pub fn differential_residuals(traj: &Trajectory, tol: &ToleranceProfile) -> Vec<(usize, f64, f64)> {
    let len = traj.len();
    if len < 3 {
        return Vec::new();
    }
    let states = traj.states();
    let ints = traj.trace_integrals();
    let times = traj.times();
    let Some(log_xi0) = log_product(&states[0]) else {
        return Vec::new();
    };
    let xi0 = log_xi0.exp();
    let normalised = |k: usize| match log_product(&states[k]) {
        Some(l) => (l - ints[k] - log_xi0).exp(),
        None => states[k].iter().fold(1.0, |acc, v| acc * v) * (-ints[k]).exp() / xi0,
    };

    (1..len - 1)
        .filter(|&k| !traj.is_breakpoint(k))
        .map(|k| {
            let (w_prev, w_mid, w_next) = (normalised(k - 1), normalised(k), normalised(k + 1));
            let span = times[k + 1] - times[k - 1];
            let h = (times[k] - times[k - 1]).max(times[k + 1] - times[k]);
            let trace = traj
                .trace_rate(k)
                .unwrap_or_else(|| (ints[k + 1] - ints[k - 1]) / span);
            let residual = (w_next - w_prev) / span;
            let scale = w_mid.abs().max((trace * w_mid).abs());
            let slack = DIFFERENTIAL_SLACK_FACTOR * h * h * scale + tol.rel_cert_tol * w_mid.abs() / span;
            (k, residual, slack)
        })
        .collect()
}

/// Checks `ξ ≥ ξ(t₀) exp(∫ trace A)` and its differential form at every sample.
///
/// Applicable only when the initial state lies in the open orthant.
pub fn check_certificate(traj: &Trajectory, tol: &ToleranceProfile) -> Result<CertificateReport> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let (times, xi) = product_series(traj);
    let (_, bound) = trace_bound_series(traj);
    let states = traj.states();
    let ints = traj.trace_integrals();
    let applicable = classify_orthant(&states[0], tol)?.is_interior();
    let log_xi0 = log_product(&states[0]);

    let mut margin = Vec::with_capacity(xi.len());
    let mut failing: Option<(usize, ViolationKind)> = None;
    let mut log_domain_samples = 0;
    let ln_slack = (-tol.rel_cert_tol).ln_1p();

    for k in 0..xi.len() {
        let log_pair = match (log_xi0, log_product(&states[k])) {
            (Some(l0), Some(lk)) if !(representable(xi[k]) && representable(bound[k])) => {
                Some((lk, l0 + ints[k]))
            }
            _ => None,
        };
        let (m, ok) = match log_pair {
            Some((log_xi, log_bound)) => {
                log_domain_samples += 1;
                ((log_xi - log_bound).exp_m1(), log_xi >= log_bound + ln_slack)
            }
            None => {
                let m = if k == 0 {
                    0.0
                } else {
                    (xi[k] - bound[k]) / bound[k].abs().max(MARGIN_FLOOR)
                };
                (m, xi[k] >= bound[k] * (1.0 - tol.rel_cert_tol) - tol.abs_tol)
            }
        };
        margin.push(m);
        if applicable && !ok && failing.is_none() {
            failing = Some((k, ViolationKind::IntegratedBound));
        }
    }

    if applicable {
        let differential = differential_residuals(traj, tol)
            .into_iter()
            .find(|&(_, residual, slack)| residual < -slack || residual.is_nan());
        if let Some((k, _, _)) = differential {
            if failing.is_none_or(|(kf, _)| k < kf) {
                failing = Some((k, ViolationKind::DifferentialForm));
            }
        }
    }

    let verdict = if !applicable {
        Verdict::NotApplicable
    } else if failing.is_some() {
        Verdict::ViolationFound
    } else {
        Verdict::CertifiedPositive
    };
    let failing = failing.filter(|_| applicable);
    Ok(CertificateReport {
        first_violation_time: failing.map(|(k, _)| times[k]),
        violation_bracket: failing.map(|(k, _)| (times[k.saturating_sub(1)], times[k])),
        violation_kind: failing.map(|(_, kind)| kind),
        times,
        xi,
        bound,
        margin,
        verdict,
        log_domain_samples,
    })
}

/// Global minimum coordinate over samples `from..`; ties keep the earliest.
fn worst_coordinate(traj: &Trajectory, from: usize) -> (f64, usize, f64) {
    let mut worst = (traj.times()[0], 0, f64::INFINITY);
    for (k, x) in traj.states().iter().enumerate().skip(from) {
        for (i, &v) in x.iter().enumerate() {
            if v < worst.2 {
                worst = (traj.times()[k], i, v);
            }
        }
    }
    worst
}

/// Invariance of the closed orthant: every sampled coordinate stays ≥ −abs_tol.
#[allow(non_snake_case)]
pub fn check_M1(traj: &Trajectory, tol: &ToleranceProfile) -> Result<MonotonicityVerdict> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let status = classify_orthant(traj.initial_state(), tol)?;
    if status.tag == OrthantTag::Outside {
        return Err(Error::PreconditionViolated(
            "initial state lies outside the nonnegative orthant".into(),
        ));
    }
    let (worst_time, worst_coordinate, worst_value) = worst_coordinate(traj, 0);
    Ok(MonotonicityVerdict {
        property: Property::M1,
        holds: worst_value >= -tol.abs_tol,
        worst_time,
        worst_coordinate,
        worst_value,
    })
}

/// Invariance of the open orthant: every coordinate after `t₀` stays > strict_tol.
#[allow(non_snake_case)]
pub fn check_M2(traj: &Trajectory, tol: &ToleranceProfile) -> Result<MonotonicityVerdict> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if !classify_orthant(traj.initial_state(), tol)?.is_interior() {
        return Err(Error::PreconditionViolated(
            "initial state is not in the open orthant".into(),
        ));
    }
    let from = usize::from(traj.len() > 1);
    let (worst_time, worst_coordinate, worst_value) = worst_coordinate(traj, from);
    Ok(MonotonicityVerdict {
        property: Property::M2,
        holds: worst_value > tol.strict_tol,
        worst_time,
        worst_coordinate,
        worst_value,
    })
}

#[derive(Debug, Clone, Copy)]
pub enum ReportRef<'a> {
    Certificate(&'a CertificateReport),
    Monotonicity(&'a MonotonicityVerdict),
}

/// A report tagged with the [`CoefficientMatrix::fingerprint`] of its system.
#[derive(Debug, Clone, Copy)]
pub struct BatchEntry<'a> {
    pub system: u64,
    pub report: ReportRef<'a>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contradiction {
    pub index: usize,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub cooperative: bool,
    pub contradictions: Vec<Contradiction>,
    pub notes: Vec<String>,
}

/// Cross-checks a batch of reports against the cooperativity of their system.
///
/// A cooperative system must never produce a violation; any such report is a
/// contradiction (a toolkit bug or a tolerance misconfiguration). For a
/// non-cooperative system passing reports are allowed and only noted.
pub fn implies_check(
    a: &CoefficientMatrix,
    entries: &[BatchEntry<'_>],
    probe: &ProbePlan,
    tol: &ToleranceProfile,
) -> Result<ConsistencySummary> {
    let id = a.fingerprint();
    if entries.iter().any(|e| e.system != id) {
        return Err(Error::MixedSystems);
    }
    let cooperative = is_cooperative(a, probe, tol).cooperative;
    let mut contradictions = Vec::new();
    let mut passing = 0usize;
    for (index, entry) in entries.iter().enumerate() {
        let failed = match entry.report {
            ReportRef::Certificate(r) => match r.verdict {
                Verdict::ViolationFound => Some(format!(
                    "certificate violation at t = {}",
                    r.first_violation_time.unwrap_or(f64::NAN)
                )),
                Verdict::CertifiedPositive => {
                    passing += 1;
                    None
                }
                Verdict::NotApplicable => None,
            },
            ReportRef::Monotonicity(v) if !v.holds => Some(format!(
                "{:?} fails at t = {} (coordinate {}, value {})",
                v.property, v.worst_time, v.worst_coordinate, v.worst_value
            )),
            ReportRef::Monotonicity(_) => {
                passing += 1;
                None
            }
        };
        if let (true, Some(description)) = (cooperative, failed) {
            contradictions.push(Contradiction { index, description });
        }
    }
    let mut notes = Vec::new();
    if !cooperative && passing > 0 {
        notes.push(format!(
            "system is not cooperative; {passing} report(s) passed anyway, which is allowed"
        ));
    }
    Ok(ConsistencySummary {
        cooperative,
        contradictions,
        notes,
    })
}
