//! Seeded batches of generated cases.
//!
//! Instance `i` draws from generator stream `i`, so every instance can be
//! reproduced alone and the batch result does not depend on thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::{check_M1, check_M2, check_certificate, MonotonicityVerdict, Verdict};
use crate::error::Result;
use crate::generator::{BodyKind, Case, Generator, GeneratorConfig};
use crate::integrator::{solve_ivp, StepperConfig, Trajectory};
use crate::model::{classify_orthant, MatrixBody, OrthantTag, ToleranceProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub verdict: Verdict,
    #[serde(with = "crate::serde_float::scalar")]
    pub min_margin: f64,
    #[serde(with = "crate::serde_float::scalar")]
    pub max_abs_margin: f64,
    pub first_violation_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub index: u64,
    pub dimension: usize,
    pub body: BodyKind,
    pub orthant: OrthantTag,
    pub samples: usize,
    pub m1: Option<MonotonicityVerdict>,
    pub m2: Option<MonotonicityVerdict>,
    pub certificate: Option<CertificateSummary>,
    /// Every breakpoint inside `(t0, t_end)` is an exact sample time.
    pub breakpoints_hit: bool,
    pub error: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzSummary {
    pub count: u64,
    pub generator: GeneratorConfig,
    pub passed: u64,
    pub failed: u64,
    pub errors: u64,
    pub interior: u64,
    pub boundary: u64,
    pub m1_violations: u64,
    pub m2_violations: u64,
    pub certificate_violations: u64,
    pub breakpoint_misses: u64,
    #[serde(with = "crate::serde_float::scalar")]
    pub worst_m1_value: f64,
    #[serde(with = "crate::serde_float::scalar")]
    pub worst_m2_value: f64,
    #[serde(with = "crate::serde_float::scalar")]
    pub min_certificate_margin: f64,
    #[serde(with = "crate::serde_float::scalar")]
    pub max_abs_certificate_margin: f64,
    pub failing_instances: Vec<u64>,
}

impl FuzzSummary {
    /// Violations only count against cooperative batches.
    pub fn exit_code(&self) -> i32 {
        if self.generator.cooperative && self.passed != self.count {
            1
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzRun {
    pub summary: FuzzSummary,
    pub instances: Vec<InstanceResult>,
}

pub fn body_kind(body: &MatrixBody) -> BodyKind {
    match body {
        MatrixBody::Constant(_) => BodyKind::Constant,
        MatrixBody::PiecewiseConstant { .. } => BodyKind::PiecewiseConstant,
        MatrixBody::PolynomialEntries { .. } => BodyKind::Polynomial,
        MatrixBody::SampledGrid { .. } => BodyKind::SampledGrid,
    }
}

/// The case instance `index` of a batch runs on.
pub fn fuzz_case(cfg: &GeneratorConfig, index: u64) -> Result<Case> {
    Ok(Generator::stream(*cfg, index)?.gen_case())
}

fn breakpoints_hit(case: &Case, traj: &Trajectory) -> bool {
    case.system
        .breakpoints()
        .iter()
        .filter(|&&b| b > case.t0 && b < case.t_end)
        .all(|b| traj.times().contains(b))
}

pub fn run_instance(
    cfg: &GeneratorConfig,
    index: u64,
    stepper: &StepperConfig,
    tol: &ToleranceProfile,
) -> InstanceResult {
    let case = fuzz_case(cfg, index).expect("generator config validated by caller");
    let orthant = classify_orthant(&case.x0, tol)
        .map(|s| s.tag)
        .unwrap_or(OrthantTag::Outside);
    let mut result = InstanceResult {
        index,
        dimension: case.system.dimension(),
        body: body_kind(case.system.body()),
        orthant,
        samples: 0,
        m1: None,
        m2: None,
        certificate: None,
        breakpoints_hit: false,
        error: None,
        passed: false,
    };
    let outcome = (|| -> Result<()> {
        let traj = solve_ivp(&case.system, case.t0, &case.x0, case.t_end, stepper)?;
        result.samples = traj.len();
        result.breakpoints_hit = breakpoints_hit(&case, &traj);
        result.m1 = Some(check_M1(&traj, tol)?);
        if orthant == OrthantTag::Interior {
            result.m2 = Some(check_M2(&traj, tol)?);
            let cert = check_certificate(&traj, tol)?;
            result.certificate = Some(CertificateSummary {
                verdict: cert.verdict,
                min_margin: cert.min_margin(),
                max_abs_margin: cert.max_abs_margin(),
                first_violation_time: cert.first_violation_time,
            });
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        result.error = Some(e.to_string());
    }
    result.passed = result.error.is_none()
        && result.breakpoints_hit
        && result.m1.is_some_and(|v| v.holds)
        && result.m2.is_none_or(|v| v.holds)
        && result
            .certificate
            .as_ref()
            .is_none_or(|c| c.verdict == Verdict::CertifiedPositive);
    result
}

pub fn run_fuzz(
    count: u64,
    cfg: &GeneratorConfig,
    stepper: &StepperConfig,
    tol: &ToleranceProfile,
) -> Result<FuzzRun> {
    if count == 0 {
        return Err(crate::Error::InvalidConfig("count must be at least 1".into()));
    }
    cfg.validate()?;
    stepper.validate()?;
    tol.validate()?;
    let instances: Vec<InstanceResult> = (0..count)
        .into_par_iter()
        .map(|i| run_instance(cfg, i, stepper, tol))
        .collect();
    Ok(FuzzRun {
        summary: summarise(count, cfg, &instances),
        instances,
    })
}

fn summarise(count: u64, cfg: &GeneratorConfig, instances: &[InstanceResult]) -> FuzzSummary {
    let tally = |f: &dyn Fn(&InstanceResult) -> bool| instances.iter().filter(|r| f(r)).count() as u64;
    let fold_min = |vals: Vec<f64>| vals.into_iter().fold(f64::INFINITY, f64::min);
    FuzzSummary {
        count,
        generator: *cfg,
        passed: tally(&|r| r.passed),
        failed: tally(&|r| !r.passed),
        errors: tally(&|r| r.error.is_some()),
        interior: tally(&|r| r.orthant == OrthantTag::Interior),
        boundary: tally(&|r| r.orthant == OrthantTag::BoundaryNonnegative),
        m1_violations: tally(&|r| r.m1.is_some_and(|v| !v.holds)),
        m2_violations: tally(&|r| r.m2.is_some_and(|v| !v.holds)),
        certificate_violations: tally(&|r| {
            r.certificate
                .as_ref()
                .is_some_and(|c| c.verdict == Verdict::ViolationFound)
        }),
        breakpoint_misses: tally(&|r| r.error.is_none() && !r.breakpoints_hit),
        worst_m1_value: fold_min(instances.iter().filter_map(|r| r.m1.map(|v| v.worst_value)).collect()),
        worst_m2_value: fold_min(instances.iter().filter_map(|r| r.m2.map(|v| v.worst_value)).collect()),
        min_certificate_margin: fold_min(
            instances
                .iter()
                .filter_map(|r| r.certificate.as_ref().map(|c| c.min_margin))
                .collect(),
        ),
        max_abs_certificate_margin: instances
            .iter()
            .filter_map(|r| r.certificate.as_ref().map(|c| c.max_abs_margin))
            .fold(0.0, f64::max),
        failing_instances: instances.iter().filter(|r| !r.passed).map(|r| r.index).collect(),
    }
}
