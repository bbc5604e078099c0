//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! Run with `cargo test --release --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use coop_odes::certificates::Verdict;
use coop_odes::cli::fuzz::run_fuzz;
use coop_odes::generator::{BodyKind, BodyMix, Generator, GeneratorConfig};
use coop_odes::integrator::{fundamental_matrix, StepperConfig};
use coop_odes::model::{CoefficientMatrix, MatrixBody, TimeWindow, ToleranceProfile};
use coop_odes::oracles::{
    continuous_dependence_probe, deviations_nonincreasing, expm, metzler_exponential_sign_check, norm_inf,
    EpsilonSchedule,
};
use nalgebra::DMatrix;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn stepper() -> StepperConfig {
    StepperConfig::rk45(1e-9, 1e-12)
}

fn rel_sup(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    norm_inf(&(a - reference)) / norm_inf(reference)
}

fn batch_checks(count: u64, cfg: GeneratorConfig) -> (bool, String, coop_odes::cli::fuzz::FuzzRun) {
    let run = run_fuzz(count, &cfg, &stepper(), &ToleranceProfile::default()).expect("valid batch");
    let s = &run.summary;
    let m2_holds = run.instances.iter().filter(|r| r.m2.is_some_and(|v| v.holds)).count();
    let certified = run
        .instances
        .iter()
        .filter(|r| r.certificate.as_ref().is_some_and(|c| c.verdict == Verdict::CertifiedPositive))
        .count();
    let ok = s.interior == count
        && m2_holds as u64 == count
        && certified as u64 == count
        && s.min_certificate_margin >= -1e-6
        && s.errors == 0;
    let detail = format!(
        "m2 {m2_holds}/{count}, certified {certified}/{count}, min margin {:.3e}",
        s.min_certificate_margin
    );
    (ok, detail, run)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = GeneratorConfig {
        boundary_fraction: 0.0,
        ..GeneratorConfig::default()
    };
    let (ok, detail, _) = batch_checks(1000, cfg);
    outcome(ok, format!("{detail}, {:.1} s", start.elapsed().as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let cfg = GeneratorConfig {
        seed: 2,
        boundary_fraction: 1.0,
        ..GeneratorConfig::default()
    };
    let run = run_fuzz(500, &cfg, &stepper(), &ToleranceProfile::default()).expect("valid batch");
    let s = &run.summary;
    let holds = run.instances.iter().filter(|r| r.m1.is_some_and(|v| v.holds)).count();
    outcome(
        holds == 500 && s.boundary == 500 && s.worst_m1_value >= -1e-8,
        format!("m1 {holds}/500, boundary starts {}, worst value {:.3e}", s.boundary, s.worst_m1_value),
    )
}

fn criterion_3() -> Outcome {
    let cfg = GeneratorConfig {
        seed: 3,
        boundary_fraction: 0.0,
        diagonal_only: true,
        ..GeneratorConfig::default()
    };
    let run = run_fuzz(200, &cfg, &stepper(), &ToleranceProfile::default()).expect("valid batch");
    let worst = run.summary.max_abs_certificate_margin;
    let covered = run.instances.iter().filter(|r| r.certificate.is_some()).count();
    outcome(
        covered == 200 && worst <= 1e-5,
        format!("max |margin| {worst:.3e} over {covered} systems"),
    )
}

fn criterion_4() -> Outcome {
    let cfg = GeneratorConfig {
        seed: 4,
        ..GeneratorConfig::default()
    };
    let mut g = Generator::new(cfg).unwrap();
    let window = TimeWindow::new(-1.0, 0.0, 2.0).unwrap();
    let (mut worst_oracle, mut worst_cocycle) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = g.rng().range(1, 6);
        let m = g.gen_bounded_matrix(n, 5.0);
        let t1 = g.rng().uniform(0.05, 0.95);
        let a = CoefficientMatrix::constant(window, m.clone()).unwrap();
        let phi = fundamental_matrix(&a, 0.0, 1.0, &stepper()).unwrap();
        worst_oracle = worst_oracle.max(rel_sup(&phi, &expm(&m).unwrap()));
        let first = fundamental_matrix(&a, 0.0, t1, &stepper()).unwrap();
        let second = fundamental_matrix(&a, t1, 1.0, &stepper()).unwrap();
        worst_cocycle = worst_cocycle.max(rel_sup(&(second * first), &phi));
    }
    outcome(
        worst_oracle <= 1e-8 && worst_cocycle <= 1e-8,
        format!("max oracle error {worst_oracle:.3e}, max cocycle defect {worst_cocycle:.3e}"),
    )
}

fn criterion_5() -> Outcome {
    let cfg = GeneratorConfig {
        seed: 5,
        cooperative: false,
        body_mix: BodyMix::only(BodyKind::Constant),
        ..GeneratorConfig::default()
    };
    let mut g = Generator::new(cfg).unwrap();
    let tol = ToleranceProfile::default();
    let (mut eligible, mut detected) = (0, 0);
    for _ in 0..100 {
        let a = g.gen_system();
        let MatrixBody::Constant(m) = a.body() else {
            unreachable!("constant bodies only")
        };
        let n = m.nrows();
        let most_negative = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .fold(f64::INFINITY, f64::min);
        if most_negative <= -0.1 {
            eligible += 1;
            let check = metzler_exponential_sign_check(m, &[1e-3], &tol).unwrap();
            if !check.nonnegative {
                detected += 1;
            }
        }
    }
    outcome(
        eligible > 0 && detected == eligible,
        format!("negative entry found in {detected}/{eligible} eligible systems"),
    )
}

fn criterion_6() -> Outcome {
    let cfg = GeneratorConfig {
        seed: 6,
        boundary_fraction: 0.0,
        body_mix: BodyMix::only(BodyKind::PiecewiseConstant),
        pieces_range: (2, 5),
        ..GeneratorConfig::default()
    };
    let (ok, detail, run) = batch_checks(200, cfg);
    let hits = run.instances.iter().filter(|r| r.breakpoints_hit).count();
    outcome(ok && hits == 200, format!("{detail}, breakpoints on grid {hits}/200"))
}

fn criterion_7() -> Outcome {
    let cfg = GeneratorConfig {
        seed: 7,
        ..GeneratorConfig::default()
    };
    let schedule = EpsilonSchedule::default();
    let (mut monotone, mut rate_ok) = (0, 0);
    let mut worst_ratio = 0.0f64;
    for i in 0..50 {
        let case = Generator::stream(cfg, i).unwrap().gen_case();
        let rows =
            continuous_dependence_probe(&case.system, &case.x0, case.t0, case.t_end, &schedule, &stepper()).unwrap();
        if deviations_nonincreasing(&rows, 1e-12) {
            monotone += 1;
        }
        let at = |eps: f64| rows.iter().find(|r| r.eps == eps).unwrap().deviation;
        let (d3, d4) = (at(1e-3), at(1e-4));
        if d4 <= 100.0 * (d3 * 0.1) {
            rate_ok += 1;
        }
        if d3 > 0.0 {
            worst_ratio = worst_ratio.max(d4 / d3);
        }
    }
    outcome(
        monotone == 50 && rate_ok == 50,
        format!("nonincreasing {monotone}/50, rate bound {rate_ok}/50, max dev(1e-4)/dev(1e-3) {worst_ratio:.4}"),
    )
}

fn criterion_8() -> Outcome {
    let cfg = GeneratorConfig {
        seed: 8,
        ..GeneratorConfig::default()
    };
    let mut g = Generator::new(cfg).unwrap();
    let window = TimeWindow::new(-1.0, 0.0, 2.0).unwrap();
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let n = g.rng().range(1, 6);
        // Norms in [1, 3] keep both errors well above roundoff.
        let m = g.gen_bounded_matrix(n, 1.0);
        let target = g.rng().uniform(1.0, 3.0);
        let m = &m * (target / norm_inf(&m));
        let exact = expm(&m).unwrap();
        let a = CoefficientMatrix::constant(window, m).unwrap();
        let coarse = rel_sup(&fundamental_matrix(&a, 0.0, 1.0, &StepperConfig::rk4(0.1)).unwrap(), &exact);
        let fine = rel_sup(&fundamental_matrix(&a, 0.0, 1.0, &StepperConfig::rk4(0.05)).unwrap(), &exact);
        worst = worst.min(coarse / fine);
    }
    outcome(worst >= 12.0, format!("min error ratio {worst:.3}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("open orthant batch", criterion_1),
        ("closed orthant batch from boundary data", criterion_2),
        ("equality for diagonal systems", criterion_3),
        ("fundamental matrix against expm", criterion_4),
        ("converse sign probe", criterion_5),
        ("piecewise-constant coefficients", criterion_6),
        ("continuous dependence", criterion_7),
        ("rk4 order", criterion_8),
    ];
    let mut failures = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.passed {
            failures += 1;
        }
        println!(
            "criterion {} {:<40} {}  {}",
            k + 1,
            name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
