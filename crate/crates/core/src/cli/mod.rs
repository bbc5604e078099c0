//! Command-line front end.
//!
//! Exit status: 0 when every check passes, 1 when a verification fails,
//! 2 on input or schema errors. A JSON report is written to `--out` before
//! any nonzero exit, except when the scenario file cannot be read or parsed.

pub mod fuzz;
pub mod report;
pub mod scenario;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::certificates::{check_M1, check_M2, check_certificate, Verdict};
use crate::error::{Error, Result};
use crate::generator::{BodyKind, BodyMix, GeneratorConfig};
use crate::integrator::{fundamental_matrix, solve_ivp, Method, StepperConfig, Trajectory};
use crate::model::{classify_orthant, is_cooperative, CoefficientMatrix, MatrixBody, ToleranceProfile};
use crate::oracles::{
    continuous_dependence_probe, deviations_nonincreasing, expm, metzler_exponential_sign_check, norm_inf,
};

use fuzz::{fuzz_case, run_fuzz};
use report::{CheckOutcome, EpsilonProbe, OracleComparison, RunReport, SolveSummary, Status};
use scenario::{CheckName, ScenarioFile, ScenarioSpec};

pub const SEED_ENV: &str = "COOP_ODES_SEED";

/// Slack when comparing consecutive epsilon-probe deviations.
pub const PROBE_SLACK: f64 = 1e-12;

/// `oracle-compare` passes when the relative error is within this multiple
/// of the stepper's relative accuracy target.
pub const ORACLE_FACTOR: f64 = 10.0;

/// Failing fuzz instances written out as scenario files.
const MAX_REPRO_FILES: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "coop-odes", version, about = "Positivity checks for linear cooperative ODE systems")]
pub struct Cli {
    /// Directory for reports and CSV files.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Also write the trajectory as CSV.
    #[arg(long, global = true)]
    pub csv: bool,
    /// Relative tolerance of the adaptive stepper.
    #[arg(long, global = true)]
    pub rel_tol: Option<f64>,
    /// Absolute tolerance of the adaptive stepper.
    #[arg(long, global = true)]
    pub abs_tol: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check that every off-diagonal entry is nonnegative.
    CheckMetzler { file: PathBuf },
    /// Integrate the scenario and report the final state.
    Solve { file: PathBuf },
    /// Run the checks listed in the scenario.
    Verify { file: PathBuf },
    /// Generate and verify a seeded batch of cases.
    Fuzz(FuzzArgs),
    /// Compare the fundamental matrix against products of matrix exponentials.
    OracleCompare { file: PathBuf },
    /// Measure how far solutions move when off-diagonal entries are raised.
    ProbeEpsilon { file: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BodyArg {
    Constant,
    Piecewise,
    Polynomial,
    Grid,
}

impl From<BodyArg> for BodyKind {
    fn from(b: BodyArg) -> Self {
        match b {
            BodyArg::Constant => BodyKind::Constant,
            BodyArg::Piecewise => BodyKind::PiecewiseConstant,
            BodyArg::Polynomial => BodyKind::Polynomial,
            BodyArg::Grid => BodyKind::SampledGrid,
        }
    }
}

#[derive(Debug, Args)]
pub struct FuzzArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Force a negative off-diagonal entry in every system.
    #[arg(long)]
    pub non_cooperative: bool,
    /// Probability of an initial state on the orthant boundary.
    #[arg(long)]
    pub boundary_fraction: Option<f64>,
    /// Restrict generated systems to one body shape.
    #[arg(long, value_enum)]
    pub body: Option<BodyArg>,
    /// Generate diagonal systems only.
    #[arg(long)]
    pub diagonal: bool,
}

/// Parses the process arguments and runs; returns the exit status.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match &cli.command {
        Command::Fuzz(args) => fuzz_command(&cli, args),
        Command::CheckMetzler { file } => scenario_command(&cli, "check-metzler", file),
        Command::Solve { file } => scenario_command(&cli, "solve", file),
        Command::Verify { file } => scenario_command(&cli, "verify", file),
        Command::OracleCompare { file } => scenario_command(&cli, "oracle-compare", file),
        Command::ProbeEpsilon { file } => scenario_command(&cli, "probe-epsilon", file),
    }
}

fn apply_tolerance_flags(cli: &Cli, cfg: &mut StepperConfig) -> Result<()> {
    if cli.rel_tol.is_none() && cli.abs_tol.is_none() {
        return Ok(());
    }
    match &mut cfg.method {
        Method::EmbeddedRk45 { rel_tol, abs_tol, .. } => {
            *rel_tol = cli.rel_tol.unwrap_or(*rel_tol);
            *abs_tol = cli.abs_tol.unwrap_or(*abs_tol);
            cfg.validate()
        }
        Method::FixedRk4 { .. } => Err(Error::InvalidConfig(
            "--rel-tol and --abs-tol apply to the rk45 stepper only".into(),
        )),
    }
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> bool {
    let written = path
        .parent()
        .map_or(Ok(()), fs::create_dir_all)
        .and_then(|_| fs::write(path, contents));
    if let Err(e) = &written {
        eprintln!("error: cannot write {}: {e}", path.display());
    }
    written.is_ok()
}

fn scenario_command(cli: &Cli, command: &str, path: &Path) -> i32 {
    let file = match ScenarioFile::load(path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let stem = path
        .file_stem()
        .map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
    let mut report = RunReport::new(command, Some(path));
    let mut traj = None;

    let outcome = seed_override()
        .and_then(|seed| file.resolve(seed))
        .and_then(|mut spec| {
            apply_tolerance_flags(cli, &mut spec.stepper)?;
            execute(command, &spec, &mut report, &mut traj, cli.csv)?;
            Ok(spec)
        });
    if let Err(e) = &outcome {
        report.fail_with(e);
    }

    if cli.csv {
        if let Some(traj) = &traj {
            match check_certificate(traj, &ToleranceProfile::default()) {
                Ok(cert) => {
                    let mut buf = Vec::new();
                    if let Err(e) = report::write_trajectory_csv(&mut buf, traj, &cert) {
                        report.fail_with(format!("csv export failed: {e}"));
                    } else if !write_file(&cli.out.join(format!("{stem}.csv")), &buf) {
                        return 2;
                    }
                }
                Err(e) => report.fail_with(e),
            }
        }
    }

    let report_path = cli.out.join(format!("{stem}.{command}.json"));
    if !write_file(&report_path, report.to_json().as_bytes()) {
        return 2;
    }
    print_report(&report);
    report.exit_code
}

fn print_report(report: &RunReport) {
    for c in &report.checks {
        println!("{:<16} {}", c.check, if c.passed { "pass" } else { "FAIL" });
    }
    if let Some(e) = &report.error {
        println!("error: {e}");
    }
    let status = match report.status {
        Status::Pass => "pass",
        Status::Fail => "fail",
        Status::Error => "error",
    };
    println!("status: {status} (exit {})", report.exit_code);
}

fn trajectory<'a>(spec: &ScenarioSpec, slot: &'a mut Option<Trajectory>) -> Result<&'a Trajectory> {
    if slot.is_none() {
        *slot = Some(solve_ivp(&spec.system, spec.t0, &spec.x0, spec.t_end, &spec.stepper)?);
    }
    Ok(slot.as_ref().expect("just filled"))
}

fn execute(
    command: &str,
    spec: &ScenarioSpec,
    report: &mut RunReport,
    traj: &mut Option<Trajectory>,
    want_csv: bool,
) -> Result<()> {
    let checks: Vec<CheckName> = match command {
        "check-metzler" => vec![CheckName::Metzler],
        "oracle-compare" => vec![CheckName::OracleCompare],
        "probe-epsilon" => vec![CheckName::EpsilonProbe],
        "solve" => {
            let t = trajectory(spec, traj)?;
            report.push("solve", true, CheckOutcome::Solve(SolveSummary::of(t)));
            return Ok(());
        }
        _ if spec.checks.is_empty() => {
            let mut v = vec![CheckName::Metzler, CheckName::M1];
            if classify_orthant(&spec.x0, &spec.tolerances)?.is_interior() {
                v.extend([CheckName::M2, CheckName::Certificate]);
            }
            v
        }
        _ => spec.checks.clone(),
    };
    for check in checks {
        run_check(check, spec, report, traj)?;
    }
    if want_csv {
        trajectory(spec, traj)?;
    }
    Ok(())
}

fn run_check(
    check: CheckName,
    spec: &ScenarioSpec,
    report: &mut RunReport,
    traj: &mut Option<Trajectory>,
) -> Result<()> {
    let tol = &spec.tolerances;
    match check {
        CheckName::Metzler => {
            let c = is_cooperative(&spec.system, &spec.probe, tol);
            report.push("metzler", c.cooperative, CheckOutcome::Metzler(c));
        }
        CheckName::M1 => {
            let v = check_M1(trajectory(spec, traj)?, tol)?;
            report.push("m1", v.holds, CheckOutcome::M1(v));
        }
        CheckName::M2 => {
            let v = check_M2(trajectory(spec, traj)?, tol)?;
            report.push("m2", v.holds, CheckOutcome::M2(v));
        }
        CheckName::Certificate => {
            let c = check_certificate(trajectory(spec, traj)?, tol)?;
            let passed = c.verdict != Verdict::ViolationFound;
            report.push("certificate", passed, CheckOutcome::Certificate(c));
        }
        CheckName::OracleCompare => {
            let c = oracle_compare(spec)?;
            let passed = c.relative_error <= c.threshold;
            report.push("oracle-compare", passed, CheckOutcome::OracleCompare(c));
        }
        CheckName::EpsilonProbe => {
            let rows = continuous_dependence_probe(
                &spec.system,
                &spec.x0,
                spec.t0,
                spec.t_end,
                &spec.schedule,
                &spec.stepper,
            )?;
            let nonincreasing = deviations_nonincreasing(&rows, PROBE_SLACK);
            report.push(
                "epsilon-probe",
                nonincreasing,
                CheckOutcome::EpsilonProbe(EpsilonProbe { rows, nonincreasing }),
            );
        }
    }
    Ok(())
}

/// `Φ(t_end, t0)` as an ordered product of exponentials of the constant pieces.
pub fn reference_propagator(a: &CoefficientMatrix, t0: f64, t_end: f64) -> Result<DMatrix<f64>> {
    match a.body() {
        MatrixBody::Constant(_) | MatrixBody::PiecewiseConstant { .. } => {}
        _ => {
            return Err(Error::InvalidConfig(
                "oracle-compare needs a constant or piecewise-constant system".into(),
            ))
        }
    }
    let n = a.dimension();
    let mut phi = DMatrix::identity(n, n);
    for seg in a.smooth_segments(t0, t_end) {
        let m = a.matrix_at(seg.start, seg.piece);
        phi = expm(&(m * (seg.end - seg.start)))? * phi;
    }
    Ok(phi)
}

fn oracle_compare(spec: &ScenarioSpec) -> Result<OracleComparison> {
    let reference = reference_propagator(&spec.system, spec.t0, spec.t_end)?;
    let phi = fundamental_matrix(&spec.system, spec.t0, spec.t_end, &spec.stepper)?;
    let relative_error = norm_inf(&(&phi - &reference)) / norm_inf(&reference).max(f64::MIN_POSITIVE);
    let sign = match spec.system.body() {
        MatrixBody::Constant(m) => Some(metzler_exponential_sign_check(
            m,
            &[spec.t_end - spec.t0],
            &spec.tolerances,
        )?),
        _ => None,
    };
    Ok(OracleComparison {
        relative_error,
        threshold: ORACLE_FACTOR * spec.stepper.rel_tol(),
        sign,
    })
}

fn fuzz_command(cli: &Cli, args: &FuzzArgs) -> i32 {
    let defaults = GeneratorConfig::default();
    let cfg = GeneratorConfig {
        seed: args.seed,
        cooperative: !args.non_cooperative,
        boundary_fraction: args.boundary_fraction.unwrap_or(defaults.boundary_fraction),
        body_mix: args.body.map_or(defaults.body_mix, |b| BodyMix::only(b.into())),
        diagonal_only: args.diagonal,
        ..defaults
    };
    let tol = ToleranceProfile::default();
    let mut stepper = StepperConfig::default();
    let run = apply_tolerance_flags(cli, &mut stepper).and_then(|_| run_fuzz(args.count, &cfg, &stepper, &tol));
    let run = match run {
        Ok(run) => run,
        Err(e) => {
            let mut report = RunReport::new("fuzz", None);
            report.fail_with(e);
            write_file(&cli.out.join("fuzz.report.json"), report.to_json().as_bytes());
            print_report(&report);
            return 2;
        }
    };

    let s = &run.summary;
    let mut text = serde_json::to_string_pretty(s).expect("summary serialises");
    text.push('\n');
    if !write_file(&cli.out.join("fuzz_summary.json"), text.as_bytes()) {
        return 2;
    }
    let mut text = serde_json::to_string_pretty(&run.instances).expect("instances serialise");
    text.push('\n');
    if !write_file(&cli.out.join("fuzz_instances.json"), text.as_bytes()) {
        return 2;
    }
    for &index in s.failing_instances.iter().take(MAX_REPRO_FILES) {
        let case = fuzz_case(&cfg, index).expect("config validated");
        let checks = vec![CheckName::Metzler, CheckName::M1, CheckName::M2, CheckName::Certificate];
        let file = ScenarioFile::from_case(&case, &stepper, tol, checks);
        let mut text = serde_json::to_string_pretty(&file).expect("scenario serialises");
        text.push('\n');
        write_file(&cli.out.join(format!("fuzz_case_{index}.json")), text.as_bytes());
    }

    println!(
        "instances {}  passed {}  failed {}  errors {}",
        s.count, s.passed, s.failed, s.errors
    );
    println!("initial states: interior {}  boundary {}", s.interior, s.boundary);
    println!(
        "violations: m1 {}  m2 {}  certificate {}  breakpoint misses {}",
        s.m1_violations, s.m2_violations, s.certificate_violations, s.breakpoint_misses
    );
    println!(
        "worst m1 value {:e}  worst m2 value {:e}  min certificate margin {:e}  max |margin| {:e}",
        s.worst_m1_value, s.worst_m2_value, s.min_certificate_margin, s.max_abs_certificate_margin
    );
    if !cfg.cooperative {
        println!("system class is not cooperative; violations do not affect the exit status");
    }
    s.exit_code()
}
