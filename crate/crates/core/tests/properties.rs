use coop_odes::certificates::{check_M1, check_M2, differential_residuals, product_series};
use coop_odes::generator::{BodyKind, BodyMix, Generator, GeneratorConfig};
use coop_odes::integrator::{fundamental_matrix, solve_ivp, StepperConfig};
use coop_odes::model::{
    classify_orthant, is_cooperative, CoefficientMatrix, OrthantTag, ProbePlan, TimeWindow, ToleranceProfile,
};
use coop_odes::oracles::{epsilon_perturb, expm, norm_inf};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn window() -> TimeWindow {
    TimeWindow::new(-1.0, 0.0, 3.0).unwrap()
}

fn square(max_n: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_n).prop_flat_map(move |n| {
        proptest::collection::vec(-scale..scale, n * n).prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
    })
}

fn generated(seed: u64, cooperative: bool) -> Generator {
    Generator::new(GeneratorConfig {
        seed,
        cooperative,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

fn rel_sup(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    norm_inf(&(a - reference)) / norm_inf(reference).max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cooperativity_ignores_the_diagonal(m in square(5, 3.0), d in proptest::collection::vec(-10.0..10.0f64, 5)) {
        let n = m.nrows();
        let mut flipped = m.clone();
        for i in 0..n {
            flipped[(i, i)] = d[i];
        }
        let tol = ToleranceProfile::default();
        let probe = ProbePlan::default();
        let a = CoefficientMatrix::constant(window(), m).unwrap();
        let b = CoefficientMatrix::constant(window(), flipped).unwrap();
        prop_assert_eq!(
            is_cooperative(&a, &probe, &tol).cooperative,
            is_cooperative(&b, &probe, &tol).cooperative
        );
    }

    #[test]
    fn orthant_tags_partition_at_zero_tolerance(
        v in proptest::collection::vec(prop_oneof![Just(0.0), -1.0..1.0f64], 1..6)
    ) {
        let x = DVector::from_vec(v.clone());
        let tag = classify_orthant(&x, &ToleranceProfile::zero()).unwrap().tag;
        let expected = if v.iter().all(|&c| c > 0.0) {
            OrthantTag::Interior
        } else if v.iter().all(|&c| c >= 0.0) {
            OrthantTag::BoundaryNonnegative
        } else {
            OrthantTag::Outside
        };
        prop_assert_eq!(tag, expected);
    }

    #[test]
    fn single_piece_equals_constant(m in square(4, 2.0), t in -1.0..3.0f64) {
        let n = m.nrows();
        let c = CoefficientMatrix::constant(window(), m.clone()).unwrap();
        let p = CoefficientMatrix::piecewise_constant(window(), vec![], vec![m]).unwrap();
        prop_assert_eq!(c.evaluate(t).unwrap(), p.evaluate(t).unwrap());
        let x0 = DVector::from_element(n, 1.0);
        let cfg = StepperConfig::default();
        let a = solve_ivp(&c, 0.0, &x0, 1.0, &cfg).unwrap();
        let b = solve_ivp(&p, 0.0, &x0, 1.0, &cfg).unwrap();
        prop_assert_eq!(a.final_state(), b.final_state());
    }

    #[test]
    fn trace_is_the_diagonal_sum(seed in any::<u64>(), u in 0.0..1.0f64) {
        let a = generated(seed, true).gen_system();
        let w = a.window();
        let t = w.a() + u * (w.b() - w.a());
        let m = a.evaluate(t).unwrap();
        let diag: f64 = (0..m.nrows()).map(|i| m[(i, i)]).sum();
        prop_assert!((a.trace_at(t).unwrap() - diag).abs() <= 1e-12 * (1.0 + diag.abs()));
    }

    #[test]
    fn rk4_is_linear_in_the_initial_state(seed in any::<u64>(), alpha in -2.0..2.0f64, beta in -2.0..2.0f64) {
        let mut g = generated(seed, false);
        let case = g.gen_case();
        let n = case.system.dimension();
        let y0 = g.gen_initial(n);
        let cfg = StepperConfig::rk4(0.01);
        let solve = |x: &DVector<f64>| {
            solve_ivp(&case.system, case.t0, x, case.t_end, &cfg).unwrap().final_state().clone()
        };
        let combined = solve(&(&case.x0 * alpha + &y0 * beta));
        let separate = solve(&case.x0) * alpha + solve(&y0) * beta;
        let scale = 1.0 + separate.amax().max(combined.amax());
        prop_assert!((combined - separate).amax() <= 1e-12 * scale);
    }

    #[test]
    fn fundamental_matrices_compose(seed in any::<u64>(), u in 0.05..0.95f64) {
        let case = generated(seed, false).gen_case();
        let cfg = StepperConfig::default();
        let t1 = case.t0 + u * (case.t_end - case.t0);
        let whole = fundamental_matrix(&case.system, case.t0, case.t_end, &cfg).unwrap();
        let first = fundamental_matrix(&case.system, case.t0, t1, &cfg).unwrap();
        let second = fundamental_matrix(&case.system, t1, case.t_end, &cfg).unwrap();
        prop_assert!(rel_sup(&(second * first), &whole) <= 1e-7);
        let identity = fundamental_matrix(&case.system, t1, t1, &cfg).unwrap();
        prop_assert_eq!(identity, DMatrix::identity(whole.nrows(), whole.ncols()));
    }

    #[test]
    fn expm_matches_the_integrator(m in square(5, 1.0), s in 0.0..1.0f64, t in 0.0..1.0f64) {
        let a = CoefficientMatrix::constant(window(), m.clone()).unwrap();
        let phi = fundamental_matrix(&a, 0.0, 1.0, &StepperConfig::default()).unwrap();
        prop_assert!(rel_sup(&phi, &expm(&m).unwrap()) <= 1e-8);
        let joint = expm(&(&m * (s + t))).unwrap();
        let split = expm(&(&m * s)).unwrap() * expm(&(&m * t)).unwrap();
        prop_assert!(rel_sup(&split, &joint) <= 1e-10);
    }

    #[test]
    fn product_scales_with_the_initial_state(seed in any::<u64>(), c in 0.1..10.0f64) {
        let case = generated(seed, true).gen_case();
        let n = case.system.dimension() as i32;
        let cfg = StepperConfig::rk4(0.01);
        let base = solve_ivp(&case.system, case.t0, &case.x0, case.t_end, &cfg).unwrap();
        let scaled = solve_ivp(&case.system, case.t0, &(&case.x0 * c), case.t_end, &cfg).unwrap();
        let (_, xi) = product_series(&base);
        let (_, xi_c) = product_series(&scaled);
        let factor = c.powi(n);
        for (a, b) in xi.iter().zip(&xi_c) {
            prop_assert!((b - factor * a).abs() <= 1e-12 * (factor * a).abs().max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn open_orthant_invariance_implies_closed(seed in any::<u64>(), cooperative in any::<bool>()) {
        let mut g = Generator::new(GeneratorConfig {
            seed,
            cooperative,
            boundary_fraction: 0.0,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let case = g.gen_case();
        let tol = ToleranceProfile::default();
        let traj = solve_ivp(&case.system, case.t0, &case.x0, case.t_end, &StepperConfig::default()).unwrap();
        if check_M2(&traj, &tol).unwrap().holds {
            prop_assert!(check_M1(&traj, &tol).unwrap().holds);
        }
    }

    #[test]
    fn raising_off_diagonals_dominates(seed in any::<u64>(), eps in 1e-4..0.5f64) {
        let mut g = Generator::new(GeneratorConfig {
            seed,
            boundary_fraction: 0.5,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let case = g.gen_case();
        let cfg = StepperConfig::default();
        let perturbed = epsilon_perturb(&case.system, eps).unwrap();
        let x = solve_ivp(&case.system, case.t0, &case.x0, case.t_end, &cfg).unwrap();
        let y = solve_ivp(&perturbed, case.t0, &case.x0, case.t_end, &cfg).unwrap();
        let gap = y.final_state() - x.final_state();
        let scale = 1.0 + x.final_state().amax();
        prop_assert!(gap.min() >= -1e-8 * scale, "gap {}", gap);
    }

    #[test]
    fn cooperative_trajectories_pass_the_differential_check(seed in any::<u64>(), kind in 0usize..4) {
        let kind = [BodyKind::Constant, BodyKind::PiecewiseConstant, BodyKind::Polynomial, BodyKind::SampledGrid][kind];
        let mut g = Generator::new(GeneratorConfig {
            seed,
            boundary_fraction: 0.0,
            body_mix: BodyMix::only(kind),
            ..GeneratorConfig::default()
        })
        .unwrap();
        let case = g.gen_case();
        let tol = ToleranceProfile::default();
        let traj = solve_ivp(&case.system, case.t0, &case.x0, case.t_end, &StepperConfig::default()).unwrap();
        for (k, residual, slack) in differential_residuals(&traj, &tol) {
            prop_assert!(residual >= -slack, "sample {} residual {} slack {}", k, residual, slack);
        }
    }
}
