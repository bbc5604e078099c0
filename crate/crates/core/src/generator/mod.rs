//! Deterministic generation of test systems and initial states.
//!
//! Every draw comes from an explicit [`Xoshiro256StarStar`] stream derived
//! from `(seed, stream_id)`, so batches can be generated in parallel and
//! reproduced exactly on any platform.

pub mod rng;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoefficientMatrix, TimeWindow};
pub use rng::{SplitMix64, Xoshiro256StarStar};

/// Relative weights of the four coefficient body shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyMix {
    pub constant: f64,
    pub piecewise_constant: f64,
    pub polynomial: f64,
    pub sampled_grid: f64,
}

impl Default for BodyMix {
    fn default() -> Self {
        Self {
            constant: 1.0,
            piecewise_constant: 1.0,
            polynomial: 1.0,
            sampled_grid: 1.0,
        }
    }
}

impl BodyMix {
    pub fn only(kind: BodyKind) -> Self {
        let mut mix = Self {
            constant: 0.0,
            piecewise_constant: 0.0,
            polynomial: 0.0,
            sampled_grid: 0.0,
        };
        match kind {
            BodyKind::Constant => mix.constant = 1.0,
            BodyKind::PiecewiseConstant => mix.piecewise_constant = 1.0,
            BodyKind::Polynomial => mix.polynomial = 1.0,
            BodyKind::SampledGrid => mix.sampled_grid = 1.0,
        }
        mix
    }

    fn weights(&self) -> [(BodyKind, f64); 4] {
        [
            (BodyKind::Constant, self.constant),
            (BodyKind::PiecewiseConstant, self.piecewise_constant),
            (BodyKind::Polynomial, self.polynomial),
            (BodyKind::SampledGrid, self.sampled_grid),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyKind {
    Constant,
    PiecewiseConstant,
    Polynomial,
    SampledGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    /// Inclusive dimension range.
    pub n_range: (usize, usize),
    pub body_mix: BodyMix,
    /// Bound on the magnitude of generated entries and coordinates.
    pub entry_scale: f64,
    pub cooperative: bool,
    /// Probability that a generated initial state lies on the orthant boundary.
    pub boundary_fraction: f64,
    /// Inclusive range for the number of pieces of piecewise bodies.
    pub pieces_range: (usize, usize),
    /// Integration length `t_end − t0` of generated cases.
    pub horizon: f64,
    /// Zero every off-diagonal entry.
    pub diagonal_only: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_range: (1, 6),
            body_mix: BodyMix::default(),
            entry_scale: 2.0,
            cooperative: true,
            boundary_fraction: 0.25,
            pieces_range: (2, 5),
            horizon: 1.0,
            diagonal_only: false,
        }
    }
}

/// Window layout of generated systems: `a = 0`, `t0 = 0.5`,
/// `t_end = t0 + horizon`, `b = t_end + 0.5`. Keeping `a = 0` makes
/// polynomials with nonnegative coefficients nonnegative on the window.
pub const GENERATED_T0: f64 = 0.5;

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let (lo, hi) = self.n_range;
        if lo == 0 || lo > hi {
            return bad(format!("n_range {lo}..={hi} is empty or contains 0"));
        }
        let (plo, phi) = self.pieces_range;
        if plo == 0 || plo > phi {
            return bad(format!("pieces_range {plo}..={phi} is empty or contains 0"));
        }
        let weights = self.body_mix.weights();
        if weights.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return bad("body weights must be finite and nonnegative".into());
        }
        if weights.iter().all(|(_, w)| *w == 0.0) {
            return bad("body weights are all zero".into());
        }
        if !(self.entry_scale.is_finite() && self.entry_scale > 0.0) {
            return bad(format!("entry_scale must be positive, got {}", self.entry_scale));
        }
        if !(0.0..=1.0).contains(&self.boundary_fraction) {
            return bad(format!(
                "boundary_fraction must lie in [0, 1], got {}",
                self.boundary_fraction
            ));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !self.cooperative && (hi < 2 || self.diagonal_only) {
            return bad("non-cooperative systems need n ≥ 2 and off-diagonal entries".into());
        }
        Ok(())
    }

    pub fn t0(&self) -> f64 {
        GENERATED_T0
    }

    pub fn t_end(&self) -> f64 {
        GENERATED_T0 + self.horizon
    }

    pub fn window(&self) -> TimeWindow {
        TimeWindow::new(0.0, GENERATED_T0, self.t_end() + 0.5).expect("validated horizon")
    }
}

/// One generated verification instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub system: CoefficientMatrix,
    pub x0: DVector<f64>,
    pub t0: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    rng: Xoshiro256StarStar,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        Self::stream(cfg, 0)
    }

    /// Independent stream `stream_id` of the configured seed.
    pub fn stream(cfg: GeneratorConfig, stream_id: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            rng: Xoshiro256StarStar::stream(cfg.seed, stream_id),
            cfg,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn rng(&mut self) -> &mut Xoshiro256StarStar {
        &mut self.rng
    }

    pub fn gen_case(&mut self) -> Case {
        let system = self.gen_system();
        let x0 = self.gen_initial(system.dimension());
        Case {
            system,
            x0,
            t0: self.cfg.t0(),
            t_end: self.cfg.t_end(),
        }
    }

    pub fn gen_system(&mut self) -> CoefficientMatrix {
        let cfg = self.cfg;
        let (lo, hi) = cfg.n_range;
        let n = if cfg.cooperative {
            self.rng.range(lo, hi)
        } else {
            self.rng.range(lo.max(2), hi)
        };
        let forced = (!cfg.cooperative).then(|| {
            let i = self.rng.range(0, n - 1);
            let j = (i + 1 + self.rng.range(0, n - 2)) % n;
            (i, j)
        });
        let window = cfg.window();
        let system = match self.pick_body() {
            BodyKind::Constant => {
                let m = self.draw_matrix(n, forced);
                CoefficientMatrix::constant(window, m)
            }
            BodyKind::PiecewiseConstant => {
                let pieces_count = self.rng.range(cfg.pieces_range.0, cfg.pieces_range.1);
                let breakpoints = self.draw_breakpoints(pieces_count - 1);
                let pieces = (0..pieces_count).map(|_| self.draw_matrix(n, forced)).collect();
                CoefficientMatrix::piecewise_constant(window, breakpoints, pieces)
            }
            BodyKind::Polynomial => {
                let coefficients = self.draw_polynomials(n, window.b(), forced);
                CoefficientMatrix::polynomial(window, n, coefficients)
            }
            BodyKind::SampledGrid => {
                let nodes = self.rng.range(3, 6);
                let times = (0..nodes)
                    .map(|k| window.a() + (window.b() - window.a()) * k as f64 / (nodes - 1) as f64)
                    .collect();
                let values = (0..nodes).map(|_| self.draw_matrix(n, forced)).collect();
                CoefficientMatrix::sampled_grid(window, times, values)
            }
        };
        system.expect("generated bodies satisfy their own invariants")
    }

    /// Boundary point (some coordinate exactly zero) with probability
    /// `boundary_fraction`, otherwise an interior point.
    pub fn gen_initial(&mut self, n: usize) -> DVector<f64> {
        let s = self.cfg.entry_scale;
        if self.rng.unit() < self.cfg.boundary_fraction {
            let zero = self.rng.range(0, n - 1);
            DVector::from_fn(n, |i, _| {
                if i == zero || self.rng.unit() < 0.25 {
                    0.0
                } else {
                    s * (1.0 - self.rng.unit())
                }
            })
        } else {
            let lo = 0.1f64.min(0.5 * s);
            DVector::from_fn(n, |_, _| self.rng.uniform(lo, s))
        }
    }

    /// Dense matrix with entries of both signs and `‖M‖∞ ≤ bound`.
    pub fn gen_bounded_matrix(&mut self, n: usize, bound: f64) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| self.rng.uniform(-1.0, 1.0));
        let norm = m
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let target = bound * (1.0 - self.rng.unit());
        if norm == 0.0 {
            m
        } else {
            m * (target / norm)
        }
    }

    fn pick_body(&mut self) -> BodyKind {
        let weights = self.cfg.body_mix.weights();
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        let mut u = self.rng.unit() * total;
        for (kind, w) in weights {
            if w > 0.0 && u < w {
                return kind;
            }
            u -= w;
        }
        weights
            .iter()
            .rev()
            .find(|(_, w)| *w > 0.0)
            .map(|(k, _)| *k)
            .unwrap_or(BodyKind::Constant)
    }

    fn draw_entry(&mut self, i: usize, j: usize, forced: Option<(usize, usize)>) -> f64 {
        let s = self.cfg.entry_scale;
        if i == j {
            self.rng.uniform(-s, s)
        } else if self.cfg.diagonal_only {
            0.0
        } else if forced == Some((i, j)) {
            -s * self.rng.uniform(0.05, 1.0)
        } else if self.cfg.cooperative {
            self.rng.uniform(0.0, s)
        } else {
            self.rng.uniform(-s, s)
        }
    }

    fn draw_matrix(&mut self, n: usize, forced: Option<(usize, usize)>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.draw_entry(i, j, forced);
            }
        }
        m
    }

    /// Strictly increasing points inside `(t0, t_end)`.
    fn draw_breakpoints(&mut self, count: usize) -> Vec<f64> {
        let (t0, span) = (self.cfg.t0(), self.cfg.horizon);
        loop {
            let mut b: Vec<f64> = (0..count)
                .map(|_| t0 + span * self.rng.uniform(0.05, 0.95))
                .collect();
            b.sort_by(f64::total_cmp);
            if b.windows(2).all(|w| w[0] < w[1]) {
                return b;
            }
        }
    }

    /// Degree ≤ 2 per entry, coefficient `k` scaled by `1 / ((d + 1) b^k)` so
    /// every entry stays within `entry_scale` on `[0, b]`.
    fn draw_polynomials(&mut self, n: usize, b: f64, forced: Option<(usize, usize)>) -> Vec<Vec<f64>> {
        let s = self.cfg.entry_scale;
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                if i != j && self.cfg.diagonal_only {
                    out.push(Vec::new());
                    continue;
                }
                let degree = self.rng.range(0, 2);
                let coeffs = (0..=degree)
                    .map(|k| {
                        let scale = s / ((degree + 1) as f64 * b.powi(k as i32));
                        if i == j {
                            self.rng.uniform(-scale, scale)
                        } else if forced == Some((i, j)) {
                            if k == 0 {
                                -scale * self.rng.uniform(0.05, 1.0)
                            } else {
                                -scale * self.rng.unit()
                            }
                        } else if self.cfg.cooperative {
                            self.rng.uniform(0.0, scale)
                        } else {
                            self.rng.uniform(-scale, scale)
                        }
                    })
                    .collect();
                out.push(coeffs);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{classify_orthant, is_cooperative, MatrixBody, OrthantTag, ProbePlan, ToleranceProfile};
    use std::collections::HashMap;

    fn kind(a: &CoefficientMatrix) -> BodyKind {
        match a.body() {
            MatrixBody::Constant(_) => BodyKind::Constant,
            MatrixBody::PiecewiseConstant { .. } => BodyKind::PiecewiseConstant,
            MatrixBody::PolynomialEntries { .. } => BodyKind::Polynomial,
            MatrixBody::SampledGrid { .. } => BodyKind::SampledGrid,
        }
    }

    #[test]
    fn cooperative_systems_pass_metzler_check() {
        let mut g = Generator::new(GeneratorConfig::default()).unwrap();
        let tol = ToleranceProfile::default();
        for _ in 0..300 {
            let a = g.gen_system();
            assert!(is_cooperative(&a, &ProbePlan::default(), &tol).cooperative);
        }
    }

    #[test]
    fn non_cooperative_systems_fail_metzler_check() {
        let cfg = GeneratorConfig {
            cooperative: false,
            ..GeneratorConfig::default()
        };
        let mut g = Generator::new(cfg).unwrap();
        let tol = ToleranceProfile::default();
        for _ in 0..300 {
            let a = g.gen_system();
            assert!(a.dimension() >= 2);
            assert!(!is_cooperative(&a, &ProbePlan::default(), &tol).cooperative);
        }
    }

    #[test]
    fn same_seed_same_system() {
        let cfg = GeneratorConfig {
            seed: 99,
            ..GeneratorConfig::default()
        };
        let a: Vec<_> = (0..20).map({
            let mut g = Generator::new(cfg).unwrap();
            move |_| g.gen_case()
        }).collect();
        let b: Vec<_> = (0..20).map({
            let mut g = Generator::new(cfg).unwrap();
            move |_| g.gen_case()
        }).collect();
        assert_eq!(a, b);
        assert_eq!(a[0].system.fingerprint(), b[0].system.fingerprint());
    }

    #[test]
    fn initial_state_fractions() {
        let tol = ToleranceProfile::default();
        for (fraction, expect_interior) in [(0.0, true), (1.0, false)] {
            let cfg = GeneratorConfig {
                boundary_fraction: fraction,
                ..GeneratorConfig::default()
            };
            let mut g = Generator::new(cfg).unwrap();
            for n in 1..=6 {
                for _ in 0..50 {
                    let x = g.gen_initial(n);
                    let status = classify_orthant(&x, &tol).unwrap();
                    if expect_interior {
                        assert_eq!(status.tag, OrthantTag::Interior);
                    } else {
                        assert!(x.iter().any(|&v| v == 0.0));
                        assert!(x.iter().all(|&v| (0.0..=2.0).contains(&v)));
                    }
                }
            }
        }
        let mut g = Generator::new(GeneratorConfig {
            boundary_fraction: 0.0,
            ..GeneratorConfig::default()
        })
        .unwrap();
        assert!(g.gen_initial(1)[0] > 0.0);
    }

    #[test]
    fn coverage_over_default_config() {
        let cfg = GeneratorConfig::default();
        let mut g = Generator::new(cfg).unwrap();
        let mut kinds = HashMap::new();
        let mut boundary = 0;
        for _ in 0..1000 {
            let case = g.gen_case();
            *kinds.entry(kind(&case.system)).or_insert(0) += 1;
            if case.x0.iter().any(|&v| v == 0.0) {
                boundary += 1;
            }
        }
        assert_eq!(kinds.len(), 4);
        let fraction = boundary as f64 / 1000.0;
        assert!((fraction - cfg.boundary_fraction).abs() <= 0.05, "{fraction}");
    }

    #[test]
    fn piecewise_breakpoints_inside_horizon() {
        let cfg = GeneratorConfig {
            body_mix: BodyMix::only(BodyKind::PiecewiseConstant),
            ..GeneratorConfig::default()
        };
        let mut g = Generator::new(cfg).unwrap();
        for _ in 0..100 {
            let a = g.gen_system();
            let b = a.breakpoints();
            assert!((1..=4).contains(&b.len()));
            assert!(b.iter().all(|&t| t > cfg.t0() && t < cfg.t_end()));
        }
    }

    #[test]
    fn bounded_matrices_respect_norm() {
        let mut g = Generator::new(GeneratorConfig::default()).unwrap();
        for n in 1..=6 {
            let m = g.gen_bounded_matrix(n, 5.0);
            let norm = m
                .row_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            assert!(norm <= 5.0 + 1e-12);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = GeneratorConfig::default();
        let cases = [
            GeneratorConfig { n_range: (0, 3), ..base },
            GeneratorConfig { n_range: (4, 3), ..base },
            GeneratorConfig { entry_scale: 0.0, ..base },
            GeneratorConfig { boundary_fraction: 1.5, ..base },
            GeneratorConfig {
                body_mix: BodyMix { constant: 0.0, piecewise_constant: 0.0, polynomial: 0.0, sampled_grid: 0.0 },
                ..base
            },
            GeneratorConfig { cooperative: false, n_range: (1, 1), ..base },
            GeneratorConfig { cooperative: false, diagonal_only: true, ..base },
        ];
        for cfg in cases {
            assert!(matches!(Generator::new(cfg), Err(Error::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn diagonal_only_has_zero_off_diagonal() {
        let cfg = GeneratorConfig {
            diagonal_only: true,
            ..GeneratorConfig::default()
        };
        let mut g = Generator::new(cfg).unwrap();
        for _ in 0..100 {
            let a = g.gen_system();
            let m = a.evaluate(1.0).unwrap();
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if i != j {
                        assert_eq!(m[(i, j)], 0.0);
                    }
                }
            }
        }
    }
}
