//! Time-varying coefficient matrices, orthant classification and the
//! cooperativity (Metzler) predicate.
//!
//! A [`CoefficientMatrix`] describes `t ↦ A(t)` on a bounded open window
//! `(a, b)`. Four body shapes are supported: constant, piecewise constant
//! (coefficients with jumps, integrated piece by piece), per-entry
//! polynomials in `t`, and a sampled grid with linear interpolation.
//!
//! Coordinate and entry indices are zero-based throughout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The open interval `(a, b)` together with the initial instant `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    a: f64,
    b: f64,
    t0: f64,
}

impl TimeWindow {
    pub fn new(a: f64, t0: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && t0.is_finite()) {
            return Err(Error::InvalidWindow(format!(
                "endpoints must be finite (a = {a}, t0 = {t0}, b = {b})"
            )));
        }
        if !(a < t0 && t0 < b) {
            return Err(Error::InvalidWindow(format!(
                "require a < t0 < b (a = {a}, t0 = {t0}, b = {b})"
            )));
        }
        Ok(Self { a, b, t0 })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Strict membership in `(a, b)`.
    pub fn contains(&self, t: f64) -> bool {
        self.a < t && t < self.b
    }

    pub(crate) fn require(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::TimeOutOfWindow {
                t,
                a: self.a,
                b: self.b,
            })
        }
    }
}

/// How the entries of `A(t)` depend on time.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixBody {
    Constant(DMatrix<f64>),
    /// `pieces[k]` applies on `[breakpoints[k-1], breakpoints[k])`; the first
    /// piece starts at `a` and the last one runs to `b`.
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        pieces: Vec<DMatrix<f64>>,
    },
    /// Row-major `n*n` list of coefficient vectors, lowest degree first.
    PolynomialEntries { coefficients: Vec<Vec<f64>> },
    /// Node values on a strictly increasing grid spanning `[a, b]`,
    /// linearly interpolated between nodes.
    SampledGrid {
        times: Vec<f64>,
        values: Vec<DMatrix<f64>>,
    },
}

/// `t ↦ A(t)` on a [`TimeWindow`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    n: usize,
    window: TimeWindow,
    body: MatrixBody,
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::InvalidMatrix(format!(
            "{what} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

impl CoefficientMatrix {
    pub fn constant(window: TimeWindow, m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 {
            return Err(Error::InvalidMatrix("dimension must be positive".into()));
        }
        check_square(&m, n, "matrix")?;
        Ok(Self {
            n,
            window,
            body: MatrixBody::Constant(m),
        })
    }

    pub fn piecewise_constant(
        window: TimeWindow,
        breakpoints: Vec<f64>,
        pieces: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = pieces.first().map(|p| p.nrows()).unwrap_or(0);
        if n == 0 {
            return Err(Error::InvalidMatrix(
                "piecewise body needs at least one non-empty piece".into(),
            ));
        }
        if pieces.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidMatrix(format!(
                "{} pieces need {} breakpoints, found {}",
                pieces.len(),
                pieces.len() - 1,
                breakpoints.len()
            )));
        }
        for (k, p) in pieces.iter().enumerate() {
            check_square(p, n, &format!("piece {k}"))?;
        }
        if breakpoints.iter().any(|t| !window.contains(*t)) {
            return Err(Error::InvalidMatrix(
                "breakpoints must lie inside the open window".into(),
            ));
        }
        if !strictly_increasing(&breakpoints) {
            return Err(Error::InvalidMatrix(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            n,
            window,
            body: MatrixBody::PiecewiseConstant {
                breakpoints,
                pieces,
            },
        })
    }

    pub fn polynomial(window: TimeWindow, n: usize, coefficients: Vec<Vec<f64>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidMatrix("dimension must be positive".into()));
        }
        if coefficients.len() != n * n {
            return Err(Error::InvalidMatrix(format!(
                "expected {} coefficient lists, found {}",
                n * n,
                coefficients.len()
            )));
        }
        if coefficients.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteInput(
                "polynomial coefficients must be finite".into(),
            ));
        }
        Ok(Self {
            n,
            window,
            body: MatrixBody::PolynomialEntries { coefficients },
        })
    }

    pub fn sampled_grid(
        window: TimeWindow,
        times: Vec<f64>,
        values: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = values.first().map(|v| v.nrows()).unwrap_or(0);
        if n == 0 {
            return Err(Error::InvalidMatrix("grid needs non-empty node values".into()));
        }
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::InvalidMatrix(
                "grid needs at least two nodes and one value per node".into(),
            ));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFiniteInput("grid times must be finite".into()));
        }
        if !strictly_increasing(&times) {
            return Err(Error::InvalidMatrix(
                "grid times must be strictly increasing".into(),
            ));
        }
        if times[0] > window.a() || times[times.len() - 1] < window.b() {
            return Err(Error::InvalidMatrix(
                "grid must cover both window endpoints".into(),
            ));
        }
        for (k, v) in values.iter().enumerate() {
            check_square(v, n, &format!("grid node {k}"))?;
        }
        Ok(Self {
            n,
            window,
            body: MatrixBody::SampledGrid { times, values },
        })
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn window(&self) -> &TimeWindow {
        &self.window
    }

    pub fn body(&self) -> &MatrixBody {
        &self.body
    }

    /// Same body on a different window. The body is re-validated against it.
    pub fn with_window(&self, window: TimeWindow) -> Result<Self> {
        self.clone().rebuild(window, self.body.clone())
    }

    pub(crate) fn rebuild(self, window: TimeWindow, body: MatrixBody) -> Result<Self> {
        match body {
            MatrixBody::Constant(m) => Self::constant(window, m),
            MatrixBody::PiecewiseConstant {
                breakpoints,
                pieces,
            } => Self::piecewise_constant(window, breakpoints, pieces),
            MatrixBody::PolynomialEntries { coefficients } => {
                Self::polynomial(window, self.n, coefficients)
            }
            MatrixBody::SampledGrid { times, values } => Self::sampled_grid(window, times, values),
        }
    }

    /// `A(t)` for `t` strictly inside the window.
    pub fn evaluate(&self, t: f64) -> Result<DMatrix<f64>> {
        self.window.require(t)?;
        Ok(self.matrix_at(t, None))
    }

    /// `trace A(t)`, summed over the diagonal of [`Self::evaluate`].
    pub fn trace_at(&self, t: f64) -> Result<f64> {
        Ok(diagonal_sum(&self.evaluate(t)?))
    }

    /// Breakpoints of a piecewise body (empty for every other body).
    pub fn breakpoints(&self) -> &[f64] {
        match &self.body {
            MatrixBody::PiecewiseConstant { breakpoints, .. } => breakpoints,
            _ => &[],
        }
    }

    /// Splits `[t0, t_end]` at the breakpoints strictly inside it. Each
    /// segment carries the piece index that is valid on its closure.
    pub(crate) fn smooth_segments(&self, t0: f64, t_end: f64) -> Vec<Segment> {
        let mut cuts = vec![t0];
        cuts.extend(self.breakpoints().iter().copied().filter(|&b| t0 < b && b < t_end));
        cuts.push(t_end);
        cuts.windows(2)
            .map(|w| Segment {
                start: w[0],
                end: w[1],
                piece: self.piece_index(w[0]),
            })
            .collect()
    }

    fn piece_index(&self, t: f64) -> Option<usize> {
        match &self.body {
            MatrixBody::PiecewiseConstant { breakpoints, .. } => {
                Some(breakpoints.partition_point(|&b| b <= t))
            }
            _ => None,
        }
    }

    /// Evaluation without the window check. `piece` pins the piece of a
    /// piecewise body so that a segment's right endpoint is evaluated with
    /// the segment's own coefficients.
    pub(crate) fn matrix_at(&self, t: f64, piece: Option<usize>) -> DMatrix<f64> {
        match &self.body {
            MatrixBody::Constant(m) => m.clone(),
            MatrixBody::PiecewiseConstant { pieces, .. } => {
                let k = piece.or_else(|| self.piece_index(t)).unwrap_or(0);
                pieces[k.min(pieces.len() - 1)].clone()
            }
            MatrixBody::PolynomialEntries { coefficients } => {
                DMatrix::from_fn(self.n, self.n, |i, j| horner(&coefficients[i * self.n + j], t))
            }
            MatrixBody::SampledGrid { times, values } => {
                let last = times.len() - 1;
                let j = times.partition_point(|&s| s <= t).clamp(1, last) - 1;
                let (t_lo, t_hi) = (times[j], times[j + 1]);
                let lambda = ((t - t_lo) / (t_hi - t_lo)).clamp(0.0, 1.0);
                &values[j] * (1.0 - lambda) + &values[j + 1] * lambda
            }
        }
    }

    /// Applies `f(i, j, value)` to every entry of every stored coefficient
    /// block, keeping the body variant and its time structure.
    pub(crate) fn map_entries(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let map_matrix = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| f(i, j, m[(i, j)]));
        let body = match &self.body {
            MatrixBody::Constant(m) => MatrixBody::Constant(map_matrix(m)),
            MatrixBody::PiecewiseConstant {
                breakpoints,
                pieces,
            } => MatrixBody::PiecewiseConstant {
                breakpoints: breakpoints.clone(),
                pieces: pieces.iter().map(map_matrix).collect(),
            },
            MatrixBody::PolynomialEntries { coefficients } => MatrixBody::PolynomialEntries {
                coefficients: coefficients
                    .iter()
                    .enumerate()
                    .map(|(idx, c)| {
                        let (i, j) = (idx / self.n, idx % self.n);
                        let mut c = if c.is_empty() { vec![0.0] } else { c.clone() };
                        c[0] = f(i, j, c[0]);
                        c
                    })
                    .collect(),
            },
            MatrixBody::SampledGrid { times, values } => MatrixBody::SampledGrid {
                times: times.clone(),
                values: values.iter().map(map_matrix).collect(),
            },
        };
        Self {
            n: self.n,
            window: self.window,
            body,
        }
    }

    /// Identity of the system, used to group reports by the matrix they came from.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let mut put = |v: f64| v.to_bits().hash(&mut h);
        put(self.window.a);
        put(self.window.t0);
        put(self.window.b);
        let put_matrix = |m: &DMatrix<f64>, put: &mut dyn FnMut(f64)| m.iter().for_each(|&v| put(v));
        match &self.body {
            MatrixBody::Constant(m) => {
                put(0.0);
                put_matrix(m, &mut put);
            }
            MatrixBody::PiecewiseConstant {
                breakpoints,
                pieces,
            } => {
                put(1.0);
                breakpoints.iter().for_each(|&b| put(b));
                pieces.iter().for_each(|p| put_matrix(p, &mut put));
            }
            MatrixBody::PolynomialEntries { coefficients } => {
                put(2.0);
                for c in coefficients {
                    put(c.len() as f64);
                    c.iter().for_each(|&v| put(v));
                }
            }
            MatrixBody::SampledGrid { times, values } => {
                put(3.0);
                times.iter().for_each(|&t| put(t));
                values.iter().for_each(|v| put_matrix(v, &mut put));
            }
        }
        h.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Segment {
    pub start: f64,
    pub end: f64,
    pub piece: Option<usize>,
}

fn horner(coefficients: &[f64], t: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

pub(crate) fn diagonal_sum(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

/// Floating-point slack for the exact inequalities of the theory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToleranceProfile {
    /// Absolute slack for nonnegativity.
    pub abs_tol: f64,
    /// Threshold a coordinate must exceed to count as strictly positive.
    pub strict_tol: f64,
    /// Relative slack for certificate comparisons.
    pub rel_cert_tol: f64,
    /// Slack for the Metzler check; zero means exact.
    pub metzler_tol: f64,
}

impl Default for ToleranceProfile {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            strict_tol: 1e-12,
            rel_cert_tol: 1e-6,
            metzler_tol: 0.0,
        }
    }
}

impl ToleranceProfile {
    pub fn zero() -> Self {
        Self {
            abs_tol: 0.0,
            strict_tol: 0.0,
            rel_cert_tol: 0.0,
            metzler_tol: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("abs_tol", self.abs_tol),
            ("strict_tol", self.strict_tol),
            ("rel_cert_tol", self.rel_cert_tol),
            ("metzler_tol", self.metzler_tol),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthantTag {
    Interior,
    BoundaryNonnegative,
    Outside,
}

/// Position of a state relative to the closed and open nonnegative orthants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrthantStatus {
    pub tag: OrthantTag,
    /// Coordinate attaining the minimum, reported for boundary and outside states.
    pub witness_index: Option<usize>,
}

impl OrthantStatus {
    pub fn is_interior(&self) -> bool {
        self.tag == OrthantTag::Interior
    }
}

pub fn classify_orthant(x: &DVector<f64>, tol: &ToleranceProfile) -> Result<OrthantStatus> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("state has NaN or infinite coordinates".into()));
    }
    let Some((idx, min)) = x
        .iter()
        .copied()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, m)) if m <= v => best,
            _ => Some((i, v)),
        })
    else {
        return Err(Error::InvalidConfig("state vector is empty".into()));
    };
    let status = if min > tol.strict_tol {
        OrthantStatus {
            tag: OrthantTag::Interior,
            witness_index: None,
        }
    } else if min < -tol.abs_tol {
        OrthantStatus {
            tag: OrthantTag::Outside,
            witness_index: Some(idx),
        }
    } else {
        OrthantStatus {
            tag: OrthantTag::BoundaryNonnegative,
            witness_index: Some(idx),
        }
    };
    Ok(status)
}

/// Where [`is_cooperative`] looks. Polynomial bodies are sampled at
/// `points` interior instants plus both window endpoints; the other bodies
/// are checked exactly (every piece, every grid node).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbePlan {
    pub points: usize,
}

impl Default for ProbePlan {
    fn default() -> Self {
        Self { points: 256 }
    }
}

/// A negative off-diagonal entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetzlerViolation {
    pub t: f64,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooperativityCheck {
    pub cooperative: bool,
    pub violations: Vec<MetzlerViolation>,
}

/// Checks that every off-diagonal entry of `A(t)` is at least `-metzler_tol`
/// at the instants selected by `probe`. Diagonal entries are unconstrained.
pub fn is_cooperative(
    a: &CoefficientMatrix,
    probe: &ProbePlan,
    tol: &ToleranceProfile,
) -> CooperativityCheck {
    let w = a.window();
    let instants: Vec<(f64, DMatrix<f64>)> = match a.body() {
        MatrixBody::Constant(m) => vec![(w.t0(), m.clone())],
        MatrixBody::PiecewiseConstant {
            breakpoints,
            pieces,
        } => pieces
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let lo = if k == 0 { w.a() } else { breakpoints[k - 1] };
                let hi = breakpoints.get(k).copied().unwrap_or(w.b());
                (0.5 * (lo + hi), p.clone())
            })
            .collect(),
        MatrixBody::PolynomialEntries { .. } => {
            let m = probe.points.max(1);
            let span = w.b() - w.a();
            std::iter::once(w.a())
                .chain((0..m).map(|k| w.a() + span * (k as f64 + 0.5) / m as f64))
                .chain(std::iter::once(w.b()))
                .map(|t| (t, a.matrix_at(t, None)))
                .collect()
        }
        MatrixBody::SampledGrid { times, values } => {
            times.iter().copied().zip(values.iter().cloned()).collect()
        }
    };

    let n = a.dimension();
    let violations: Vec<MetzlerViolation> = instants
        .iter()
        .flat_map(|(t, m)| {
            (0..n)
                .flat_map(move |i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j && m[(i, j)] < -tol.metzler_tol)
                .map(|(i, j)| MetzlerViolation {
                    t: *t,
                    i,
                    j,
                    value: m[(i, j)],
                })
                .collect::<Vec<_>>()
        })
        .collect();
    CooperativityCheck {
        cooperative: violations.is_empty(),
        violations,
    }
}
