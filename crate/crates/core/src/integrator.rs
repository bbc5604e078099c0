//! Forward integration of `x' = A(t) x` with dense output.
//!
//! The state is augmented with the scalar `I' = trace A(t)`, so the trace
//! integral used by the certificates comes out of the same discretisation
//! as the trajectory. Piecewise-constant coefficients are integrated piece
//! by piece: every breakpoint becomes an accepted node and the stepper
//! restarts there with a fresh step.
//!
//! Computed coordinates are never clipped or repaired.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{diagonal_sum, CoefficientMatrix, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Classical fourth-order Runge–Kutta with step `h` (the last step of
    /// each smooth segment is shortened to land on its end).
    #[serde(rename = "rk4")]
    FixedRk4 { h: f64 },
    /// Dormand–Prince 5(4) with local extrapolation.
    #[serde(rename = "rk45")]
    EmbeddedRk45 {
        rel_tol: f64,
        abs_tol: f64,
        initial_step: f64,
        min_step: f64,
        max_step: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub method: Method,
    /// Limit on attempted steps (accepted and rejected) per solve.
    pub max_steps: usize,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self::rk45(1e-9, 1e-12)
    }
}

impl StepperConfig {
    pub const DEFAULT_MAX_STEPS: usize = 1_000_000;

    pub fn rk4(h: f64) -> Self {
        Self {
            method: Method::FixedRk4 { h },
            max_steps: Self::DEFAULT_MAX_STEPS,
        }
    }

    pub fn rk45(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            method: Method::EmbeddedRk45 {
                rel_tol,
                abs_tol,
                initial_step: 1e-3,
                min_step: 1e-12,
                max_step: 0.1,
            },
            max_steps: Self::DEFAULT_MAX_STEPS,
        }
    }

    /// Relative accuracy target: `rel_tol` for the adaptive method, `h^4`
    /// for the fixed-step one.
    pub fn rel_tol(&self) -> f64 {
        match self.method {
            Method::FixedRk4 { h } => h.powi(4),
            Method::EmbeddedRk45 { rel_tol, .. } => rel_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be positive".into()));
        }
        match self.method {
            Method::FixedRk4 { h } => positive("h", h),
            Method::EmbeddedRk45 {
                rel_tol,
                abs_tol,
                initial_step,
                min_step,
                max_step,
            } => {
                positive("rel_tol", rel_tol)?;
                positive("abs_tol", abs_tol)?;
                positive("initial_step", initial_step)?;
                positive("min_step", min_step)?;
                positive("max_step", max_step)?;
                if min_step > max_step {
                    return Err(Error::InvalidConfig(format!(
                        "min_step {min_step} exceeds max_step {max_step}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Accepted samples of one solve plus what is needed for dense output.
///
/// Dense output is cubic Hermite between accepted nodes, using the
/// right-hand side evaluated at both ends of each step with that step's
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    trace_integrals: Vec<f64>,
    /// Per step: augmented derivative `(A x, trace A)` at its start and end.
    slopes: Option<Vec<(DVector<f64>, DVector<f64>)>>,
    breakpoints: Vec<f64>,
}

impl Trajectory {
    /// Builds a trajectory from raw samples. Without slopes, dense output
    /// falls back to linear interpolation.
    pub fn from_samples(
        times: Vec<f64>,
        states: Vec<DVector<f64>>,
        trace_integrals: Vec<f64>,
    ) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        if states.len() != times.len() || trace_integrals.len() != times.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                found: states.len().min(trace_integrals.len()),
            });
        }
        let n = states[0].len();
        if let Some(s) = states.iter().find(|s| s.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: s.len(),
            });
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig("times must be strictly increasing".into()));
        }
        Ok(Self {
            times,
            states,
            trace_integrals,
            slopes: None,
            breakpoints: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn trace_integrals(&self) -> &[f64] {
        &self.trace_integrals
    }

    /// Coefficient breakpoints that were hit as nodes.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn is_breakpoint(&self, k: usize) -> bool {
        self.breakpoints.contains(&self.times[k])
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn final_state(&self) -> &DVector<f64> {
        &self.states[self.states.len() - 1]
    }

    pub fn final_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// `trace A` at node `k`, as seen from the step leaving it (or the step
    /// arriving at the final node). `None` when no slopes were recorded.
    pub fn trace_rate(&self, k: usize) -> Option<f64> {
        let slopes = self.slopes.as_ref()?;
        let n = self.dimension();
        if k < slopes.len() {
            Some(slopes[k].0[n])
        } else {
            slopes.last().map(|s| s.1[n])
        }
    }

    /// Dense output: state and trace integral at `t`.
    pub fn sample_at(&self, t: f64) -> Result<(DVector<f64>, f64)> {
        let (start, end) = (self.times[0], self.final_time());
        if !(t >= start && t <= end) {
            return Err(Error::TimeOutOfRange { t, start, end });
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        if self.times[k] == t {
            return Ok((self.states[k].clone(), self.trace_integrals[k]));
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let n = self.dimension();
        let y0 = augment(&self.states[k], self.trace_integrals[k]);
        let y1 = augment(&self.states[k + 1], self.trace_integrals[k + 1]);
        let y = match &self.slopes {
            Some(slopes) => {
                let (d0, d1) = &slopes[k];
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                y0 * h00 + d0 * (h10 * h) + y1 * h01 + d1 * (h11 * h)
            }
            None => y0 * (1.0 - s) + y1 * s,
        };
        Ok((y.rows(0, n).into_owned(), y[n]))
    }
}

fn augment(x: &DVector<f64>, integral: f64) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(n + 1, |i, _| if i < n { x[i] } else { integral })
}

/// Right-hand side of the augmented system on one smooth segment.
struct Field<'a> {
    a: &'a CoefficientMatrix,
    piece: Option<usize>,
}

impl Field<'_> {
    fn eval(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        let n = self.a.dimension();
        let m = self.a.matrix_at(t, self.piece);
        let x = y.rows(0, n);
        let ax = &m * x;
        let mut out = DVector::zeros(n + 1);
        out.rows_mut(0, n).copy_from(&ax);
        out[n] = diagonal_sum(&m);
        out
    }
}

struct Recorder {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    slopes: Vec<(DVector<f64>, DVector<f64>)>,
    attempts: usize,
    max_steps: usize,
}

impl Recorder {
    fn attempt(&mut self, t: f64) -> Result<()> {
        self.attempts += 1;
        if self.attempts > self.max_steps {
            return Err(Error::StepLimitExceeded {
                max_steps: self.max_steps,
                t,
            });
        }
        Ok(())
    }

    fn accept(&mut self, t: f64, y: DVector<f64>, d_start: DVector<f64>, d_end: DVector<f64>) {
        self.times.push(t);
        self.states.push(y);
        self.slopes.push((d_start, d_end));
    }

    fn current(&self) -> &DVector<f64> {
        &self.states[self.states.len() - 1]
    }
}

/// Solves `x' = A(t) x`, `x(t0) = x0` forward to `t_end`.
pub fn solve_ivp(
    a: &CoefficientMatrix,
    t0: f64,
    x0: &DVector<f64>,
    t_end: f64,
    cfg: &StepperConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let n = a.dimension();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("initial state".into()));
    }
    let w = a.window();
    w.require(t0)?;
    w.require(t_end)?;
    if t_end < t0 {
        return Err(Error::BackwardIntegration { t0, t_end });
    }

    let mut rec = Recorder {
        times: vec![t0],
        states: vec![augment(x0, 0.0)],
        slopes: Vec::new(),
        attempts: 0,
        max_steps: cfg.max_steps,
    };
    let segments = if t_end > t0 {
        a.smooth_segments(t0, t_end)
    } else {
        Vec::new()
    };
    for seg in &segments {
        let field = Field { a, piece: seg.piece };
        match cfg.method {
            Method::FixedRk4 { h } => integrate_rk4(&field, seg, h, &mut rec)?,
            Method::EmbeddedRk45 {
                rel_tol,
                abs_tol,
                initial_step,
                min_step,
                max_step,
            } => integrate_rk45(
                &field,
                seg,
                Rk45Params {
                    rel_tol,
                    abs_tol,
                    initial_step,
                    min_step,
                    max_step,
                },
                &mut rec,
            )?,
        }
    }

    let breakpoints = segments.iter().skip(1).map(|s| s.start).collect();
    let mut states = Vec::with_capacity(rec.states.len());
    let mut trace_integrals = Vec::with_capacity(rec.states.len());
    for y in rec.states {
        trace_integrals.push(y[n]);
        states.push(y.rows(0, n).into_owned());
    }
    // Exact by construction, restated for clarity of the invariant.
    states[0] = x0.clone();
    trace_integrals[0] = 0.0;
    Ok(Trajectory {
        times: rec.times,
        states,
        trace_integrals,
        slopes: Some(rec.slopes),
        breakpoints,
    })
}

fn integrate_rk4(field: &Field, seg: &Segment, h: f64, rec: &mut Recorder) -> Result<()> {
    let span = seg.end - seg.start;
    let ratio = span / h;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round()
    } else {
        ratio.ceil()
    }
    .max(1.0) as usize;

    let mut t = seg.start;
    let mut k1 = field.eval(t, rec.current());
    for k in 1..=steps {
        rec.attempt(t)?;
        let t_next = if k == steps {
            seg.end
        } else {
            seg.start + k as f64 * h
        };
        let dt = t_next - t;
        let y = rec.current();
        let k2 = field.eval(t + 0.5 * dt, &(y + &k1 * (0.5 * dt)));
        let k3 = field.eval(t + 0.5 * dt, &(y + &k2 * (0.5 * dt)));
        let k4 = field.eval(t_next, &(y + &k3 * dt));
        let y_next = y + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (dt / 6.0);
        let d_end = field.eval(t_next, &y_next);
        rec.accept(t_next, y_next, k1, d_end.clone());
        k1 = d_end;
        t = t_next;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Rk45Params {
    rel_tol: f64,
    abs_tol: f64,
    initial_step: f64,
    min_step: f64,
    max_step: f64,
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the fifth- and fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

fn integrate_rk45(field: &Field, seg: &Segment, p: Rk45Params, rec: &mut Recorder) -> Result<()> {
    let mut t = seg.start;
    let mut h = p.initial_step.min(p.max_step);
    let mut k1 = field.eval(t, rec.current());
    let mut rejected_last = false;

    while t < seg.end {
        rec.attempt(t)?;
        let remaining = seg.end - t;
        let last = h >= remaining;
        let dt = if last { remaining } else { h };
        let y = rec.current();

        let k2 = field.eval(t + C2 * dt, &(y + &k1 * (A21 * dt)));
        let k3 = field.eval(t + C3 * dt, &(y + (&k1 * A31 + &k2 * A32) * dt));
        let k4 = field.eval(t + C4 * dt, &(y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * dt));
        let k5 = field.eval(
            t + C5 * dt,
            &(y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * dt),
        );
        let t_next = if last { seg.end } else { t + dt };
        let k6 = field.eval(
            t_next,
            &(y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * dt),
        );
        let y_next = y + (&k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * dt;
        let k7 = field.eval(t_next, &y_next);
        let err_vec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * dt;

        let dim = y.len() as f64;
        let err = (err_vec
            .iter()
            .zip(y.iter().zip(y_next.iter()))
            .map(|(e, (a, b))| {
                let scale = p.abs_tol + p.rel_tol * a.abs().max(b.abs());
                (e / scale).powi(2)
            })
            .sum::<f64>()
            / dim)
            .sqrt();

        if !err.is_finite() {
            h = dt * MIN_FACTOR;
            rejected_last = true;
        } else if err <= 1.0 {
            rec.accept(t_next, y_next, k1, k7.clone());
            k1 = k7;
            t = t_next;
            let mut factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            if rejected_last {
                factor = factor.min(1.0);
            }
            rejected_last = false;
            // A clamped final step says nothing about the step the error allows.
            h = if last { h } else { (dt * factor).min(p.max_step) };
            continue;
        } else {
            h = dt * (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
            rejected_last = true;
        }
        if h < p.min_step && h < seg.end - t {
            return Err(Error::StepUnderflow { t, h });
        }
    }
    Ok(())
}

/// `Φ(t_end, t0)`: column `j` is `x(t_end; t0, e_j)`.
pub fn fundamental_matrix(
    a: &CoefficientMatrix,
    t0: f64,
    t_end: f64,
    cfg: &StepperConfig,
) -> Result<DMatrix<f64>> {
    let n = a.dimension();
    let mut phi = DMatrix::zeros(n, n);
    for j in 0..n {
        let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
        let traj = solve_ivp(a, t0, &e, t_end, cfg)?;
        phi.set_column(j, traj.final_state());
    }
    Ok(phi)
}
