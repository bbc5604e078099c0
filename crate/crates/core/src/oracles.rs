//! Ground truth independent of the integrator: the constant-matrix
//! exponential, a small-time sign probe for Metzler exponentials, and the
//! classical strongly cooperative approximation with its continuous
//! dependence experiment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{solve_ivp, StepperConfig};
use crate::model::{CoefficientMatrix, ToleranceProfile};

/// Last Taylor term summed by [`expm`].
pub const EXPM_TAYLOR_ORDER: u32 = 20;
/// `‖M / 2^s‖∞` is brought to at most this value before summing.
pub const EXPM_SCALING_THRESHOLD: f64 = 0.5;

/// Maximum absolute row sum.
pub fn norm_inf(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring around a fixed-order Taylor sum.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::InvalidMatrix(format!(
            "expm needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("matrix has non-finite entries".into()));
    }
    let n = m.nrows();
    let norm = norm_inf(m);
    let mut squarings = 0u32;
    while norm / 2f64.powi(squarings as i32) > EXPM_SCALING_THRESHOLD {
        squarings += 1;
    }
    let scaled = m / 2f64.powi(squarings as i32);

    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=EXPM_TAYLOR_ORDER {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignWitness {
    pub t: f64,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignCheck {
    pub nonnegative: bool,
    pub witness: Option<SignWitness>,
}

/// Whether `exp(tM)` is entrywise ≥ −abs_tol at every probe time.
///
/// For Metzler `M` this always holds. For small `t`, `exp(tM) ≈ I + tM`, so
/// a negative off-diagonal entry of `M` shows up as a negative entry of the
/// exponential.
pub fn metzler_exponential_sign_check(
    m: &DMatrix<f64>,
    probes: &[f64],
    tol: &ToleranceProfile,
) -> Result<SignCheck> {
    if let Some(t) = probes.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::NonFiniteInput(format!(
            "probe times must be positive and finite, got {t}"
        )));
    }
    for &t in probes {
        let e = expm(&(m * t))?;
        let mut worst: Option<SignWitness> = None;
        for i in 0..e.nrows() {
            for j in 0..e.ncols() {
                let v = e[(i, j)];
                if v < -tol.abs_tol && worst.is_none_or(|w| v < w.value) {
                    worst = Some(SignWitness { t, i, j, value: v });
                }
            }
        }
        if worst.is_some() {
            return Ok(SignCheck {
                nonnegative: false,
                witness: worst,
            });
        }
    }
    Ok(SignCheck {
        nonnegative: true,
        witness: None,
    })
}

/// `A_ε`: every off-diagonal entry raised by `eps`, diagonal untouched.
///
/// The body variant and its time structure (breakpoints, grid nodes) are
/// kept; polynomial entries get `eps` added to their constant coefficient.
pub fn epsilon_perturb(a: &CoefficientMatrix, eps: f64) -> Result<CoefficientMatrix> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "perturbation must be positive and finite, got {eps}"
        )));
    }
    Ok(a.map_entries(|i, j, v| if i == j { v } else { v + eps }))
}

/// Strictly decreasing positive perturbation sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EpsilonSchedule {
    values: Vec<f64>,
}

impl EpsilonSchedule {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("epsilon schedule is empty".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig(
                "epsilon values must be positive and finite".into(),
            ));
        }
        if !values.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig(
                "epsilon values must be strictly decreasing".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            values: vec![1e-1, 1e-2, 1e-3, 1e-4],
        }
    }
}

impl TryFrom<Vec<f64>> for EpsilonSchedule {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EpsilonSchedule> for Vec<f64> {
    fn from(s: EpsilonSchedule) -> Self {
        s.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub eps: f64,
    /// `‖x_ε(t_end) − x(t_end)‖∞`.
    pub deviation: f64,
}

/// Solves the original and every perturbed system from the same data and
/// reports the sup-norm gap at `t_end` for each `ε`.
pub fn continuous_dependence_probe(
    a: &CoefficientMatrix,
    x0: &DVector<f64>,
    t0: f64,
    t_end: f64,
    schedule: &EpsilonSchedule,
    cfg: &StepperConfig,
) -> Result<Vec<ProbeRow>> {
    let base = solve_ivp(a, t0, x0, t_end, cfg)?;
    schedule
        .values()
        .iter()
        .map(|&eps| {
            let perturbed = solve_ivp(&epsilon_perturb(a, eps)?, t0, x0, t_end, cfg)?;
            let deviation = (perturbed.final_state() - base.final_state()).amax();
            Ok(ProbeRow { eps, deviation })
        })
        .collect()
}

/// True when deviations never grow along the schedule, up to `slack`.
pub fn deviations_nonincreasing(rows: &[ProbeRow], slack: f64) -> bool {
    rows.windows(2).all(|w| w[1].deviation <= w[0].deviation + slack)
}
