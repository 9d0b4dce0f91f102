use std::collections::BTreeMap;

use serde::Serialize;

use super::{ot_cost, TransportCost};
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::sde::TrajectoryEnsemble;
use crate::stats::Estimate;

/// Both sides of an inequality `LHS ≤ RHS`.
#[derive(Debug, Clone, Serialize)]
pub struct SlackReport {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub slack: f64,
    pub terms: BTreeMap<String, f64>,
}

impl SlackReport {
    fn new(lhs: f64, lhs_se: f64, rhs: f64, terms: &[(&str, f64)]) -> Self {
        SlackReport {
            lhs,
            lhs_se,
            rhs,
            slack: rhs - lhs,
            terms: terms.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationMode {
    /// `W̃²_{2,R} ≤ δ² e^{D/ε} + Rε + R·D/ln(1+R²/δ²)`
    W2,
    /// `W̃_{1,R} ≤ δ e^{D/ε} + Rε + R·D/ln(1+R/δ²)`
    W1,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {v} must be positive")))
    }
}

pub fn check_interpolation(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    r: f64,
    delta: f64,
    eps: f64,
    mode: InterpolationMode,
) -> Result<SlackReport> {
    positive("R", r)?;
    positive("delta", delta)?;
    positive("epsilon", eps)?;
    let d = ot_cost(a, b, TransportCost::Logarithmic { delta })?;
    let (lhs, rhs) = match mode {
        InterpolationMode::W2 => (
            ot_cost(a, b, TransportCost::TruncatedQuadratic { r })?,
            delta * delta * (d / eps).exp() + r * eps + r * d / (r * r / (delta * delta)).ln_1p(),
        ),
        InterpolationMode::W1 => (
            ot_cost(a, b, TransportCost::TruncatedFirst { r })?,
            delta * (d / eps).exp() + r * eps + r * d / (r / (delta * delta)).ln_1p(),
        ),
    };
    Ok(SlackReport::new(lhs, 0.0, rhs, &[("D_delta", d), ("R", r), ("delta", delta), ("epsilon", eps)]))
}

/// `W̃²_{2,R} ≤ 2R(δ + D_δ/ln(1+R/δ))`, valid for `δ < R`.
pub fn check_eps_optimized(a: &EmpiricalMeasure, b: &EmpiricalMeasure, r: f64, delta: f64) -> Result<SlackReport> {
    positive("R", r)?;
    positive("delta", delta)?;
    if delta >= r {
        return Err(Error::invalid(format!("delta = {delta} must be smaller than R = {r}")));
    }
    let d = ot_cost(a, b, TransportCost::Logarithmic { delta })?;
    let lhs = ot_cost(a, b, TransportCost::TruncatedQuadratic { r })?;
    let rhs = 2.0 * r * (delta + d / (r / delta).ln_1p());
    Ok(SlackReport::new(lhs, 0.0, rhs, &[("D_delta", d), ("R", r), ("delta", delta)]))
}

#[derive(Debug, Clone, Serialize)]
pub struct TruncationReport {
    pub w2_squared: f64,
    pub truncated: f64,
    pub radius: f64,
    pub c: f64,
    pub m: f64,
    pub slack: f64,
    /// Smallest C for which `W2² ≤ 2 W̃²_{2,C·M·ln(max(M,2))}` holds here.
    pub min_c: f64,
    pub constant_too_small: bool,
}

/// `W2² ≤ 2 W̃²_{2,R}` with `R = C·M·ln(max(M, 2))`.
pub fn check_truncation_lemma(a: &EmpiricalMeasure, b: &EmpiricalMeasure, m: f64, c: f64) -> Result<TruncationReport> {
    positive("M", m)?;
    positive("C", c)?;
    let unit = m * m.max(2.0).ln();
    let w2 = ot_cost(a, b, TransportCost::Quadratic)?;
    let radius = c * unit;
    let truncated = ot_cost(a, b, TransportCost::TruncatedQuadratic { r: radius })?;
    let holds = |cc: f64| -> Result<bool> {
        Ok(w2 <= 2.0 * ot_cost(a, b, TransportCost::TruncatedQuadratic { r: cc * unit })? + 1e-12)
    };
    let min_c = if w2 == 0.0 {
        0.0
    } else {
        // R at or beyond the largest pairwise cost reproduces W2² exactly
        let mut max_d2 = 0.0f64;
        for (x, _) in a.iter() {
            for (y, _) in b.iter() {
                max_d2 = max_d2.max(TransportCost::Quadratic.eval(x, y));
            }
        }
        let (mut lo, mut hi) = (0.0, max_d2 / unit);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if holds(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-6 * hi {
                break;
            }
        }
        hi
    };
    let slack = 2.0 * truncated - w2;
    Ok(TruncationReport {
        w2_squared: w2,
        truncated,
        radius,
        c,
        m,
        slack,
        min_c,
        constant_too_small: slack < 0.0,
    })
}

/// Upper bound on `D_δ(μ_t, ν_t)` from the trajectory coupling.
pub fn coupled_log_cost(e: &TrajectoryEnsemble, t: f64, delta: f64) -> Result<Estimate> {
    positive("delta", delta)?;
    if e.n_traj() == 0 {
        return Err(Error::invalid("ensemble has no trajectories"));
    }
    let vals: Vec<f64> = e.squared_gaps(t).iter().map(|z2| (z2 / (delta * delta)).ln_1p()).collect();
    Ok(Estimate::from_samples(&vals))
}

/// Analytic inputs of the finite-time bound.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FiniteTimeInputs {
    /// `‖dν/dμ‖_{L^p(μ)}`
    pub density_norm: f64,
    /// `‖g‖_{L^{2q}(μ)}`; the bound is refused without it.
    pub g_norm: Option<f64>,
    /// `‖a − b‖_{L¹(ν)}`
    pub drift_l1: f64,
    /// `‖√σ − √τ‖_{L²(ν)}`
    pub diff_l2: f64,
}

/// `2t(10‖dν/dμ‖ ‖g‖² + ‖a−b‖_{L¹}/δ + 2‖√σ−√τ‖²_{L²}/δ²)`
pub fn finite_time_rhs(t: f64, delta: f64, inp: &FiniteTimeInputs) -> Result<f64> {
    positive("delta", delta)?;
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("t = {t} must be nonnegative")));
    }
    let g = inp
        .g_norm
        .ok_or_else(|| Error::invalid("finite-time bound refused: no g-norm supplied"))?;
    Ok(2.0
        * t
        * (10.0 * inp.density_norm * g * g + inp.drift_l1 / delta + 2.0 * inp.diff_l2.powi(2) / (delta * delta)))
}

/// Compare the coupled log-cost of an ensemble started from `X₀ = Y₀` with
/// the finite-time bound.
pub fn check_finite_time_bound(
    e: &TrajectoryEnsemble,
    t: f64,
    delta: f64,
    inputs: &FiniteTimeInputs,
) -> Result<SlackReport> {
    let rhs = finite_time_rhs(t, delta, inputs)?;
    let k = e.time_index(0.0);
    if e.n_traj() > 0 && e.squared_gaps(e.times[k]).iter().any(|z| *z != 0.0) {
        return Err(Error::invalid("finite-time bound needs X_0 = Y_0"));
    }
    let lhs = coupled_log_cost(e, t, delta)?;
    Ok(SlackReport::new(
        lhs.value,
        lhs.se,
        rhs,
        &[
            ("t", t),
            ("delta", delta),
            ("density_norm", inputs.density_norm),
            ("g_norm", inputs.g_norm.unwrap_or(f64::NAN)),
            ("drift_l1", inputs.drift_l1),
            ("diff_l2", inputs.diff_l2),
        ],
    ))
}
