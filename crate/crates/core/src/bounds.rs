//! Discrepancies between diffusion pairs, the right-hand sides of the three
//! stability bounds, and scenario verification reports.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lusin::{estimate_lusin_witness, Field};
use crate::measures::{make_dirac, relative_density_norm, second_moment, MeasureSpec};
use crate::quadrature::integrate;
use crate::rng::derive_seed;
use crate::sde::{estimate_convergence, DiffusionPair, Process};
use crate::stats::Estimate;
use crate::transport::{ot_cost, TransportCost};

/// Serialise non-finite floats as strings (`"inf"`, `"nan"`) so JSON stays valid.
pub fn finite_or_string<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

fn opt_finite_or_string<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => finite_or_string(v, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DiscrepancyReport {
    /// `‖a − b‖_{L¹(ν)}`
    pub drift_l1: f64,
    /// `‖a − b‖_{L²(ν)}`
    pub drift_l2: f64,
    /// `‖√σ − √τ‖_{L²(ν)}`, Hilbert–Schmidt norm pointwise.
    pub diff_l2: f64,
    pub beta_thm1: f64,
    pub beta_thm2: f64,
    pub drift_l1_se: f64,
    pub drift_l2_se: f64,
    pub diff_l2_se: f64,
    pub n: usize,
}

impl DiscrepancyReport {
    fn assemble(l1: Estimate, l2: Estimate, diff: Estimate, n: usize) -> Self {
        DiscrepancyReport {
            drift_l1: l1.value,
            drift_l2: l2.value,
            diff_l2: diff.value,
            beta_thm1: l1.value + diff.value,
            beta_thm2: l2.value + diff.value,
            drift_l1_se: l1.se,
            drift_l2_se: l2.se,
            diff_l2_se: diff.se,
            n,
        }
    }
}

/// Pointwise `(|a − b|, ‖√τ − √σ‖_HS²)` with `pair.x = (a, τ)`, `pair.y = (b, σ)`.
fn pointwise_gaps(pair: &DiffusionPair, x: &[f64]) -> Result<(f64, f64)> {
    let d = x.len();
    let (mut a, mut b) = (vec![0.0; d], vec![0.0; d]);
    pair.x.drift.eval(x, &mut a);
    pair.y.drift.eval(x, &mut b);
    let drift = a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    let diff = (pair.x.diffusion.sqrt_at(x)? - pair.y.diffusion.sqrt_at(x)?).norm_squared();
    Ok((drift, diff))
}

/// Monte Carlo discrepancies of a pair under `ν`.
pub fn discrepancy_beta(pair: &DiffusionPair, nu: &MeasureSpec, n: usize, seed: u64) -> Result<DiscrepancyReport> {
    if nu.dim() != pair.dim {
        return Err(Error::invalid(format!("measure has dimension {}, pair {}", nu.dim(), pair.dim)));
    }
    if n < 2 {
        return Err(Error::invalid("at least two samples are needed"));
    }
    let xs = nu.sample(n, seed)?;
    let gaps: Vec<(f64, f64)> =
        xs.points().par_chunks(pair.dim).map(|x| pointwise_gaps(pair, x)).collect::<Result<_>>()?;
    let l1: Vec<f64> = gaps.iter().map(|g| g.0).collect();
    let sq: Vec<f64> = gaps.iter().map(|g| g.0 * g.0).collect();
    let diff: Vec<f64> = gaps.iter().map(|g| g.1).collect();
    Ok(DiscrepancyReport::assemble(
        Estimate::from_samples(&l1),
        Estimate::from_samples(&sq).sqrt(),
        Estimate::from_samples(&diff).sqrt(),
        n,
    ))
}

/// Adaptive quadrature variant for one-dimensional `ν`.
pub fn discrepancy_beta_quadrature(pair: &DiffusionPair, nu: &MeasureSpec) -> Result<DiscrepancyReport> {
    let f = nu
        .univariate()
        .ok_or_else(|| Error::invalid("quadrature discrepancies need a one-dimensional measure"))?;
    let (lo, hi) = f.range();
    let failure = std::cell::RefCell::new(None);
    let moment = |k: usize| -> f64 {
        let q = integrate(
            |x| match pointwise_gaps(pair, &[x]) {
                Ok(g) => [g.0, g.0 * g.0, g.1][k] * f.pdf(x),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e.to_string());
                    0.0
                }
            },
            lo,
            hi,
            1e-13,
            1e-11,
        );
        q.map(|q| q.value).unwrap_or(f64::NAN)
    };
    let (l1, l2, diff) = (moment(0), moment(1).sqrt(), moment(2).sqrt());
    if let Some(e) = failure.into_inner() {
        return Err(Error::Quadrature(e));
    }
    if !(l1.is_finite() && l2.is_finite() && diff.is_finite()) {
        return Err(Error::Quadrature("discrepancy integrals did not converge".into()));
    }
    Ok(DiscrepancyReport::assemble(Estimate::exact(l1), Estimate::exact(l2), Estimate::exact(diff), 0))
}

fn domain(term: &'static str, detail: impl Into<String>) -> Error {
    Error::Domain { term, detail: detail.into() }
}

fn require_positive(term: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(domain(term, format!("{v} must be positive and finite")))
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Theorem1Inputs {
    pub r: f64,
    pub beta: f64,
    /// `‖g‖_{L^{2q}(μ)}`
    pub g_norm: f64,
    /// `‖dν/dμ‖_{L^p(μ)}`
    pub density_norm: f64,
    pub kappa: f64,
    pub c_h: f64,
    /// Root second moments `m₂(μ)`, `m₂(ν)`.
    pub m2_mu: f64,
    pub m2_nu: f64,
}

/// `100 C_H² R ‖g‖² ‖dν/dμ‖ [ln ln(1+R/β) + ln(m₂(μ)+m₂(ν)) + κR] / (κ ln(1+R/β))`
pub fn theorem1_rhs(inp: &Theorem1Inputs) -> Result<f64> {
    if !(inp.r > 1.0 && inp.r.is_finite()) {
        return Err(domain("R", format!("R = {} violates the precondition \"for any R > 1\"", inp.r)));
    }
    require_positive("beta", inp.beta)?;
    require_positive("g_norm", inp.g_norm)?;
    require_positive("density_norm", inp.density_norm)?;
    require_positive("kappa", inp.kappa)?;
    require_positive("C_H", inp.c_h)?;
    let log_term = (inp.r / inp.beta).ln_1p();
    if log_term < 1.0 - 1e-12 {
        return Err(domain(
            "ln(ln(1 + R/beta))",
            format!("R/beta = {:.6e} is below e - 1, so the double logarithm is negative", inp.r / inp.beta),
        ));
    }
    let m2_sum = inp.m2_mu + inp.m2_nu;
    if !(m2_sum > 0.0 && m2_sum.is_finite()) {
        return Err(domain("ln(m2(mu) + m2(nu))", format!("moment sum {m2_sum} must be positive")));
    }
    let numerator = log_term.ln() + m2_sum.ln() + inp.kappa * inp.r;
    if !(numerator > 0.0) {
        return Err(domain("numerator", format!("{numerator:.6e} is not positive")));
    }
    Ok(100.0 * inp.c_h.powi(2) * inp.r * inp.g_norm.powi(2) * inp.density_norm * numerator
        / (inp.kappa * log_term))
}

/// `15 C_H^{(4L²+1)/(2κ)} β (L/κ + 1)`
pub fn theorem2_rhs(l: f64, kappa: f64, c_h: f64, beta: f64) -> Result<f64> {
    if !(l >= 0.0 && l.is_finite()) {
        return Err(domain("L", format!("{l} must be nonnegative")));
    }
    require_positive("kappa", kappa)?;
    require_positive("C_H", c_h)?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(domain("beta", format!("{beta} must be nonnegative")));
    }
    Ok(15.0 * c_h.powf((4.0 * l * l + 1.0) / (2.0 * kappa)) * beta * (l / kappa + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem3Variant {
    General,
    Radial,
    Lipschitz,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Theorem3Inputs {
    pub alpha: f64,
    pub d: usize,
    /// `max(m₂²(μ), m₂²(ν))`
    pub m: f64,
    /// `‖√τ − √σ‖_{L²(μ)}`
    pub beta: f64,
    /// `‖dν/dμ‖_∞` (general) or `‖dν/dμ‖_{L²(μ)}` (radial); unused for the Lipschitz variant.
    pub density_norm: f64,
    pub variant: Theorem3Variant,
    pub l: Option<f64>,
    /// Unquantified universal constant of the general and radial variants.
    pub c: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem3Value {
    pub value: f64,
    pub flags: Vec<String>,
}

pub const RADIAL_FLAG: &str = "dimension condition d>c unverifiable (c unquantified)";

pub fn theorem3_rhs(inp: &Theorem3Inputs) -> Result<Theorem3Value> {
    if !(inp.alpha > 0.0 && inp.alpha <= 1.0) {
        return Err(domain("alpha", format!("{} must lie in (0, 1]", inp.alpha)));
    }
    if inp.d == 0 {
        return Err(domain("d", "dimension must be positive"));
    }
    if !(inp.beta >= 0.0 && inp.beta.is_finite()) {
        return Err(domain("beta", format!("{} must be nonnegative", inp.beta)));
    }
    if inp.variant == Theorem3Variant::Lipschitz {
        let l = inp.l.ok_or_else(|| domain("L", "the Lipschitz variant needs L"))?;
        if !(l >= 0.0 && l.is_finite()) {
            return Err(domain("L", format!("{l} must be nonnegative")));
        }
        let value = 100.0 * inp.alpha.powf(-(4.0 * l * l + 1.0)) * (2.0 * l + 1.0) * inp.beta;
        return Ok(Theorem3Value { value, flags: vec![] });
    }
    if !(inp.m > 1.0 && inp.m.is_finite()) {
        return Err(domain("ln(M)", format!("M = {} must exceed 1", inp.m)));
    }
    require_positive("beta", inp.beta)?;
    require_positive("density_norm", inp.density_norm)?;
    require_positive("C", inp.c)?;
    let d = inp.d as f64;
    let m_ln_m = inp.m * inp.m.ln();
    let log_term = (inp.m / inp.beta).ln_1p();
    let numerator = log_term.ln() + m_ln_m;
    if !(numerator > 0.0) {
        return Err(domain("numerator", format!("{numerator:.6e} is not positive")));
    }
    let (prefactor, flags) = match inp.variant {
        Theorem3Variant::General => (inp.alpha.powi(-6) * d.powi(3), vec![]),
        _ => (inp.alpha.powi(-20) * d.powf(3.5), vec![RADIAL_FLAG.to_string()]),
    };
    Ok(Theorem3Value { value: inp.c * prefactor * m_ln_m * inp.density_norm * numerator / log_term, flags })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Violated,
    Inconclusive,
}

impl Verdict {
    /// `violated` below `-3 SE`, `inconclusive` within `3 SE` of zero.
    pub fn from_slack(slack: f64, se: f64) -> Verdict {
        if !slack.is_finite() && slack > 0.0 {
            Verdict::Holds
        } else if slack < -3.0 * se || slack.is_nan() {
            Verdict::Violated
        } else if slack.abs() < 3.0 * se {
            Verdict::Inconclusive
        } else {
            Verdict::Holds
        }
    }
}

/// Every symbol the three bounds consume; unused ones are `None`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct BoundInputs {
    #[serde(serialize_with = "opt_finite_or_string")]
    pub r: Option<f64>,
    #[serde(serialize_with = "opt_finite_or_string")]
    pub delta: Option<f64>,
    pub beta: f64,
    pub beta_se: f64,
    pub discrepancy: Option<DiscrepancyReport>,
    #[serde(serialize_with = "opt_finite_or_string")]
    pub kappa: Option<f64>,
    #[serde(serialize_with = "opt_finite_or_string")]
    pub c_h: Option<f64>,
    #[serde(serialize_with = "opt_finite_or_string")]
    pub p: Option<f64>,
    #[serde(serialize_with = "opt_finite_or_string")]
    pub q: Option<f64>,
    #[serde(serialize_with = "opt_finite_or_string")]
    pub g_norm: Option<f64>,
    #[serde(serialize_with = "opt_finite_or_string")]
    pub density_norm: Option<f64>,
    #[serde(serialize_with = "opt_finite_or_string")]
    pub m2_mu: Option<f64>,
    #[serde(serialize_with = "opt_finite_or_string")]
    pub m2_nu: Option<f64>,
    #[serde(serialize_with = "opt_finite_or_string")]
    pub alpha: Option<f64>,
    pub d: usize,
    #[serde(serialize_with = "opt_finite_or_string")]
    pub m: Option<f64>,
    #[serde(serialize_with = "opt_finite_or_string")]
    pub l: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Provenance {
    pub kappa_source: String,
    pub g_source: String,
    pub lhs_method: String,
    pub constants: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub scenario: String,
    pub theorem: u8,
    pub inputs: BoundInputs,
    pub lhs: Estimate,
    #[serde(serialize_with = "finite_or_string")]
    pub rhs: f64,
    #[serde(serialize_with = "finite_or_string")]
    pub slack: f64,
    pub verdict: Verdict,
    pub provenance: Provenance,
}

/// A process together with its invariant law.
#[derive(Debug, Clone)]
pub struct Side {
    pub law: MeasureSpec,
    pub process: Process,
}

#[derive(Debug, Clone)]
pub enum ConvergenceSource {
    Given { kappa: f64, c_h: f64, source: String },
    /// Fit `κ`, `C_H` for the `μ` process from a point-mass start.
    Fitted { init: Vec<f64>, times: Vec<f64>, n_traj: usize, dt: f64 },
}

#[derive(Debug, Clone)]
pub enum GSource {
    Given { value: f64, source: String },
    /// Optimal empirical witness for the `μ` coefficients on `n_points` samples of `μ`.
    Lusin { n_points: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Theorem {
    One,
    Two,
    Three(Theorem3Variant),
}

impl Theorem {
    pub fn number(&self) -> u8 {
        match self {
            Theorem::One => 1,
            Theorem::Two => 2,
            Theorem::Three(_) => 3,
        }
    }
}

/// A fully resolved verification problem. `mu` is the reference side whose
/// coefficients carry the regularity and convergence assumptions.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub theorem: Theorem,
    pub mu: Side,
    pub nu: Side,
    /// Hölder exponent `p ≥ 2` of the density norm; `q` is its conjugate.
    pub p: f64,
    pub r: Option<f64>,
    pub delta: Option<f64>,
    pub convergence: ConvergenceSource,
    pub g: GSource,
    pub lipschitz: Option<f64>,
    /// Universal constant of the general and radial third bound.
    pub c3: f64,
    pub lhs_samples: usize,
    pub replicates: usize,
    pub beta_samples: usize,
    pub seed: u64,
}

const SALT_LHS: u64 = 0x1a5;
const SALT_BETA: u64 = 0xbe7a;
const SALT_G: u64 = 0x9;
const SALT_FIT: u64 = 0xf17;

fn gaussian_w2(a: &MeasureSpec, b: &MeasureSpec) -> Option<Result<f64>> {
    let (ga, gb) = (a.as_gaussian()?, b.as_gaussian()?);
    Some(crate::measures::w2_gaussian_oracle(&ga.mean, &ga.cov, &gb.mean, &gb.cov))
}

/// Replicated two-sample estimate of the transport cost between the laws.
fn replicated_cost(sc: &Scenario, cost: TransportCost, square_root: bool) -> Result<Estimate> {
    if sc.replicates < 2 || sc.lhs_samples < 2 {
        return Err(Error::invalid("LHS estimation needs at least two replicates of two samples"));
    }
    let vals: Vec<f64> = (0..sc.replicates as u64)
        .into_par_iter()
        .map(|b| {
            let x = sc.mu.law.sample(sc.lhs_samples, derive_seed(sc.seed, SALT_LHS + 2 * b))?;
            let y = sc.nu.law.sample(sc.lhs_samples, derive_seed(sc.seed, SALT_LHS + 2 * b + 1))?;
            let c = ot_cost(&x, &y, cost)?;
            Ok(if square_root { c.max(0.0).sqrt() } else { c })
        })
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&vals))
}

fn convergence_constants(sc: &Scenario, prov: &mut Provenance) -> Result<(f64, f64)> {
    match &sc.convergence {
        ConvergenceSource::Given { kappa, c_h, source } => {
            prov.kappa_source = source.clone();
            Ok((*kappa, *c_h))
        }
        ConvergenceSource::Fitted { init, times, n_traj, dt } => {
            let fit = estimate_convergence(
                &sc.mu.process,
                &sc.mu.law,
                &make_dirac(init.clone())?,
                times,
                *n_traj,
                *dt,
                derive_seed(sc.seed, SALT_FIT),
            )
            .map_err(|e| e.context("fitting kappa and C_H"))?;
            prov.kappa_source = format!("fitted over t in {:?}", fit.fit_window);
            prov.constants.insert("fit_residual".into(), fit.fit_residual);
            Ok((fit.fitted_kappa, fit.fitted_ch))
        }
    }
}

fn g_norm(sc: &Scenario, exponent: f64, prov: &mut Provenance) -> Result<f64> {
    match &sc.g {
        GSource::Given { value, source } => {
            prov.g_source = source.clone();
            Ok(*value)
        }
        GSource::Lusin { n_points } => {
            let cloud = sc.mu.law.sample(*n_points, derive_seed(sc.seed, SALT_G))?;
            let proc = &sc.mu.process;
            let drift = |x: &[f64]| {
                let mut a = vec![0.0; x.len()];
                proc.drift.eval(x, &mut a);
                a
            };
            let sqrt_tau = |x: &[f64]| match proc.diffusion.sqrt_at(x) {
                Ok(m) => m.as_slice().to_vec(),
                Err(_) => vec![f64::NAN; x.len() * x.len()],
            };
            let fields: [Field; 2] = [&drift, &sqrt_tau];
            let w = estimate_lusin_witness(&cloud, &fields, exponent).map_err(|e| e.context("Lusin witness"))?;
            if !w.converged {
                prov.notes.push(format!("Lusin witness not converged (KKT {:.3e})", w.kkt_residual));
            }
            prov.g_source = format!("lusin witness, p = {exponent}, n = {}, kkt {:.2e}", w.points.len() / sc.mu.law.dim(), w.kkt_residual);
            prov.constants.insert("lusin_kkt_residual".into(), w.kkt_residual);
            Ok(w.norm_p)
        }
    }
}

/// Estimate both sides of the selected bound and assemble a report.
pub fn verify_scenario(sc: &Scenario) -> Result<BoundReport> {
    let d = sc.mu.law.dim();
    if sc.nu.law.dim() != d {
        return Err(Error::invalid("mu and nu have different dimensions"));
    }
    let pair = DiffusionPair { x: sc.mu.process.clone(), y: sc.nu.process.clone(), dim: d };
    let mut prov = Provenance::default();
    let mut inputs = BoundInputs { d, ..Default::default() };
    let ctx = |what: &str| format!("scenario {}: {what}", sc.name);

    let (lhs, rhs) = match sc.theorem {
        Theorem::One => {
            let r = sc.r.ok_or_else(|| Error::Config("theorem 1 needs R".into()))?;
            if !(sc.p >= 2.0) {
                return Err(Error::Config(format!("p = {} must be at least 2", sc.p)));
            }
            let q = if sc.p.is_infinite() { 1.0 } else { sc.p / (sc.p - 1.0) };
            let disc = discrepancy_beta(&pair, &sc.nu.law, sc.beta_samples, derive_seed(sc.seed, SALT_BETA))
                .map_err(|e| e.context(ctx("discrepancy")))?;
            let (kappa, c_h) = convergence_constants(sc, &mut prov)?;
            let g = g_norm(sc, 2.0 * q, &mut prov)?;
            let density = relative_density_norm(&sc.nu.law, &sc.mu.law, sc.p)?;
            let m2_mu = second_moment(&sc.mu.law)?.value.sqrt();
            let m2_nu = second_moment(&sc.nu.law)?.value.sqrt();
            let ti = Theorem1Inputs { r, beta: disc.beta_thm1, g_norm: g, density_norm: density, kappa, c_h, m2_mu, m2_nu };
            let rhs = theorem1_rhs(&ti).map_err(|e| e.context(ctx("right-hand side")))?;
            let lhs = replicated_cost(sc, TransportCost::TruncatedQuadratic { r }, false)?;
            prov.lhs_method = format!(
                "truncated W2^2 between {} x {} analytic equilibrium samples, exact OT",
                sc.replicates, sc.lhs_samples
            );
            prov.constants.insert("leading".into(), 100.0);
            inputs = BoundInputs {
                r: Some(r),
                delta: sc.delta,
                beta: disc.beta_thm1,
                beta_se: disc.drift_l1_se + disc.diff_l2_se,
                discrepancy: Some(disc),
                kappa: Some(kappa),
                c_h: Some(c_h),
                p: Some(sc.p),
                q: Some(q),
                g_norm: Some(g),
                density_norm: Some(density),
                m2_mu: Some(m2_mu),
                m2_nu: Some(m2_nu),
                ..inputs
            };
            (lhs, rhs)
        }
        Theorem::Two => {
            let l = sc.lipschitz.ok_or_else(|| Error::Config("theorem 2 needs the Lipschitz constant L".into()))?;
            let disc = discrepancy_beta(&pair, &sc.nu.law, sc.beta_samples, derive_seed(sc.seed, SALT_BETA))
                .map_err(|e| e.context(ctx("discrepancy")))?;
            let (kappa, c_h) = convergence_constants(sc, &mut prov)?;
            let rhs = theorem2_rhs(l, kappa, c_h, disc.beta_thm2)?;
            let lhs = match gaussian_w2(&sc.mu.law, &sc.nu.law) {
                Some(w) => {
                    prov.lhs_method = "Gaussian closed form".into();
                    Estimate::exact(w?)
                }
                None => {
                    prov.lhs_method = format!("W2 between {} x {} equilibrium samples", sc.replicates, sc.lhs_samples);
                    replicated_cost(sc, TransportCost::Quadratic, true)?
                }
            };
            prov.g_source = format!("Lipschitz constant L = {l}");
            prov.constants.insert("leading".into(), 15.0);
            inputs = BoundInputs {
                beta: disc.beta_thm2,
                beta_se: disc.drift_l2_se + disc.diff_l2_se,
                discrepancy: Some(disc),
                kappa: Some(kappa),
                c_h: Some(c_h),
                l: Some(l),
                ..inputs
            };
            (lhs, rhs)
        }
        Theorem::Three(variant) => {
            let alpha = sc
                .mu
                .law
                .convexity_alpha()
                .ok_or_else(|| Error::invalid("theorem 3 needs a log-concave reference with known alpha"))?;
            // β is measured under μ here
            let disc = discrepancy_beta(&pair, &sc.mu.law, sc.beta_samples, derive_seed(sc.seed, SALT_BETA))
                .map_err(|e| e.context(ctx("discrepancy")))?;
            let m = second_moment(&sc.mu.law)?.value.max(second_moment(&sc.nu.law)?.value);
            let p = if variant == Theorem3Variant::Radial { 2.0 } else { f64::INFINITY };
            let density = relative_density_norm(&sc.nu.law, &sc.mu.law, p)?;
            let ti = Theorem3Inputs {
                alpha,
                d,
                m,
                beta: disc.diff_l2,
                density_norm: density,
                variant,
                l: sc.lipschitz,
                c: sc.c3,
            };
            let value = theorem3_rhs(&ti).map_err(|e| e.context(ctx("right-hand side")))?;
            prov.notes.extend(value.flags.iter().cloned());
            if variant != Theorem3Variant::Lipschitz {
                prov.constants.insert("C".into(), sc.c3);
                prov.notes.push(format!("universal constant C = {} is unquantified; supplied by config", sc.c3));
            } else {
                prov.constants.insert("leading".into(), 100.0);
            }
            prov.kappa_source = "alpha from the reference potential".into();
            let g = match &sc.g {
                GSource::Lusin { .. } => {
                    let g = g_norm(sc, 2.0, &mut prov)?;
                    // implied constant in ‖g‖_{L²(μ)} ≤ C d^{3/2} α⁻¹
                    prov.constants.insert("lusin_implied_c".into(), g * alpha / (d as f64).powf(1.5));
                    Some(g)
                }
                GSource::Given { value, source } => {
                    prov.g_source = source.clone();
                    Some(*value)
                }
            };
            let lhs = match gaussian_w2(&sc.mu.law, &sc.nu.law) {
                Some(w) => {
                    prov.lhs_method = "Gaussian closed form, squared".into();
                    Estimate::exact(w?.powi(2))
                }
                None => {
                    prov.lhs_method =
                        format!("W2^2 between {} x {} analytic equilibrium samples", sc.replicates, sc.lhs_samples);
                    replicated_cost(sc, TransportCost::Quadratic, false)?
                }
            };
            inputs = BoundInputs {
                beta: disc.diff_l2,
                beta_se: disc.diff_l2_se,
                discrepancy: Some(disc),
                p: Some(p),
                g_norm: g,
                density_norm: Some(density),
                alpha: Some(alpha),
                m: Some(m),
                l: sc.lipschitz,
                ..inputs
            };
            (lhs, value.value)
        }
    };
    let slack = rhs - lhs.value;
    Ok(BoundReport {
        scenario: sc.name.clone(),
        theorem: sc.theorem.number(),
        inputs,
        lhs,
        rhs,
        slack,
        verdict: Verdict::from_slack(slack, lhs.se),
        provenance: prov,
    })
}

/// Convenience: Gaussian law `N(0, s I_d)` with its Ornstein–Uhlenbeck process.
pub fn ou_side(d: usize, s: f64) -> Result<Side> {
    Ok(Side { law: crate::measures::make_isotropic(d, s)?, process: Process::ou(s) })
}
