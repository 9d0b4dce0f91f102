//! Stein kernels: the moment-map kernel `τ_μ = φ''∘(φ')⁻¹`, a closed-form 1D
//! oracle, the Stein identity check and the kernel diffusion
//! `dX = -X dt + √(2τ(X)) dB`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{make_product, Factor, MeasureSpec};
use crate::moment_map::{MomentMap1D, MomentMapProduct};
use crate::quadrature::{gauss_legendre, integrate};
use crate::sde::{spd_sqrt, Diffusion, Drift, Process};
use crate::stats::Estimate;
use crate::testfn::TestFunction;

const CLOSED_FORM_NODES: usize = 4097;
/// Clip fractions above this flag a Stein-identity estimate.
pub const CLIP_FLAG: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    MomentMap,
    ClosedForm1d,
    Constant,
}

/// A scalar kernel tabulated at increasing nodes `y_k` with values and
/// slopes, evaluated by cubic Hermite interpolation.
#[derive(Debug, Clone)]
pub struct Kernel1d {
    ys: Vec<f64>,
    vals: Vec<f64>,
    slopes: Vec<f64>,
}

impl Kernel1d {
    pub fn new(ys: Vec<f64>, vals: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if ys.len() < 2 || vals.len() != ys.len() || slopes.len() != ys.len() {
            return Err(Error::invalid("kernel table needs matching arrays of at least two nodes"));
        }
        if ys.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("kernel nodes must be strictly increasing"));
        }
        if vals.iter().chain(&slopes).any(|v| !v.is_finite()) || vals.iter().any(|v| *v < 0.0) {
            return Err(Error::invalid("kernel values must be finite and nonnegative"));
        }
        Ok(Kernel1d { ys, vals, slopes })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.ys[0], *self.ys.last().unwrap())
    }

    pub fn min_value(&self) -> f64 {
        self.vals.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn nodes(&self) -> (&[f64], &[f64]) {
        (&self.ys, &self.vals)
    }

    pub fn eval(&self, y: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(lo..=hi).contains(&y) {
            return Err(Error::OutOfRange { value: y, lo, hi });
        }
        Ok(self.interp(y))
    }

    /// Value at `y` clamped into the table range; the flag reports clamping.
    pub fn eval_clamped(&self, y: f64) -> (f64, bool) {
        let (lo, hi) = self.range();
        let c = y.clamp(lo, hi);
        (self.interp(c), c != y)
    }

    fn interp(&self, y: f64) -> f64 {
        let n = self.ys.len();
        let k = self.ys.partition_point(|v| *v <= y).clamp(1, n - 1) - 1;
        let (y0, y1) = (self.ys[k], self.ys[k + 1]);
        let h = y1 - y0;
        let t = (y - y0) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.vals[k]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[k]
            + (-2.0 * t3 + 3.0 * t2) * self.vals[k + 1]
            + (t3 - t2) * h * self.slopes[k + 1]
    }
}

#[derive(Clone)]
enum Shape {
    Constant { tau: DMatrix<f64>, sqrt: DMatrix<f64> },
    Diagonal(Vec<Arc<Kernel1d>>),
}

/// Matrix field `y ↦ τ(y)` with its square root.
#[derive(Clone)]
pub struct SteinKernelField {
    provenance: Provenance,
    measure: MeasureSpec,
    shape: Shape,
}

impl fmt::Debug for SteinKernelField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SteinKernelField({:?}, {}, dim {})", self.provenance, self.measure.describe(), self.dim())
    }
}

impl SteinKernelField {
    pub fn constant(measure: MeasureSpec, tau: DMatrix<f64>) -> Result<Self> {
        if tau.nrows() != measure.dim() || !tau.is_square() {
            return Err(Error::invalid("constant kernel must be d x d"));
        }
        let sqrt = spd_sqrt(&tau)?;
        Ok(SteinKernelField { provenance: Provenance::Constant, measure, shape: Shape::Constant { tau, sqrt } })
    }

    /// The Stein kernel of a Gaussian is its covariance.
    pub fn gaussian(measure: &MeasureSpec) -> Result<Self> {
        let g = measure
            .as_gaussian()
            .ok_or_else(|| Error::invalid(format!("{} is not Gaussian", measure.describe())))?;
        Self::constant(measure.clone(), g.cov.clone())
    }

    pub fn diagonal(measure: MeasureSpec, kernels: Vec<Kernel1d>, provenance: Provenance) -> Result<Self> {
        if kernels.len() != measure.dim() {
            return Err(Error::invalid(format!(
                "{} kernels for a {}-dimensional measure",
                kernels.len(),
                measure.dim()
            )));
        }
        Ok(SteinKernelField {
            provenance,
            measure,
            shape: Shape::Diagonal(kernels.into_iter().map(Arc::new).collect()),
        })
    }

    pub fn dim(&self) -> usize {
        self.measure.dim()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn domain_measure(&self) -> &MeasureSpec {
        &self.measure
    }

    /// Per-coordinate evaluation range (infinite for constant kernels).
    pub fn ranges(&self) -> Vec<(f64, f64)> {
        match &self.shape {
            Shape::Constant { .. } => vec![(f64::NEG_INFINITY, f64::INFINITY); self.dim()],
            Shape::Diagonal(k) => k.iter().map(|k| k.range()).collect(),
        }
    }

    /// Smallest eigenvalue over the kernel table (exact for constant kernels).
    pub fn lower_bound(&self) -> f64 {
        match &self.shape {
            Shape::Constant { tau, .. } => tau.clone().symmetric_eigen().eigenvalues.min(),
            Shape::Diagonal(k) => k.iter().map(|k| k.min_value()).fold(f64::INFINITY, f64::min),
        }
    }

    fn check_dim(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::invalid(format!("point of dimension {} for a {}-dim kernel", y.len(), self.dim())));
        }
        Ok(())
    }

    pub fn evaluate(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(y)?;
        match &self.shape {
            Shape::Constant { tau, .. } => Ok(tau.clone()),
            Shape::Diagonal(k) => {
                let v: Result<Vec<f64>> = k.iter().zip(y).map(|(k, y)| k.eval(*y)).collect();
                Ok(DMatrix::from_diagonal(&DVector::from_vec(v?)))
            }
        }
    }

    pub fn sqrt_evaluate(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(y)?;
        match &self.shape {
            Shape::Constant { sqrt, .. } => Ok(sqrt.clone()),
            Shape::Diagonal(k) => {
                let v: Result<Vec<f64>> = k.iter().zip(y).map(|(k, y)| k.eval(*y).map(f64::sqrt)).collect();
                Ok(DMatrix::from_diagonal(&DVector::from_vec(v?)))
            }
        }
    }

    /// `τ(y)` with coordinates clamped into range; reports whether any clamped.
    pub fn evaluate_clamped(&self, y: &[f64]) -> (DMatrix<f64>, bool) {
        match &self.shape {
            Shape::Constant { tau, .. } => (tau.clone(), false),
            Shape::Diagonal(k) => {
                let mut clipped = false;
                let v = k.iter().zip(y).map(|(k, y)| {
                    let (v, c) = k.eval_clamped(*y);
                    clipped |= c;
                    v
                });
                let d = DMatrix::from_diagonal(&DVector::from_iterator(k.len(), v));
                (d, clipped)
            }
        }
    }
}

fn kernel_from_map(map: &MomentMap1D) -> Result<Kernel1d> {
    let slopes = (0..map.len())
        .map(|i| {
            let (y, t) = (map.phi_prime[i], map.phi_second[i]);
            let (dl, _) = map.target.dlog_pdf(y);
            -y - dl * t
        })
        .collect();
    Kernel1d::new(map.phi_prime.clone(), map.phi_second.clone(), slopes)
}

/// `τ_μ(y) = φ''((φ')⁻¹(y))`, diagonal across product factors.
pub fn kernel_from_moment_map(map: &MomentMapProduct) -> Result<SteinKernelField> {
    for (i, f) in map.factors.iter().enumerate() {
        if !f.accepted() {
            return Err(Error::invalid(format!("moment map of factor {i} failed its residual checks: {:?}", f.residuals())));
        }
    }
    let kernels: Result<Vec<_>> = map.factors.iter().map(kernel_from_map).collect();
    let measure = make_product(map.factors.iter().map(|f| f.target.clone()).collect())?;
    SteinKernelField::diagonal(measure, kernels?, Provenance::MomentMap)
}

pub fn kernel_from_moment_map_1d(map: &MomentMap1D) -> Result<SteinKernelField> {
    kernel_from_moment_map(&MomentMapProduct { factors: vec![map.clone()] })
}

/// `∫_e^{±∞} tρ` beyond a table edge, to leading order.
fn edge_tail(f: &Factor, e: f64) -> f64 {
    let (dl, _) = f.dlog_pdf(e);
    e * f.pdf(e) / dl.abs()
}

/// `τ(y) = ρ(y)⁻¹ ∫_y^∞ tρ(t) dt` (lower integral for `y < 0`), tabulated.
pub fn closed_form_factor(f: &Factor) -> Result<Kernel1d> {
    let sd = f.variance().sqrt();
    if f.mean().abs() > 1e-8 * sd {
        return Err(Error::invalid(format!("closed-form kernel needs a centred measure (mean {})", f.mean())));
    }
    let (lo, hi) = f.range();
    let n = CLOSED_FORM_NODES;
    let h = (hi - lo) / (n - 1) as f64;
    let ys: Vec<f64> = (0..n).map(|k| lo + k as f64 * h).collect();
    let cells: Vec<f64> = (0..n - 1)
        .into_par_iter()
        .map(|k| gauss_legendre(|t| t * f.pdf(t), ys[k], ys[k + 1]))
        .collect();
    let mut upper = vec![0.0; n];
    upper[n - 1] = edge_tail(f, hi);
    for k in (0..n - 1).rev() {
        upper[k] = upper[k + 1] + cells[k];
    }
    let mut lower = vec![0.0; n];
    lower[0] = edge_tail(f, lo);
    for k in 0..n - 1 {
        lower[k + 1] = lower[k] + cells[k];
    }
    let first_moment = lower[n - 1] + edge_tail(f, hi);
    if first_moment.abs() > 1e-8 * sd {
        return Err(Error::invalid(format!("measure is not centred (∫tρ = {first_moment:.3e})")));
    }
    let mut vals = Vec::with_capacity(n);
    let mut slopes = Vec::with_capacity(n);
    for k in 0..n {
        let y = ys[k];
        let j = if y >= 0.0 { upper[k] } else { -lower[k] };
        let t = (j / f.pdf(y)).max(0.0);
        let (dl, _) = f.dlog_pdf(y);
        vals.push(t);
        slopes.push(-y - dl * t);
    }
    Kernel1d::new(ys, vals, slopes)
}

/// Independent 1D (or coordinate-wise product) kernel from the integral formula.
pub fn kernel_closed_form_1d(m: &MeasureSpec) -> Result<SteinKernelField> {
    let factors = m
        .factors()
        .ok_or_else(|| Error::invalid(format!("closed-form kernels need a product measure, got {}", m.describe())))?;
    let kernels: Result<Vec<_>> = factors.iter().map(closed_form_factor).collect();
    SteinKernelField::diagonal(m.clone(), kernels?, Provenance::ClosedForm1d)
}

#[derive(Debug, Clone, Serialize)]
pub struct SteinResidual {
    pub function: String,
    /// `E[⟨∇f, X⟩] - E[⟨Hess f, τ⟩_HS]`
    pub residual: Estimate,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub clip_fraction: f64,
    pub flagged: bool,
}

/// Monte Carlo Stein identity check under `m`.
pub fn stein_identity_residual(
    m: &MeasureSpec,
    k: &SteinKernelField,
    f: &TestFunction,
    n: usize,
    seed: u64,
) -> Result<SteinResidual> {
    if m.dim() != k.dim() {
        return Err(Error::invalid("measure and kernel dimensions differ"));
    }
    let xs = m.sample(n, seed)?;
    let d = m.dim();
    let rows: Vec<(f64, f64, bool)> = xs
        .points()
        .par_chunks(d)
        .map(|x| {
            let g = (f.grad)(x);
            let h = (f.hess)(x);
            let (tau, clipped) = k.evaluate_clamped(x);
            let lhs: f64 = g.iter().zip(x).map(|(a, b)| a * b).sum();
            (lhs, h.component_mul(&tau).sum(), clipped)
        })
        .collect();
    let lhs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let rhs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let diff: Vec<f64> = rows.iter().map(|r| r.0 - r.1).collect();
    let clip_fraction = rows.iter().filter(|r| r.2).count() as f64 / n as f64;
    Ok(SteinResidual {
        function: f.name.clone(),
        residual: Estimate::from_samples(&diff),
        lhs: Estimate::from_samples(&lhs),
        rhs: Estimate::from_samples(&rhs),
        clip_fraction,
        flagged: clip_fraction > CLIP_FLAG,
    })
}

/// Quadrature Stein identity residual in 1D over the kernel range
/// (the whole effective support for constant kernels).
pub fn stein_identity_quadrature(k: &SteinKernelField, f: &TestFunction) -> Result<f64> {
    let factor = k
        .domain_measure()
        .univariate()
        .ok_or_else(|| Error::invalid("quadrature Stein check is one-dimensional"))?;
    let (flo, fhi) = factor.range();
    let (klo, khi) = k.ranges()[0];
    let (lo, hi) = (flo.max(klo), fhi.min(khi));
    let integrand = |x: f64| {
        let p = [x];
        let g = (f.grad)(&p)[0];
        let h = (f.hess)(&p)[(0, 0)];
        let (tau, _) = k.evaluate_clamped(&p);
        (x * g - h * tau[(0, 0)]) * factor.pdf(x)
    };
    // split at 0 so each panel sees a smooth kernel table
    let a = integrate(integrand, lo, 0.0, 1e-14, 1e-12)?;
    let b = integrate(integrand, 0.0, hi, 1e-14, 1e-12)?;
    Ok(a.value + b.value)
}

/// The kernel diffusion, with a counter of coordinate clamps into the kernel range.
#[derive(Clone)]
pub struct SteinProcess {
    pub process: Process,
    pub clamps: Arc<AtomicU64>,
}

impl SteinProcess {
    pub fn clamp_count(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }
}

/// `dX = -X dt + √2·√τ(X) dB` for a kernel bounded away from zero.
pub fn stein_sde(k: &SteinKernelField) -> Result<SteinProcess> {
    let lb = k.lower_bound();
    if !(lb > 0.0) {
        return Err(Error::invalid(format!("kernel lower bound {lb} is not positive")));
    }
    let clamps = Arc::new(AtomicU64::new(0));
    let diffusion = match &k.shape {
        Shape::Constant { sqrt, .. } => {
            let d = sqrt.nrows();
            let c = sqrt[(0, 0)];
            if (sqrt - DMatrix::identity(d, d) * c).amax() == 0.0 {
                Diffusion::Scalar(c)
            } else {
                let s = sqrt.clone();
                Diffusion::Matrix(Arc::new(move |_, out: &mut DMatrix<f64>| out.copy_from(&s)))
            }
        }
        Shape::Diagonal(kernels) => {
            let kernels = kernels.clone();
            let counter = clamps.clone();
            Diffusion::Diagonal(Arc::new(move |x: &[f64], out: &mut [f64]| {
                for ((o, k), y) in out.iter_mut().zip(&kernels).zip(x) {
                    let (v, c) = k.eval_clamped(*y);
                    if c {
                        counter.fetch_add(1, Ordering::Relaxed);
                    }
                    *o = v.sqrt();
                }
            }))
        }
    };
    Ok(SteinProcess { process: Process { drift: Drift::Linear(-1.0), diffusion }, clamps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::measures::{make_gibbs_1d, make_isotropic};
    use crate::moment_map::{solve_moment_map_1d, GridSpec};
    use crate::sde::generator_residual;
    use std::collections::BTreeMap;

    fn logcosh() -> MeasureSpec {
        make_gibbs_1d(Expr::parse("x^2/2 + 0.3*logcosh(x)", &["x"], &BTreeMap::new()).unwrap()).unwrap()
    }

    fn map_kernel(m: &MeasureSpec) -> SteinKernelField {
        kernel_from_moment_map_1d(&solve_moment_map_1d(m, GridSpec::default()).unwrap()).unwrap()
    }

    #[test]
    fn gaussian_kernels_are_constant() {
        let k = map_kernel(&make_isotropic(1, 1.0).unwrap());
        let (lo, hi) = k.ranges()[0];
        for i in 0..=200 {
            let y = lo + (hi - lo) * i as f64 / 200.0;
            assert!((k.evaluate(&[y]).unwrap()[(0, 0)] - 1.0).abs() < 1e-6);
        }
        let k4 = map_kernel(&make_isotropic(1, 4.0).unwrap());
        for y in [-15.0, -3.0, 0.0, 0.7, 5.0, 15.0] {
            assert!((k4.evaluate(&[y]).unwrap()[(0, 0)] - 4.0).abs() < 1e-5);
        }
        assert!(matches!(k4.evaluate(&[1e10]), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn closed_form_gaussians() {
        for s in [1.0, 0.25, 4.0] {
            let k = kernel_closed_form_1d(&make_isotropic(1, s).unwrap()).unwrap();
            let (lo, hi) = k.ranges()[0];
            for i in 0..=100 {
                let y = lo + (hi - lo) * i as f64 / 100.0;
                let t = k.evaluate(&[y]).unwrap()[(0, 0)];
                assert!((t - s).abs() < 1e-8 * s, "s = {s}, y = {y}: {t}");
            }
        }
        let shifted = make_product(vec![Factor::Normal { mean: 0.5, sd: 1.0 }]).unwrap();
        assert!(kernel_closed_form_1d(&shifted).is_err());
    }

    #[test]
    fn cross_oracle_logcosh() {
        let m = logcosh();
        let a = map_kernel(&m);
        let b = kernel_closed_form_1d(&m).unwrap();
        let f = m.univariate().unwrap();
        let (lo, hi) = (f.quantile(0.0015), f.quantile(0.9985));
        let mut worst = 0.0f64;
        for i in 0..=1000 {
            let y = lo + (hi - lo) * i as f64 / 1000.0;
            let d = a.evaluate(&[y]).unwrap()[(0, 0)] - b.evaluate(&[y]).unwrap()[(0, 0)];
            worst = worst.max(d.abs());
        }
        assert!(worst < 1e-4, "sup difference {worst}");
        assert!(a.lower_bound() >= 1.0 / 1.3 - 1e-6);
    }

    #[test]
    fn kernel_mean_matches_variance() {
        let m = logcosh();
        let k = map_kernel(&m);
        let f = m.univariate().unwrap();
        let e_tau = f.expect(|x| k.evaluate_clamped(&[x]).0[(0, 0)]);
        assert!((e_tau - f.variance()).abs() < 1e-6, "{e_tau} vs {}", f.variance());
    }

    #[test]
    fn quadrature_identity() {
        let g = make_isotropic(1, 1.0).unwrap();
        let k = SteinKernelField::gaussian(&g).unwrap();
        for f in [TestFunction::power(1, 0, 2), TestFunction::power(1, 0, 3)] {
            assert!(stein_identity_quadrature(&k, &f).unwrap().abs() < 1e-10);
        }
        let k = map_kernel(&logcosh());
        for f in TestFunction::battery(1) {
            let r = stein_identity_quadrature(&k, &f).unwrap();
            assert!(r.abs() < 1e-6, "{}: {r}", f.name);
        }
    }

    #[test]
    fn monte_carlo_identity() {
        let m = logcosh();
        let k = map_kernel(&m);
        for f in TestFunction::battery(1) {
            let r = stein_identity_residual(&m, &k, &f, 100_000, 11).unwrap();
            assert!(r.residual.value.abs() < 3.0 * r.residual.se, "{}: {:?}", f.name, r.residual);
            assert!(!r.flagged);
        }
    }

    #[test]
    fn gaussian_kernel_sde_is_ou() {
        let k = SteinKernelField::gaussian(&make_isotropic(2, 1.0).unwrap()).unwrap();
        let p = stein_sde(&k).unwrap();
        assert!(matches!(p.process.drift, Drift::Linear(c) if c == -1.0));
        assert!(matches!(p.process.diffusion, Diffusion::Scalar(c) if c == 1.0));
    }

    #[test]
    fn kernel_sde_generator_vanishes() {
        let m = logcosh();
        let sp = stein_sde(&map_kernel(&m)).unwrap();
        for f in [TestFunction::power(1, 0, 2), TestFunction::power(1, 0, 4)] {
            let r = generator_residual(&sp.process.drift, &sp.process.diffusion, &m, &f, 100_000, 5).unwrap();
            assert!(r.value.abs() < 3.0 * r.se, "{}: {r:?}", f.name);
        }
    }

    #[test]
    fn degenerate_kernel_is_refused() {
        let k = Kernel1d::new(vec![-1.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let f = SteinKernelField::diagonal(make_isotropic(1, 1.0).unwrap(), vec![k], Provenance::ClosedForm1d).unwrap();
        assert!(stein_sde(&f).is_err());
    }
}
