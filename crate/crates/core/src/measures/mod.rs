//! Analytic and empirical probability measures.

mod empirical;
mod gaussian;
mod univariate;

use std::fmt;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

pub use empirical::EmpiricalMeasure;
pub use gaussian::{w2_gaussian_oracle, Gaussian};
pub use univariate::{Factor, Gibbs1d};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::quadrature::{integrate, integrate_2d};
use crate::rng::{self, Purpose, StreamRng};
use crate::stats::Estimate;

const SAMPLE_BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    Full,
    Box(Vec<(f64, f64)>),
}

#[derive(Debug)]
enum Kind {
    Gaussian(Gaussian),
    Product(Vec<Factor>),
    Dirac(Vec<f64>),
}

/// Immutable, cheaply clonable analytic measure.
#[derive(Clone)]
pub struct MeasureSpec(Arc<Kind>);

impl fmt::Debug for MeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

pub fn make_gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<MeasureSpec> {
    Ok(MeasureSpec(Arc::new(Kind::Gaussian(Gaussian::new(mean, cov)?))))
}

/// Isotropic centred Gaussian `N(0, s I_d)`.
pub fn make_isotropic(d: usize, s: f64) -> Result<MeasureSpec> {
    make_gaussian(DVector::zeros(d), DMatrix::identity(d, d) * s)
}

/// One-dimensional Gibbs measure `exp(-V)`, recentred to mean zero.
pub fn make_gibbs_1d(potential: Expr) -> Result<MeasureSpec> {
    let g = Gibbs1d::new(potential)?;
    Ok(MeasureSpec(Arc::new(Kind::Product(vec![Factor::Gibbs(Arc::new(g))]))))
}

pub fn make_product(factors: Vec<Factor>) -> Result<MeasureSpec> {
    if factors.is_empty() {
        return Err(Error::invalid("product of zero factors"));
    }
    Ok(MeasureSpec(Arc::new(Kind::Product(factors))))
}

pub fn make_dirac(point: Vec<f64>) -> Result<MeasureSpec> {
    if point.is_empty() || point.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("point mass needs a finite, non-empty location"));
    }
    Ok(MeasureSpec(Arc::new(Kind::Dirac(point))))
}

impl MeasureSpec {
    pub fn dim(&self) -> usize {
        match &*self.0 {
            Kind::Gaussian(g) => g.dim(),
            Kind::Product(f) => f.len(),
            Kind::Dirac(p) => p.len(),
        }
    }

    pub fn describe(&self) -> String {
        match &*self.0 {
            Kind::Gaussian(g) => format!(
                "gaussian(mean={:?}, cov={:?})",
                g.mean.as_slice(),
                g.cov.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>()
            ),
            Kind::Product(f) if f.len() == 1 => describe_factor(&f[0]),
            Kind::Product(f) => {
                let parts: Vec<String> = f.iter().map(describe_factor).collect();
                format!("product[{}]", parts.join(", "))
            }
            Kind::Dirac(p) => format!("dirac({p:?})"),
        }
    }

    pub fn as_gaussian(&self) -> Option<&Gaussian> {
        match &*self.0 {
            Kind::Gaussian(g) => Some(g),
            _ => None,
        }
    }

    pub fn is_dirac(&self) -> bool {
        matches!(&*self.0, Kind::Dirac(_))
    }

    /// Coordinate factors when the measure is a product (diagonal Gaussians
    /// included).
    pub fn factors(&self) -> Option<Vec<Factor>> {
        match &*self.0 {
            Kind::Gaussian(g) if g.is_diagonal() => Some(
                (0..g.dim())
                    .map(|i| Factor::Normal { mean: g.mean[i], sd: g.cov[(i, i)].sqrt() })
                    .collect(),
            ),
            Kind::Product(f) => Some(f.clone()),
            _ => None,
        }
    }

    /// The single factor of a one-dimensional measure.
    pub fn univariate(&self) -> Option<Factor> {
        self.factors().filter(|f| f.len() == 1).map(|mut f| f.remove(0))
    }

    pub fn support(&self) -> Support {
        match &*self.0 {
            Kind::Dirac(p) => Support::Box(p.iter().map(|v| (*v, *v)).collect()),
            _ => Support::Full,
        }
    }

    /// Box carrying all but negligible mass, used for quadrature.
    pub fn quadrature_box(&self) -> Vec<(f64, f64)> {
        match &*self.0 {
            Kind::Gaussian(g) => (0..g.dim())
                .map(|i| {
                    let s = g.cov[(i, i)].sqrt();
                    (g.mean[i] - 10.0 * s, g.mean[i] + 10.0 * s)
                })
                .collect(),
            Kind::Product(f) => f.iter().map(Factor::range).collect(),
            Kind::Dirac(p) => p.iter().map(|v| (*v, *v)).collect(),
        }
    }

    /// Unnormalised log density.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        match &*self.0 {
            Kind::Gaussian(g) => g.log_density(x),
            Kind::Product(f) => f.iter().zip(x).map(|(f, x)| f.log_density(*x)).sum(),
            Kind::Dirac(p) => {
                if p.as_slice() == x {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Log of the partition constant, so `log_density - normalization` is the
    /// normalised log density.
    pub fn normalization(&self) -> f64 {
        match &*self.0 {
            Kind::Gaussian(g) => g.normalization(),
            Kind::Product(f) => f.iter().map(Factor::normalization).sum(),
            Kind::Dirac(_) => 0.0,
        }
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        match &*self.0 {
            Kind::Product(f) => f.iter().zip(x).map(|(f, x)| f.log_pdf(*x)).sum(),
            _ => self.log_density(x) - self.normalization(),
        }
    }

    pub fn grad_log_pdf(&self, x: &[f64]) -> Option<DVector<f64>> {
        match &*self.0 {
            Kind::Gaussian(g) => Some(g.grad_log(x)),
            Kind::Product(f) => {
                Some(DVector::from_iterator(f.len(), f.iter().zip(x).map(|(f, x)| f.dlog_pdf(*x).0)))
            }
            Kind::Dirac(_) => None,
        }
    }

    pub fn hessian_log_pdf(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        match &*self.0 {
            Kind::Gaussian(g) => Some(-g.precision().clone()),
            Kind::Product(f) => Some(DMatrix::from_diagonal(&DVector::from_iterator(
                f.len(),
                f.iter().zip(x).map(|(f, x)| f.dlog_pdf(*x).1),
            ))),
            Kind::Dirac(_) => None,
        }
    }

    /// α with αI ≤ ∇²V ≤ α⁻¹I, when known.
    pub fn convexity_alpha(&self) -> Option<f64> {
        match &*self.0 {
            Kind::Gaussian(g) => g.isotropic_scale().map(|s| s.min(1.0 / s)),
            Kind::Product(f) => Some(f.iter().map(Factor::alpha).fold(f64::INFINITY, f64::min)),
            Kind::Dirac(_) => None,
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match &*self.0 {
            Kind::Gaussian(g) => g.mean.as_slice().to_vec(),
            Kind::Product(f) => f.iter().map(Factor::mean).collect(),
            Kind::Dirac(p) => p.clone(),
        }
    }

    /// Draw one point into `out`.
    pub fn sample_point(&self, rng: &mut StreamRng, out: &mut [f64]) {
        match &*self.0 {
            Kind::Gaussian(g) => {
                let d = g.dim();
                let mut z = vec![0.0; d];
                rng::fill_normal(rng, &mut z);
                let l = g.chol();
                for i in 0..d {
                    let mut v = g.mean[i];
                    for j in 0..=i {
                        v += l[(i, j)] * z[j];
                    }
                    out[i] = v;
                }
            }
            Kind::Product(f) => {
                for (o, f) in out.iter_mut().zip(f) {
                    *o = f.sample(rng);
                }
            }
            Kind::Dirac(p) => out.copy_from_slice(p),
        }
    }

    /// `n` i.i.d. points with uniform weights. Blocks of points come from
    /// independent streams, so the output does not depend on thread count.
    pub fn sample(&self, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        let d = self.dim();
        let blocks = n.div_ceil(SAMPLE_BLOCK);
        let parts: Vec<Vec<f64>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let count = SAMPLE_BLOCK.min(n - b * SAMPLE_BLOCK);
                let mut rng = rng::stream(seed, Purpose::Sample, b as u64);
                let mut buf = vec![0.0; count * d];
                for chunk in buf.chunks_exact_mut(d) {
                    self.sample_point(&mut rng, chunk);
                }
                buf
            })
            .collect();
        EmpiricalMeasure::uniform(d, parts.concat())
    }
}

fn describe_factor(f: &Factor) -> String {
    match f {
        Factor::Normal { mean, sd } => format!("normal(mean={mean}, var={})", sd * sd),
        Factor::Gibbs(g) => format!("gibbs1d(V={}, shift={:.6e})", g.potential().source(), g.shift()),
    }
}

/// m₂²(μ) = ∫|x|² dμ. Every analytic family here has a closed form or a
/// one-dimensional quadrature per coordinate, so the SE is zero.
pub fn second_moment(m: &MeasureSpec) -> Result<Estimate> {
    let v = match &*m.0 {
        Kind::Gaussian(g) => g.cov.trace() + g.mean.norm_squared(),
        Kind::Product(f) => f.iter().map(|f| f.variance() + f.mean().powi(2)).sum(),
        Kind::Dirac(p) => p.iter().map(|v| v * v).sum(),
    };
    if !v.is_finite() {
        return Err(Error::Divergent("second moment".into()));
    }
    Ok(Estimate::exact(v))
}

/// ‖dν/dμ‖_{L^p(μ)}; `p = f64::INFINITY` gives the essential supremum.
/// Unbounded ratios and divergent integrals return `f64::INFINITY`.
pub fn relative_density_norm(nu: &MeasureSpec, mu: &MeasureSpec, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("p = {p} must be at least 1")));
    }
    if nu.dim() != mu.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    if nu.is_dirac() || mu.is_dirac() {
        warn!("relative density with a point mass: infinite norm unless identical");
        return Ok(if nu.mean() == mu.mean() && nu.is_dirac() && mu.is_dirac() {
            1.0
        } else {
            f64::INFINITY
        });
    }
    if let (Some(fn_), Some(fm)) = (nu.factors(), mu.factors()) {
        let mut total = 1.0;
        for (a, b) in fn_.iter().zip(&fm) {
            total *= norm_1d(a, b, p)?;
        }
        return Ok(total);
    }
    if nu.dim() == 2 {
        return norm_2d(nu, mu, p);
    }
    Ok(norm_monte_carlo(nu, mu, p)?.value)
}

fn union_box(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    a.iter().zip(b).map(|(x, y)| (x.0.min(y.0), x.1.max(y.1))).collect()
}

fn widen((lo, hi): (f64, f64)) -> (f64, f64) {
    let w = hi - lo;
    (lo - w, hi + w)
}

fn norm_1d(nu: &Factor, mu: &Factor, p: f64) -> Result<f64> {
    let base = union_box(&[nu.range()], &[mu.range()])[0];
    let wide = widen(base);
    let log_ratio = |x: f64| nu.log_pdf(x) - mu.log_pdf(x);
    if p.is_infinite() {
        let (s1, _) = grid_sup_1d(&log_ratio, base, 20001);
        let (s2, _) = grid_sup_1d(&log_ratio, wide, 40001);
        if !s1.is_finite() || s2 > s1 + 1e-6 {
            return Ok(f64::INFINITY);
        }
        return Ok(s1.exp());
    }
    let f = |x: f64| (p * nu.log_pdf(x) + (1.0 - p) * mu.log_pdf(x)).exp();
    let i1 = integrate(f, base.0, base.1, 1e-15, 1e-11)?.value;
    let i2 = match integrate(f, wide.0, wide.1, 1e-15, 1e-11) {
        Ok(q) => q.value,
        Err(_) => f64::INFINITY,
    };
    if !i2.is_finite() || (i2 - i1).abs() > 1e-8 * i1 {
        return Ok(f64::INFINITY);
    }
    Ok(i1.powf(1.0 / p))
}

/// Grid maximum of `f`, refined by golden-section search around the best node.
fn grid_sup_1d<F: Fn(f64) -> f64>(f: &F, (lo, hi): (f64, f64), n: usize) -> (f64, f64) {
    let h = (hi - lo) / (n - 1) as f64;
    let mut best = (f64::NEG_INFINITY, lo);
    for i in 0..n {
        let x = lo + i as f64 * h;
        let v = f(x);
        if v > best.0 {
            best = (v, x);
        }
    }
    let (mut a, mut b) = ((best.1 - h).max(lo), (best.1 + h).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let x = 0.5 * (a + b);
    let v = f(x);
    if v > best.0 {
        (v, x)
    } else {
        best
    }
}

fn norm_2d(nu: &MeasureSpec, mu: &MeasureSpec, p: f64) -> Result<f64> {
    let base = union_box(&nu.quadrature_box(), &mu.quadrature_box());
    let wide: Vec<_> = base.iter().map(|r| widen(*r)).collect();
    let log_ratio = |x: f64, y: f64| nu.log_pdf(&[x, y]) - mu.log_pdf(&[x, y]);
    if p.is_infinite() {
        let sup = |b: &[(f64, f64)], n: usize| {
            let mut s = f64::NEG_INFINITY;
            for i in 0..n {
                let x = b[0].0 + (b[0].1 - b[0].0) * i as f64 / (n - 1) as f64;
                for j in 0..n {
                    let y = b[1].0 + (b[1].1 - b[1].0) * j as f64 / (n - 1) as f64;
                    s = s.max(log_ratio(x, y));
                }
            }
            s
        };
        let s1 = sup(&base, 801);
        let s2 = sup(&wide, 1601);
        if !s1.is_finite() || s2 > s1 + 1e-4 {
            return Ok(f64::INFINITY);
        }
        return Ok(s1.exp());
    }
    let f = |x: f64, y: f64| (p * nu.log_pdf(&[x, y]) + (1.0 - p) * mu.log_pdf(&[x, y])).exp();
    let i1 = integrate_2d(f, base[0], base[1], 1e-10)?;
    let i2 = integrate_2d(f, wide[0], wide[1], 1e-10).unwrap_or(f64::INFINITY);
    if !i2.is_finite() || (i2 - i1).abs() > 1e-5 * i1 {
        return Ok(f64::INFINITY);
    }
    Ok(i1.powf(1.0 / p))
}

/// Monte Carlo ‖dν/dμ‖_{L^p(μ)} for general measures in d > 2.
pub fn norm_monte_carlo(nu: &MeasureSpec, mu: &MeasureSpec, p: f64) -> Result<Estimate> {
    let n = 200_000;
    let seed = 0x5eed_0001;
    let xs = mu.sample(n, seed)?;
    if p.is_infinite() {
        let ys = nu.sample(n, seed ^ 1)?;
        let sup = xs
            .iter()
            .chain(ys.iter())
            .map(|(x, _)| nu.log_pdf(x) - mu.log_pdf(x))
            .fold(f64::NEG_INFINITY, f64::max);
        warn!("sup-norm of a density ratio in d > 2 estimated from samples");
        return Ok(Estimate::exact(sup.exp()));
    }
    let vals: Vec<f64> = xs.iter().map(|(x, _)| (p * (nu.log_pdf(x) - mu.log_pdf(x))).exp()).collect();
    let e = Estimate::from_samples(&vals);
    let v = e.value.powf(1.0 / p);
    Ok(Estimate { value: v, se: v / (p * e.value) * e.se })
}

/// Sub-exponential parameter `max_{2≤k≤k_max} E[|X|^k]^{1/k} / k`.
pub fn subexp_parameter(m: &MeasureSpec, k_max: u32) -> Result<f64> {
    if k_max < 2 {
        return Err(Error::invalid("k_max must be at least 2"));
    }
    let d = m.dim();
    let moment = |k: u32| -> Result<f64> {
        if let Kind::Dirac(p) = &*m.0 {
            return Ok(p.iter().map(|v| v * v).sum::<f64>().sqrt().powi(k as i32));
        }
        if let Some(g) = m.as_gaussian() {
            if let (Some(s), true) = (g.isotropic_scale(), g.mean.iter().all(|v| *v == 0.0)) {
                // chi moments: E|X|^k = (2s)^{k/2} Γ((d+k)/2) / Γ(d/2)
                let (df, kf) = (d as f64, k as f64);
                return Ok((0.5 * kf * (2.0 * s).ln() + ln_gamma(0.5 * (df + kf)) - ln_gamma(0.5 * df))
                    .exp());
            }
        }
        if let Some(f) = m.univariate() {
            return Ok(f.expect(|x| x.abs().powi(k as i32)));
        }
        if d == 2 {
            let b = m.quadrature_box();
            return integrate_2d(
                |x, y| (x * x + y * y).powf(0.5 * k as f64) * m.log_pdf(&[x, y]).exp(),
                b[0],
                b[1],
                1e-10,
            );
        }
        let xs = m.sample(200_000, 0x5eed_0002)?;
        Ok(xs.iter().map(|(x, w)| w * norm(x).powi(k as i32)).sum())
    };
    let mut best = 0.0f64;
    for k in 2..=k_max {
        let mk = moment(k)?;
        if !mk.is_finite() {
            return Err(Error::Divergent(format!("moment of order {k}")));
        }
        best = best.max(mk.powf(1.0 / k as f64) / k as f64);
    }
    Ok(best)
}

pub fn subexp_parameter_empirical(e: &EmpiricalMeasure, k_max: u32) -> Result<f64> {
    if k_max < 2 {
        return Err(Error::invalid("k_max must be at least 2"));
    }
    let mut best = 0.0f64;
    for k in 2..=k_max {
        let mk: f64 = e.iter().map(|(x, w)| w * norm(x).powi(k as i32)).sum();
        best = best.max(mk.powf(1.0 / k as f64) / k as f64);
    }
    Ok(best)
}

pub fn sample(m: &MeasureSpec, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    m.sample(n, seed)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
