//! One-dimensional factors: closed-form normals and tabulated Gibbs densities.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::quadrature::gauss_legendre;
use crate::rng::{open_uniform, StreamRng};

/// Tail cutoff for Gibbs tables: the potential rises this far above its
/// minimum at both table ends, leaving a tail mass far below 1e-12.
const TAIL_RISE: f64 = 60.0;
const CELLS: usize = 4096;

/// A centred one-dimensional density `exp(-V(x + shift)) / Z`, tabulated for
/// CDF and quantile evaluation.
#[derive(Debug)]
pub struct Gibbs1d {
    potential: Expr,
    vmin: f64,
    shift: f64,
    ln_z: f64,
    lo: f64,
    h: f64,
    cum: Vec<f64>,
    tail: Vec<f64>,
    vpp_range: (f64, f64),
    variance: f64,
}

impl Gibbs1d {
    pub fn new(potential: Expr) -> Result<Self> {
        if potential.arity() != 1 {
            return Err(Error::invalid("Gibbs potential must have exactly one variable"));
        }
        let v = |x: f64| potential.eval::<f64>(&[x]);
        let dv = |x: f64| potential.jet(x).d1;

        // bracket the minimiser; failure means exp(-V) is not integrable
        let mut a = -1.0;
        while !(dv(a) < 0.0) {
            a *= 2.0;
            if a < -1e6 || !dv(a).is_finite() {
                return Err(Error::NonIntegrable(format!(
                    "V = {} has no minimiser on the left",
                    potential.source()
                )));
            }
        }
        let mut b = 1.0;
        while !(dv(b) > 0.0) {
            b *= 2.0;
            if b > 1e6 || !dv(b).is_finite() {
                return Err(Error::NonIntegrable(format!(
                    "V = {} has no minimiser on the right",
                    potential.source()
                )));
            }
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if dv(m) < 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        let mode = 0.5 * (a + b);
        let vmin = v(mode);

        let edge = |dir: f64| -> Result<f64> {
            let mut step = 0.5;
            let mut x = mode + dir * step;
            while v(x) - vmin < TAIL_RISE {
                step *= 1.25;
                x = mode + dir * step;
                if step > 1e7 {
                    return Err(Error::NonIntegrable(format!(
                        "V = {} does not grow in the tails",
                        potential.source()
                    )));
                }
            }
            Ok(x)
        };
        let lo = edge(-1.0)?;
        let hi = edge(1.0)?;

        let mut vpp = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..=2000 {
            let x = lo + (hi - lo) * i as f64 / 2000.0;
            let d2 = potential.jet(x).d2;
            if !(d2 > 0.0) {
                return Err(Error::NotLogConcave(format!(
                    "V''({x:.4}) = {d2:.3e} for V = {}",
                    potential.source()
                )));
            }
            vpp = (vpp.0.min(d2), vpp.1.max(d2));
        }

        let h = (hi - lo) / CELLS as f64;
        let w = |x: f64| (-(v(x) - vmin)).exp();
        let mut mass = Vec::with_capacity(CELLS);
        let mut first = 0.0;
        for i in 0..CELLS {
            let (x0, x1) = (lo + i as f64 * h, lo + (i + 1) as f64 * h);
            mass.push(gauss_legendre(w, x0, x1));
            first += gauss_legendre(|x| x * w(x), x0, x1);
        }
        let z: f64 = mass.iter().sum();
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::NonIntegrable(format!("normalising mass {z}")));
        }
        let shift = first / z;
        let mut cum = vec![0.0; CELLS + 1];
        for i in 0..CELLS {
            cum[i + 1] = cum[i] + mass[i] / z;
        }
        let mut tail = vec![0.0; CELLS + 1];
        for i in (0..CELLS).rev() {
            tail[i] = tail[i + 1] + mass[i] / z;
        }
        for i in 1..=CELLS {
            if cum[i] < cum[i - 1] {
                return Err(Error::NonIntegrable("non-monotone CDF table".into()));
            }
        }
        let mut second = 0.0;
        for i in 0..CELLS {
            let (x0, x1) = (lo + i as f64 * h, lo + (i + 1) as f64 * h);
            second += gauss_legendre(|x| (x - shift).powi(2) * w(x), x0, x1);
        }
        Ok(Gibbs1d {
            potential,
            vmin,
            shift,
            ln_z: z.ln(),
            lo,
            h,
            cum,
            tail,
            vpp_range: vpp,
            variance: second / z,
        })
    }

    pub fn potential(&self) -> &Expr {
        &self.potential
    }

    /// Shift applied to the raw coordinate so that the measure is centred.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Range of V'' observed on the table.
    pub fn curvature_range(&self) -> (f64, f64) {
        self.vpp_range
    }

    /// Log of the partition function of the raw potential.
    pub fn normalization(&self) -> f64 {
        self.ln_z - self.vmin
    }

    fn raw(&self, y: f64) -> f64 {
        y + self.shift
    }

    fn hi(&self) -> f64 {
        self.lo + self.h * CELLS as f64
    }

    fn weight(&self, x: f64) -> f64 {
        (-(self.potential.eval::<f64>(&[x]) - self.vmin)).exp()
    }

    fn log_pdf(&self, y: f64) -> f64 {
        -(self.potential.eval::<f64>(&[self.raw(y)]) - self.vmin) - self.ln_z
    }

    fn cell(&self, x: f64) -> usize {
        (((x - self.lo) / self.h).floor() as usize).min(CELLS - 1)
    }

    fn cdf(&self, y: f64) -> f64 {
        let x = self.raw(y);
        if x <= self.lo {
            return self.mills(x);
        }
        if x >= self.hi() {
            return 1.0 - self.mills(x);
        }
        let i = self.cell(x);
        let x0 = self.lo + i as f64 * self.h;
        self.cum[i] + gauss_legendre(|t| self.weight(t), x0, x) / self.ln_z.exp()
    }

    fn sf(&self, y: f64) -> f64 {
        let x = self.raw(y);
        if x <= self.lo {
            return 1.0 - self.mills(x);
        }
        if x >= self.hi() {
            return self.mills(x);
        }
        let i = self.cell(x);
        let x1 = self.lo + (i + 1) as f64 * self.h;
        self.tail[i + 1] + gauss_legendre(|t| self.weight(t), x, x1) / self.ln_z.exp()
    }

    /// Leading-order tail mass beyond `x` (outside the table).
    fn mills(&self, x: f64) -> f64 {
        let j = self.potential.jet(x);
        (-(j.v - self.vmin) - self.ln_z).exp() / j.d1.abs()
    }

    fn quantile(&self, u: f64) -> f64 {
        let upper = u > 0.5;
        // locate the cell, then cubic Hermite in u with slopes dx/du = 1/rho
        let i = if upper {
            let s = 1.0 - u;
            // tail is decreasing
            let k = self.tail.partition_point(|&t| t > s);
            k.saturating_sub(1).min(CELLS - 1)
        } else {
            let k = self.cum.partition_point(|&c| c <= u);
            k.saturating_sub(1).min(CELLS - 1)
        };
        let x0 = self.lo + i as f64 * self.h;
        let x1 = x0 + self.h;
        let (u0, u1) = (self.cum[i], self.cum[i + 1]);
        let z = self.ln_z.exp();
        let (r0, r1) = (self.weight(x0) / z, self.weight(x1) / z);
        let du = u1 - u0;
        let mut x = if du > 0.0 && r0 > 0.0 && r1 > 0.0 {
            let t = ((u - u0) / du).clamp(0.0, 1.0);
            let (m0, m1) = (du / r0, du / r1);
            let t2 = t * t;
            let t3 = t2 * t;
            (2.0 * t3 - 3.0 * t2 + 1.0) * x0
                + (t3 - 2.0 * t2 + t) * m0
                + (-2.0 * t3 + 3.0 * t2) * x1
                + (t3 - t2) * m1
        } else {
            0.5 * (x0 + x1)
        };
        x = x.clamp(x0, x1);
        // one Newton polish against the exact cumulative
        let y = x - self.shift;
        let r = (self.log_pdf(y)).exp();
        if r > 0.0 {
            let step = if upper { (self.sf(y) - (1.0 - u)) / r } else { -(self.cdf(y) - u) / r };
            let polished = x + step;
            if polished.is_finite() && (polished - x).abs() < self.h {
                x = polished;
            }
        }
        x - self.shift
    }

    /// Effective support in centred coordinates.
    pub fn range(&self) -> (f64, f64) {
        (self.lo - self.shift, self.hi() - self.shift)
    }
}

/// A one-dimensional probability law usable as a coordinate of a product.
#[derive(Debug, Clone)]
pub enum Factor {
    Normal { mean: f64, sd: f64 },
    Gibbs(Arc<Gibbs1d>),
}

impl Factor {
    pub fn log_pdf(&self, x: f64) -> f64 {
        match self {
            Factor::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
            }
            Factor::Gibbs(g) => g.log_pdf(x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    /// First and second derivative of the log density.
    pub fn dlog_pdf(&self, x: f64) -> (f64, f64) {
        match self {
            Factor::Normal { mean, sd } => (-(x - mean) / (sd * sd), -1.0 / (sd * sd)),
            Factor::Gibbs(g) => {
                let j = g.potential.jet(g.raw(x));
                (-j.d1, -j.d2)
            }
        }
    }

    /// Unnormalised log density and its log partition function.
    pub fn log_density(&self, x: f64) -> f64 {
        match self {
            Factor::Normal { mean, sd } => -0.5 * ((x - mean) / sd).powi(2),
            Factor::Gibbs(g) => -g.potential.eval::<f64>(&[g.raw(x)]),
        }
    }

    pub fn normalization(&self) -> f64 {
        match self {
            Factor::Normal { sd, .. } => sd.ln() + 0.5 * (2.0 * PI).ln(),
            Factor::Gibbs(g) => g.normalization(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Factor::Normal { mean, sd } => 0.5 * erfc(-(x - mean) / (sd * SQRT_2)),
            Factor::Gibbs(g) => g.cdf(x),
        }
    }

    pub fn sf(&self, x: f64) -> f64 {
        match self {
            Factor::Normal { mean, sd } => 0.5 * erfc((x - mean) / (sd * SQRT_2)),
            Factor::Gibbs(g) => g.sf(x),
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Factor::Normal { mean, sd } => Normal::new(*mean, *sd)
                .expect("validated normal parameters")
                .inverse_cdf(u),
            Factor::Gibbs(g) => g.quantile(u),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Factor::Normal { mean, .. } => *mean,
            Factor::Gibbs(_) => 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Factor::Normal { sd, .. } => sd * sd,
            Factor::Gibbs(g) => g.variance,
        }
    }

    /// Largest α with α ≤ V'' ≤ 1/α.
    pub fn alpha(&self) -> f64 {
        let (lo, hi) = match self {
            Factor::Normal { sd, .. } => (1.0 / (sd * sd), 1.0 / (sd * sd)),
            Factor::Gibbs(g) => g.vpp_range,
        };
        lo.min(1.0 / hi)
    }

    /// Interval carrying all but a negligible (< 1e-20) amount of mass.
    pub fn range(&self) -> (f64, f64) {
        match self {
            Factor::Normal { mean, sd } => (mean - 10.0 * sd, mean + 10.0 * sd),
            Factor::Gibbs(g) => g.range(),
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match self {
            Factor::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            Factor::Gibbs(g) => g.quantile(open_uniform(rng)),
        }
    }

    /// ∫ f(x) ρ(x) dx over the effective range, by GL10 panels.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let (lo, hi) = self.range();
        let n = 2048;
        let h = (hi - lo) / n as f64;
        (0..n)
            .map(|i| {
                let a = lo + i as f64 * h;
                gauss_legendre(|x| f(x) * self.pdf(x), a, a + h)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn gibbs(src: &str) -> Result<Gibbs1d> {
        Gibbs1d::new(Expr::parse(src, &["x"], &BTreeMap::new()).unwrap())
    }

    #[test]
    fn quadratic_potential_is_standard_normal() {
        let g = Factor::Gibbs(Arc::new(gibbs("x^2/2").unwrap()));
        let n = Factor::Normal { mean: 0.0, sd: 1.0 };
        for i in 0..=100 {
            let x = -5.0 + 0.1 * i as f64;
            assert_relative_eq!(g.log_pdf(x), n.log_pdf(x), epsilon = 1e-10);
            assert_relative_eq!(g.cdf(x), n.cdf(x), epsilon = 1e-10);
            assert_relative_eq!(g.sf(x), n.sf(x), epsilon = 1e-10);
        }
        assert_relative_eq!(g.variance(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn off_centre_potential_is_recentred() {
        let g = gibbs("(x-3)^2/2 + 0.5*logcosh(x-3) + 0.2*x").unwrap();
        let f = Factor::Gibbs(Arc::new(g));
        assert!(f.expect(|x| x).abs() < 1e-10);
        assert_relative_eq!(f.expect(|_| 1.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let f = Factor::Gibbs(Arc::new(gibbs("x^2/2 + 0.3*logcosh(x)").unwrap()));
        for &u in &[1e-9, 1e-4, 0.1, 0.37, 0.5, 0.8, 0.999, 1.0 - 1e-9] {
            let x = f.quantile(u);
            let back = if u > 0.5 { 1.0 - f.sf(x) } else { f.cdf(x) };
            assert_relative_eq!(back, u, max_relative = 1e-9);
        }
    }

    #[test]
    fn rejects_non_integrable_and_non_convex() {
        assert!(matches!(gibbs("-x^2"), Err(Error::NonIntegrable(_))));
        assert!(matches!(gibbs("x"), Err(Error::NonIntegrable(_))));
        assert!(matches!(gibbs("x^4/4 - x^2"), Err(Error::NotLogConcave(_))));
    }

    #[test]
    fn logcosh_alpha() {
        let f = Factor::Gibbs(Arc::new(gibbs("x^2/2 + 0.3*logcosh(x)").unwrap()));
        assert_relative_eq!(f.alpha(), 1.0 / 1.3, epsilon = 1e-6);
    }
}
