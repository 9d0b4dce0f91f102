use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Multivariate normal with cached Cholesky factor and precision.
#[derive(Debug, Clone)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("empty mean vector"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::invalid(format!(
                "covariance is {}x{}, expected {d}x{d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite Gaussian parameters"));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let chol = cov.clone().cholesky().ok_or_else(|| {
            let min_eig = cov.clone().symmetric_eigenvalues().min();
            Error::NotPositiveDefinite(format!("smallest eigenvalue {min_eig:.6}"))
        })?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(Gaussian { mean, cov, chol: l, precision, log_det })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let r = DVector::from_column_slice(x) - &self.mean;
        -0.5 * r.dot(&(&self.precision * &r))
    }

    pub fn normalization(&self) -> f64 {
        0.5 * (self.dim() as f64 * (2.0 * PI).ln() + self.log_det)
    }

    pub fn grad_log(&self, x: &[f64]) -> DVector<f64> {
        let r = DVector::from_column_slice(x) - &self.mean;
        -(&self.precision * r)
    }

    /// `Some(s)` when the covariance is `s·I`.
    pub fn isotropic_scale(&self) -> Option<f64> {
        let s = self.cov[(0, 0)];
        let d = self.dim();
        let iso = (0..d).all(|i| (0..d).all(|j| self.cov[(i, j)] == if i == j { s } else { 0.0 }));
        iso.then_some(s)
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.cov[(i, j)] == 0.0))
    }
}

/// Exact W2 between two Gaussians:
/// `|m1-m2|² + tr(Σ1 + Σ2 - 2 (Σ2^½ Σ1 Σ2^½)^½)`, returned as W2 (not squared).
pub fn w2_gaussian_oracle(
    mean1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mean2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let a = Gaussian::new(mean1.clone(), cov1.clone())?;
    let b = Gaussian::new(mean2.clone(), cov2.clone())?;
    if a.dim() != b.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    let s2 = crate::sde::spd_sqrt(&b.cov)?;
    let inner = &s2 * &a.cov * &s2;
    let inner = 0.5 * (&inner + inner.transpose());
    let cross = crate::sde::spd_sqrt(&inner)?;
    let tr = a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
    let d2 = (&a.mean - &b.mean).norm_squared() + tr.max(0.0);
    Ok(d2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn standard_normal_at_origin() {
        let g = Gaussian::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(g.log_density(&[0.0, 0.0]) - g.normalization(), -(2.0 * PI).ln());
    }

    #[test]
    fn indefinite_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            Gaussian::new(DVector::zeros(2), cov),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn oracle_one_dimensional_quantile_coupling() {
        let z = DVector::zeros(1);
        let w = w2_gaussian_oracle(&z, &DMatrix::identity(1, 1), &z, &DMatrix::from_element(1, 1, 4.0))
            .unwrap();
        assert_relative_eq!(w, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_isotropic_and_means() {
        for d in 1..=4 {
            for &s in &[0.25, 0.5, 4.0] {
                let z = DVector::zeros(d);
                let w = w2_gaussian_oracle(
                    &z,
                    &DMatrix::identity(d, d),
                    &z,
                    &(DMatrix::identity(d, d) * s),
                )
                .unwrap();
                assert_relative_eq!(w, (d as f64).sqrt() * (1.0 - s.sqrt()).abs(), epsilon = 1e-10);
            }
        }
        let m1 = DVector::from_vec(vec![1.0, 2.0]);
        let m2 = DVector::from_vec(vec![-2.0, 6.0]);
        let i = DMatrix::identity(2, 2);
        assert_relative_eq!(w2_gaussian_oracle(&m1, &i, &m2, &i).unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_commuting_covariances() {
        // diagonal case reduces to per-coordinate |sqrt(a) - sqrt(b)|
        let z = DVector::zeros(2);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 9.0]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let w = w2_gaussian_oracle(&z, &a, &z, &b).unwrap();
        assert_relative_eq!(w, (1.0f64 + 4.0).sqrt(), epsilon = 1e-12);
    }
}
