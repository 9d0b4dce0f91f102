//! Test functions with analytic gradients and Hessians.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

type Value = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type Grad = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
type Hess = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub value: Value,
    pub grad: Grad,
    pub hess: Hess,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TestFunction({})", self.name)
    }
}

fn unit(d: usize, i: usize, s: f64) -> DVector<f64> {
    let mut v = DVector::zeros(d);
    v[i] = s;
    v
}

fn single(d: usize, i: usize, s: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    m[(i, i)] = s;
    m
}

impl TestFunction {
    /// `x_i^k` for k in 1..=4.
    pub fn power(d: usize, i: usize, k: i32) -> Self {
        let kf = k as f64;
        TestFunction {
            name: if k == 1 { format!("x{}", i + 1) } else { format!("x{}^{k}", i + 1) },
            value: Arc::new(move |x| x[i].powi(k)),
            grad: Arc::new(move |x| unit(d, i, kf * x[i].powi(k - 1))),
            hess: Arc::new(move |x| {
                single(d, i, if k >= 2 { kf * (kf - 1.0) * x[i].powi(k - 2) } else { 0.0 })
            }),
        }
    }

    pub fn cross(d: usize, i: usize, j: usize) -> Self {
        TestFunction {
            name: format!("x{}*x{}", i + 1, j + 1),
            value: Arc::new(move |x| x[i] * x[j]),
            grad: Arc::new(move |x| {
                let mut g = DVector::zeros(d);
                g[i] += x[j];
                g[j] += x[i];
                g
            }),
            hess: Arc::new(move |_| {
                let mut h = DMatrix::zeros(d, d);
                h[(i, j)] += 1.0;
                h[(j, i)] += 1.0;
                h
            }),
        }
    }

    pub fn sine(d: usize, i: usize) -> Self {
        TestFunction {
            name: format!("sin(x{})", i + 1),
            value: Arc::new(move |x| x[i].sin()),
            grad: Arc::new(move |x| unit(d, i, x[i].cos())),
            hess: Arc::new(move |x| single(d, i, -x[i].sin())),
        }
    }

    /// `exp(-|x|²/2)`.
    pub fn gaussian_bump(d: usize) -> Self {
        TestFunction {
            name: "exp(-|x|^2/2)".into(),
            value: Arc::new(|x| (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp()),
            grad: Arc::new(move |x| {
                let e = (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp();
                DVector::from_iterator(d, x.iter().map(|v| -v * e))
            }),
            hess: Arc::new(move |x| {
                let e = (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp();
                let v = DVector::from_column_slice(x);
                (&v * v.transpose() - DMatrix::identity(d, d)) * e
            }),
        }
    }

    /// The fixed battery: x_i, x_i², x_i³, x_i x_j (i<j), sin x_i, exp(-|x|²/2).
    pub fn battery(d: usize) -> Vec<TestFunction> {
        let mut out = Vec::new();
        for i in 0..d {
            out.push(Self::power(d, i, 1));
            out.push(Self::power(d, i, 2));
            out.push(Self::power(d, i, 3));
        }
        for i in 0..d {
            for j in i + 1..d {
                out.push(Self::cross(d, i, j));
            }
        }
        for i in 0..d {
            out.push(Self::sine(d, i));
        }
        out.push(Self::gaussian_bump(d));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(f: &TestFunction, x: &[f64]) {
        let d = x.len();
        let h = 1e-5;
        let g = (f.grad)(x);
        let hs = (f.hess)(x);
        for i in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = ((f.value)(&xp) - (f.value)(&xm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "{}: grad {i}", f.name);
            let gd = ((f.grad)(&xp) - (f.grad)(&xm)) / (2.0 * h);
            for j in 0..d {
                assert!((gd[j] - hs[(j, i)]).abs() < 1e-6, "{}: hess {i}{j}", f.name);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let x = [0.3, -1.2, 0.7];
        for f in TestFunction::battery(3) {
            check(&f, &x);
        }
        check(&TestFunction::power(3, 1, 4), &x);
    }
}
