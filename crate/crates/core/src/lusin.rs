//! Empirical Lusin–Lipschitz witnesses: the smallest (in weighted `L^p`) `g ≥ 1`
//! with `‖f(x_i) - f(x_j)‖ ≤ (g_i + g_j)‖x_i - x_j‖` on a point cloud.
//!
//! The convex program `min Σ w_i g_i^p` subject to `g_i + g_j ≥ c_ij`, `g ≥ 1`
//! is solved by a primal-dual interior-point method.
//! Pairs with `c_ij ≤ 2` are implied by the floor and never enter.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;

pub const MAX_POINTS: usize = 2000;
pub const KKT_TOL: f64 = 1e-6;

/// A vector- or matrix-valued field, flattened (Frobenius norm for matrices).
pub type Field<'a> = &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync);

#[derive(Debug, Clone, Serialize)]
pub struct LusinWitness {
    pub dim: usize,
    /// Merged sample points, row-major `n × d`.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub g_values: Vec<f64>,
    pub p: f64,
    pub norm_p: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub active_pairs: usize,
    pub candidate_pairs: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Number of input points removed as exact duplicates.
    pub merged: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, max_iterations: 200 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub c: f64,
}

fn merge_duplicates(cloud: &EmpiricalMeasure) -> (Vec<f64>, Vec<f64>, usize) {
    let d = cloud.dim();
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| {
        cloud.point(a).iter().zip(cloud.point(b)).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(a.cmp(&b))
    });
    let mut pts: Vec<f64> = Vec::with_capacity(cloud.points().len());
    let mut w: Vec<f64> = Vec::with_capacity(cloud.len());
    for &k in &order {
        let x = cloud.point(k);
        let n = w.len();
        if n > 0 && pts[(n - 1) * d..] == *x {
            w[n - 1] += cloud.weights()[k];
        } else {
            pts.extend_from_slice(x);
            w.push(cloud.weights()[k]);
        }
    }
    let merged = cloud.len() - w.len();
    (pts, w, merged)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Pairs whose Lipschitz quotient (maximum over the fields) exceeds 2.
pub fn candidate_pairs(dim: usize, points: &[f64], fields: &[Field]) -> Vec<Pair> {
    let n = points.len() / dim;
    let values: Vec<Vec<Vec<f64>>> =
        (0..n).into_par_iter().map(|i| fields.iter().map(|f| f(&points[i * dim..(i + 1) * dim])).collect()).collect();
    (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let values = &values;
            (i + 1..n).filter_map(move |j| {
                let r = dist(&points[i * dim..(i + 1) * dim], &points[j * dim..(j + 1) * dim]);
                let c = values[i]
                    .iter()
                    .zip(&values[j])
                    .map(|(a, b)| dist(a, b) / r)
                    .fold(0.0, f64::max);
                (c > 2.0).then_some(Pair { i, j, c })
            })
        })
        .collect()
}

pub struct PrimalDualSolution {
    pub g: Vec<f64>,
    /// Multipliers of the pair constraints.
    pub lambda: Vec<f64>,
    /// Multipliers of the floor constraints `g ≥ 1`.
    pub floor: Vec<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub converged: bool,
}

struct Kkt {
    violation: f64,
    complementarity: f64,
    stationarity: f64,
}

impl Kkt {
    fn residual(&self) -> f64 {
        self.violation.max(self.complementarity).max(self.stationarity)
    }
}

/// Weight-relative KKT measures: primal violation, `λ_e s_e / (w_i + w_j)`,
/// `ν_i t_i / w_i`, and `|p w_i g_i^{p-1} - Λ_i - ν_i| / w_i`.
fn kkt(w: &[f64], pairs: &[Pair], p: f64, g: &[f64], lambda: &[f64], floor: &[f64]) -> Kkt {
    let n = g.len();
    let mut grad: Vec<f64> = (0..n).map(|i| p * w[i] * g[i].powf(p - 1.0) - floor[i]).collect();
    let mut violation = 0.0f64;
    let mut complementarity = 0.0f64;
    for (e, q) in pairs.iter().enumerate() {
        let slack = g[q.i] + g[q.j] - q.c;
        violation = violation.max(-slack);
        complementarity = complementarity.max(lambda[e] * slack.abs() / (w[q.i] + w[q.j]));
        grad[q.i] -= lambda[e];
        grad[q.j] -= lambda[e];
    }
    let mut stationarity = 0.0f64;
    for i in 0..n {
        violation = violation.max(1.0 - g[i]);
        complementarity = complementarity.max(floor[i] * (g[i] - 1.0).abs() / w[i]);
        stationarity = stationarity.max(grad[i].abs() / w[i]);
    }
    Kkt { violation: violation.max(0.0), complementarity, stationarity }
}

/// Primal-dual interior-point solve of `min Σ w g^p` s.t. `g_i + g_j ≥ c_ij`,
/// `g ≥ 1`, with Mehrotra predictor-corrector steps. Iterates stay strictly
/// feasible.
pub fn solve_witness(w: &[f64], pairs: &[Pair], p: f64, opts: SolverOptions) -> Result<PrimalDualSolution> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("p = {p} must be finite and greater than 1")));
    }
    if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("witness weights must be positive"));
    }
    let n = w.len();
    let k = pairs.len();
    if k == 0 {
        return Ok(PrimalDualSolution {
            g: vec![1.0; n],
            lambda: vec![],
            floor: (0..n).map(|i| p * w[i]).collect(),
            iterations: 0,
            kkt_residual: 0.0,
            max_violation: 0.0,
            converged: true,
        });
    }
    let m = k + n;
    let wbar = w.iter().sum::<f64>() / n as f64;
    let mut g = vec![1.0f64; n];
    for q in pairs {
        g[q.i] = g[q.i].max(0.5 * q.c);
        g[q.j] = g[q.j].max(0.5 * q.c);
    }
    g.iter_mut().for_each(|v| *v += 1.0);
    let slacks = |g: &[f64]| -> Vec<f64> {
        pairs.iter().map(|q| g[q.i] + g[q.j] - q.c).chain(g.iter().map(|v| v - 1.0)).collect()
    };
    // row k of R: pair rows hit (i, j), floor rows hit one coordinate
    let apply_rt = |v: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (e, q) in pairs.iter().enumerate() {
            out[q.i] += v[e];
            out[q.j] += v[e];
        }
        for i in 0..n {
            out[i] += v[k + i];
        }
    };
    let apply_r = |dg: &[f64]| -> Vec<f64> {
        pairs.iter().map(|q| dg[q.i] + dg[q.j]).chain(dg.iter().copied()).collect()
    };
    let mut z = vec![p * wbar; m];
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let s = slacks(&g);
        let mut rd = vec![0.0; n];
        apply_rt(&z, &mut rd);
        for i in 0..n {
            rd[i] = p * w[i] * g[i].powf(p - 1.0) - rd[i];
        }
        let mu = s.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / m as f64;
        let stat = (0..n).map(|i| rd[i].abs() / w[i]).fold(0.0, f64::max);
        if stat <= opts.tol && mu / wbar <= opts.tol {
            break;
        }
        // normal matrix H + Rᵀ S⁻¹ Z R
        let mut mat = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            mat[(i, i)] = p * (p - 1.0) * w[i] * g[i].powf(p - 2.0) + z[k + i] / s[k + i];
        }
        for (e, q) in pairs.iter().enumerate() {
            let d = z[e] / s[e];
            mat[(q.i, q.i)] += d;
            mat[(q.j, q.j)] += d;
            mat[(q.i, q.j)] += d;
            mat[(q.j, q.i)] += d;
        }
        // late iterations are ill-conditioned (degenerate optima have more
        // active constraints than unknowns); LU is the fallback, and a failed
        // solve ends the loop with the last iterate judged by its KKT residual
        enum Factor {
            Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
            Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
        }
        let fact = match mat.clone().cholesky() {
            Some(c) => Factor::Chol(c),
            None => Factor::Lu(mat.lu()),
        };
        let solve = |b: nalgebra::DVector<f64>| -> Option<nalgebra::DVector<f64>> {
            match &fact {
                Factor::Chol(c) => Some(c.solve(&b)),
                Factor::Lu(l) => l.solve(&b),
            }
        };
        let direction = |rc: &[f64]| -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
            let sr: Vec<f64> = rc.iter().zip(&s).map(|(r, s)| r / s).collect();
            let mut rhs = vec![0.0; n];
            apply_rt(&sr, &mut rhs);
            for i in 0..n {
                rhs[i] = -rd[i] - rhs[i];
            }
            let dg: Vec<f64> = solve(nalgebra::DVector::from_vec(rhs))?.iter().copied().collect();
            if dg.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let ds = apply_r(&dg);
            let dz: Vec<f64> = (0..m).map(|j| -(rc[j] + z[j] * ds[j]) / s[j]).collect();
            Some((dg, ds, dz))
        };
        let max_step = |v: &[f64], dv: &[f64]| -> f64 {
            v.iter().zip(dv).filter(|(_, d)| **d < 0.0).map(|(v, d)| -v / d).fold(1.0, f64::min)
        };
        let rc_aff: Vec<f64> = s.iter().zip(&z).map(|(a, b)| a * b).collect();
        let Some((_, ds_a, dz_a)) = direction(&rc_aff) else { break };
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = (0..m).map(|j| (s[j] + alpha_aff * ds_a[j]) * (z[j] + alpha_aff * dz_a[j])).sum::<f64>()
            / m as f64;
        let sigma = (mu_aff / mu).powi(3).min(1.0);
        let rc: Vec<f64> = (0..m).map(|j| s[j] * z[j] + ds_a[j] * dz_a[j] - sigma * mu).collect();
        let Some((dg, ds, dz)) = direction(&rc) else { break };
        let alpha = (0.995 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        for i in 0..n {
            g[i] += alpha * dg[i];
        }
        for j in 0..m {
            z[j] += alpha * dz[j];
        }
    }
    let (lambda, floor) = (z[..k].to_vec(), z[k..].to_vec());
    let r = kkt(w, pairs, p, &g, &lambda, &floor);
    Ok(PrimalDualSolution {
        kkt_residual: r.residual(),
        max_violation: r.violation,
        converged: r.residual() <= KKT_TOL,
        g,
        lambda,
        floor,
        iterations,
    })
}

/// Raise both ends of violated pairs until every constraint holds.
fn repair(g: &mut [f64], pairs: &[Pair]) {
    for _ in 0..1000 {
        let mut changed = false;
        for q in pairs {
            let s = q.c - (g[q.i] + g[q.j]);
            if s > 0.0 {
                g[q.i] += 0.5 * s + f64::EPSILON * q.c;
                g[q.j] += 0.5 * s + f64::EPSILON * q.c;
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
}

/// Minimal weighted `L^p` witness for the fields on the point cloud.
pub fn estimate_lusin_witness(cloud: &EmpiricalMeasure, fields: &[Field], p: f64) -> Result<LusinWitness> {
    estimate_lusin_witness_with(cloud, fields, p, SolverOptions::default())
}

pub fn estimate_lusin_witness_with(
    cloud: &EmpiricalMeasure,
    fields: &[Field],
    p: f64,
    opts: SolverOptions,
) -> Result<LusinWitness> {
    if fields.is_empty() {
        return Err(Error::invalid("at least one field is needed"));
    }
    let (points, weights, merged) = merge_duplicates(cloud);
    let n = weights.len();
    if n > MAX_POINTS {
        return Err(Error::invalid(format!("{n} distinct points exceed the limit of {MAX_POINTS}; subsample")));
    }
    let dim = cloud.dim();
    let pairs = candidate_pairs(dim, &points, fields);
    let sol = solve_witness(&weights, &pairs, p, opts)?;
    let mut g = sol.g;
    if !sol.converged {
        log::warn!("Lusin witness did not converge (KKT {:.3e}); returning repaired iterate", sol.kkt_residual);
    }
    // no-op unless rounding left a pair infeasible by an ulp
    repair(&mut g, &pairs);
    let objective: f64 = weights.iter().zip(&g).map(|(w, g)| w * g.powf(p)).sum();
    let total: f64 = weights.iter().sum();
    let viol = pairs.iter().map(|q| q.c - (g[q.i] + g[q.j])).chain(g.iter().map(|v| 1.0 - v)).fold(0.0, f64::max);
    let active_pairs = pairs.iter().filter(|q| g[q.i] + g[q.j] - q.c <= 1e-8 * q.c).count();
    Ok(LusinWitness {
        dim,
        points,
        weights,
        g_values: g,
        p,
        norm_p: (objective / total).powf(1.0 / p),
        objective,
        kkt_residual: sol.kkt_residual,
        max_violation: viol,
        active_pairs,
        candidate_pairs: pairs.len(),
        iterations: sol.iterations,
        converged: sol.converged,
        merged,
    })
}

impl LusinWitness {
    /// Largest violation of `‖f(x_i) - f(x_j)‖ ≤ (g_i + g_j)‖x_i - x_j‖` over all pairs.
    pub fn check(&self, fields: &[Field]) -> f64 {
        let pairs = candidate_pairs(self.dim, &self.points, fields);
        let floor = self.g_values.iter().map(|g| 1.0 - g).fold(0.0, f64::max);
        pairs.iter().map(|q| q.c - (self.g_values[q.i] + self.g_values[q.j])).fold(floor, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};
    use proptest::prelude::*;

    fn cloud(xs: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(1, xs.to_vec()).unwrap()
    }

    fn random_points(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, Purpose::Sample, 0);
        (0..n).map(|_| 4.0 * rng::open_uniform(&mut r) - 2.0).collect()
    }

    #[test]
    fn linear_field_hits_the_floor() {
        let f = |x: &[f64]| vec![x[0]];
        let w = estimate_lusin_witness(&cloud(&random_points(50, 1)), &[&f], 2.0).unwrap();
        assert!(w.g_values.iter().all(|g| *g == 1.0));
        assert_eq!(w.candidate_pairs, 0);
        assert_eq!(w.norm_p, 1.0);
    }

    #[test]
    fn two_points_split_evenly() {
        let f = |x: &[f64]| vec![4.0 * x[0]];
        let w = estimate_lusin_witness(&cloud(&[0.0, 1.0]), &[&f], 2.0).unwrap();
        assert!((w.g_values[0] - 2.0).abs() < 1e-9 && (w.g_values[1] - 2.0).abs() < 1e-9);
        assert!(w.kkt_residual < KKT_TOL);
    }

    #[test]
    fn duplicates_are_merged() {
        let f = |x: &[f64]| vec![x[0].sin()];
        let w = estimate_lusin_witness(&cloud(&[0.5, 0.1, 0.5, 0.3]), &[&f], 2.0).unwrap();
        assert_eq!(w.merged, 1);
        assert_eq!(w.weights, vec![0.25, 0.25, 0.5]);
    }

    /// Exhaustive active-set enumeration for `min Σ w g²`.
    fn brute_force(w: &[f64], cons: &[(Vec<f64>, f64)]) -> f64 {
        use nalgebra::{DMatrix, DVector};
        let n = w.len();
        let m = cons.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << m) {
            let act: Vec<usize> = (0..m).filter(|k| mask >> k & 1 == 1).collect();
            let g = if act.is_empty() {
                DVector::zeros(n)
            } else {
                let a = DMatrix::from_fn(act.len(), n, |r, c| cons[act[r]].0[c]);
                let b = DVector::from_iterator(act.len(), act.iter().map(|&k| cons[k].1));
                let winv = DMatrix::from_diagonal(&DVector::from_iterator(n, w.iter().map(|v| 0.5 / v)));
                let s = &a * &winv * a.transpose();
                let Some(nu) = s.clone().lu().solve(&b) else { continue };
                if (&s * &nu - &b).amax() > 1e-9 || nu.iter().any(|v| *v < -1e-12) {
                    continue;
                }
                winv * a.transpose() * nu
            };
            if cons.iter().all(|(a, b)| a.iter().zip(g.iter()).map(|(x, y)| x * y).sum::<f64>() >= b - 1e-9) {
                best = best.min(g.iter().zip(w).map(|(g, w)| w * g * g).sum());
            }
        }
        best
    }

    #[test]
    fn matches_active_set_enumeration() {
        for seed in 0..20u64 {
            let xs = random_points(5, 100 + seed);
            let f = move |x: &[f64]| vec![3.0 * (2.5 * x[0]).sin() + x[0] * x[0]];
            let c = cloud(&xs);
            let wit = estimate_lusin_witness(&c, &[&f], 2.0).unwrap();
            let n = wit.weights.len();
            let mut cons = Vec::new();
            for i in 0..n {
                let mut a = vec![0.0; n];
                a[i] = 1.0;
                cons.push((a, 1.0));
                for j in i + 1..n {
                    let (xi, xj) = (wit.points[i], wit.points[j]);
                    let mut a = vec![0.0; n];
                    a[i] = 1.0;
                    a[j] = 1.0;
                    cons.push((a, (f(&[xi])[0] - f(&[xj])[0]).abs() / (xi - xj).abs()));
                }
            }
            let best = brute_force(&wit.weights, &cons);
            assert!((wit.objective - best).abs() < 1e-6, "seed {seed}: {} vs {best}", wit.objective);
            assert!(wit.kkt_residual < KKT_TOL);
            assert!(wit.check(&[&f]) <= 1e-8);
        }
    }

    #[test]
    fn rejects_bad_exponent() {
        let f = |x: &[f64]| vec![x[0]];
        assert!(estimate_lusin_witness(&cloud(&[0.0, 1.0]), &[&f], 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn lipschitz_fields_are_cheap(seed in 0u64..1000, l in 0.5f64..8.0, n in 5usize..60) {
            let f = move |x: &[f64]| vec![l * (x[0] / l.max(1.0)).sin() * l.max(1.0), 0.5 * l * x[0]];
            // both components are L-Lipschitz
            let f2 = move |x: &[f64]| vec![l * x[0].cos()];
            let w = estimate_lusin_witness(&cloud(&random_points(n, seed)), &[&f, &f2], 2.0).unwrap();
            let lip = l * (1.0 + 0.25f64).sqrt();
            prop_assert!(w.norm_p <= (lip / 2.0).max(1.0) + 1e-6);
            prop_assert!(w.max_violation <= 1e-8);
            prop_assert!(w.g_values.iter().all(|g| *g >= 1.0));
            prop_assert!(w.kkt_residual < KKT_TOL);
        }

        #[test]
        fn adding_points_never_helps(seed in 0u64..1000, n in 4usize..30, extra in 1usize..20) {
            let f = |x: &[f64]| vec![4.0 * (3.0 * x[0]).sin()];
            let all = random_points(n + extra, seed);
            let m = n + extra;
            let w = vec![1.0 / m as f64; m];
            let small = EmpiricalMeasure::from_masses(1, all[..n].to_vec(), w[..n].to_vec()).unwrap();
            let big = EmpiricalMeasure::uniform(1, all.clone()).unwrap();
            let a = estimate_lusin_witness(&small, &[&f], 2.0).unwrap();
            let b = estimate_lusin_witness(&big, &[&f], 2.0).unwrap();
            // objective of the large witness restricted to the common points
            let mut restricted = 0.0;
            for (k, x) in a.points.iter().enumerate() {
                let idx = b.points.iter().position(|y| y == x).unwrap();
                restricted += a.weights[k] * b.g_values[idx].powi(2);
            }
            prop_assert!(restricted >= a.objective - 1e-9);
        }
    }
}
