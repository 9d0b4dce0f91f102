//! Exact optimal transport between weighted point clouds, and checkers for
//! the transport inequalities relating truncated, logarithmic and quadratic
//! costs.

mod inequalities;
mod simplex;

use serde::Serialize;

pub use inequalities::{
    check_eps_optimized, check_finite_time_bound, check_interpolation, check_truncation_lemma,
    coupled_log_cost, finite_time_rhs, FiniteTimeInputs, InterpolationMode, SlackReport,
    TruncationReport,
};

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;

/// Largest `n·m` accepted by the exact solver.
pub const MAX_PAIRS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransportCost {
    Quadratic,
    /// `min(|x-y|², R)`
    TruncatedQuadratic { r: f64 },
    /// `min(|x-y|, R)`
    TruncatedFirst { r: f64 },
    /// `ln(1 + |x-y|²/δ²)`
    Logarithmic { delta: f64 },
}

impl TransportCost {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            TransportCost::Quadratic => return Ok(()),
            TransportCost::TruncatedQuadratic { r } | TransportCost::TruncatedFirst { r } => ("R", r),
            TransportCost::Logarithmic { delta } => ("delta", delta),
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("{name} = {v} must be positive and finite")));
        }
        Ok(())
    }

    #[inline]
    pub fn of_squared_distance(&self, d2: f64) -> f64 {
        match *self {
            TransportCost::Quadratic => d2,
            TransportCost::TruncatedQuadratic { r } => d2.min(r),
            TransportCost::TruncatedFirst { r } => d2.sqrt().min(r),
            TransportCost::Logarithmic { delta } => (d2 / (delta * delta)).ln_1p(),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.of_squared_distance(x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum())
    }
}

/// An optimal plan, stored sparsely as `(i, j, mass)` triples.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingPlan {
    pub n: usize,
    pub m: usize,
    pub entries: Vec<(usize, usize, f64)>,
    pub cost_value: f64,
    /// Largest violation of dual feasibility, an optimality certificate.
    pub dual_violation: f64,
}

impl CouplingPlan {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut p = vec![vec![0.0; self.m]; self.n];
        for &(i, j, v) in &self.entries {
            p[i][j] += v;
        }
        p
    }

    /// Max deviation of the plan's marginals from the given weights.
    pub fn marginal_error(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut rows = vec![0.0; self.n];
        let mut cols = vec![0.0; self.m];
        for &(i, j, v) in &self.entries {
            rows[i] += v;
            cols[j] += v;
        }
        let r = rows.iter().zip(a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let c = cols.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        r.max(c)
    }
}

fn is_uniform(w: &[f64]) -> bool {
    let u = 1.0 / w.len() as f64;
    w.iter().all(|v| (v - u).abs() <= 1e-15)
}

pub fn cost_matrix(a: &EmpiricalMeasure, b: &EmpiricalMeasure, cost: &TransportCost) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for i in 0..a.len() {
        let x = a.point(i);
        for j in 0..b.len() {
            c.push(cost.eval(x, b.point(j)));
        }
    }
    c
}

/// Exact optimal transport by network simplex. Uniform weights are scaled
/// to integer masses so the pivots run in exact arithmetic.
pub fn solve_ot(a: &EmpiricalMeasure, b: &EmpiricalMeasure, cost: TransportCost) -> Result<CouplingPlan> {
    cost.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    let (n, m) = (a.len(), b.len());
    if n.saturating_mul(m) > MAX_PAIRS {
        return Err(Error::ScaleExceeded { n, m, limit: MAX_PAIRS });
    }
    let c = cost_matrix(a, b, &cost);
    let (supply, scale) = if is_uniform(a.weights()) && is_uniform(b.weights()) {
        let mut s = vec![m as f64; n];
        s.extend(std::iter::repeat_n(-(n as f64), m));
        (s, (n * m) as f64)
    } else {
        let mut s: Vec<f64> = a.weights().to_vec();
        let sa: f64 = a.weights().iter().sum();
        let sb: f64 = b.weights().iter().sum();
        s.extend(b.weights().iter().map(|w| -w * sa / sb));
        (s, 1.0)
    };
    let sol = simplex::solve(n, m, &c, &supply)?;
    let mut entries = Vec::new();
    let mut total = 0.0;
    for (e, &f) in sol.flow.iter().enumerate() {
        if f > 0.0 {
            let v = f / scale;
            entries.push((e / m, e % m, v));
            total += v * c[e];
        }
    }
    Ok(CouplingPlan { n, m, entries, cost_value: total, dual_violation: sol.dual_violation / scale.max(1.0) })
}

/// Optimal cost only.
pub fn ot_cost(a: &EmpiricalMeasure, b: &EmpiricalMeasure, cost: TransportCost) -> Result<f64> {
    Ok(solve_ot(a, b, cost)?.cost_value)
}

/// Empirical W2 (not squared). Uniform equal-size clouds in 1D use the
/// sorted (monotone) coupling, which is optimal for convex costs; other
/// inputs go through the exact solver.
pub fn w2_empirical(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.dim() == 1 && a.len() == b.len() && is_uniform(a.weights()) && is_uniform(b.weights()) {
        let mut x = a.points().to_vec();
        let mut y = b.points().to_vec();
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        let s: f64 = x.iter().zip(&y).map(|(u, v)| (u - v).powi(2)).sum();
        return Ok((s / x.len() as f64).sqrt());
    }
    Ok(ot_cost(a, b, TransportCost::Quadratic)?.max(0.0).sqrt())
}

/// Entropic (log-domain Sinkhorn) approximation of W2², for point estimates
/// on clouds too large for the exact solver. Never used by the inequality
/// checkers.
pub fn w2_entropic(a: &EmpiricalMeasure, b: &EmpiricalMeasure, epsilon: f64, iters: usize) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let (n, m) = (a.len(), b.len());
    let cost = |i: usize, j: usize| TransportCost::Quadratic.eval(a.point(i), b.point(j));
    let la: Vec<f64> = a.weights().iter().map(|w| w.ln()).collect();
    let lb: Vec<f64> = b.weights().iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let lse = |vals: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = vals.collect();
        let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
    };
    for _ in 0..iters {
        for i in 0..n {
            f[i] = -epsilon * lse(&mut (0..m).map(|j| (g[j] - cost(i, j)) / epsilon + lb[j]));
        }
        for j in 0..m {
            g[j] = -epsilon * lse(&mut (0..n).map(|i| (f[i] - cost(i, j)) / epsilon + la[i]));
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let c = cost(i, j);
            let p = ((f[i] + g[j] - c) / epsilon + la[i] + lb[j]).exp();
            total += p * c;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::make_isotropic;
    use crate::rng::{self, Purpose};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardUniform};

    fn cloud(n: usize, d: usize, seed: u64, scale: f64) -> EmpiricalMeasure {
        let mut r = rng::stream(seed, Purpose::MonteCarlo, 0);
        let pts: Vec<f64> = (0..n * d)
            .map(|_| {
                let u: f64 = StandardUniform.sample(&mut r);
                scale * (2.0 * u - 1.0)
            })
            .collect();
        EmpiricalMeasure::uniform(d, pts).unwrap()
    }

    fn weighted(n: usize, d: usize, seed: u64) -> EmpiricalMeasure {
        let base = cloud(n, d, seed, 2.0);
        let mut r = rng::stream(seed, Purpose::MonteCarlo, 1);
        let masses: Vec<f64> = (0..n).map(|_| StandardUniform.sample(&mut r)).map(|u: f64| u + 0.05).collect();
        EmpiricalMeasure::from_masses(d, base.points().to_vec(), masses).unwrap()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_force(a: &EmpiricalMeasure, b: &EmpiricalMeasure, cost: &TransportCost) -> f64 {
        let n = a.len();
        permutations(n)
            .iter()
            .map(|p| (0..n).map(|i| cost.eval(a.point(i), b.point(p[i]))).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min)
    }

    fn costs() -> Vec<TransportCost> {
        vec![
            TransportCost::Quadratic,
            TransportCost::TruncatedQuadratic { r: 0.5 },
            TransportCost::TruncatedFirst { r: 0.7 },
            TransportCost::Logarithmic { delta: 0.3 },
        ]
    }

    #[test]
    fn trivial_examples() {
        let a = EmpiricalMeasure::uniform(1, vec![0.0, 1.0]).unwrap();
        let p = solve_ot(&a, &a, TransportCost::Quadratic).unwrap();
        assert_eq!(p.cost_value, 0.0);
        assert_eq!(p.to_dense(), vec![vec![0.5, 0.0], vec![0.0, 0.5]]);
        let x = EmpiricalMeasure::uniform(1, vec![0.0]).unwrap();
        let y = EmpiricalMeasure::uniform(1, vec![3.0]).unwrap();
        assert_eq!(ot_cost(&x, &y, TransportCost::TruncatedQuadratic { r: 4.0 }).unwrap(), 4.0);
    }

    #[test]
    fn matches_permutation_brute_force() {
        for seed in 0..20 {
            for d in 1..=3 {
                let a = cloud(6, d, seed, 1.0);
                let b = cloud(6, d, seed + 1000, 1.0);
                for c in costs() {
                    let plan = solve_ot(&a, &b, c).unwrap();
                    let bf = brute_force(&a, &b, &c);
                    assert!((plan.cost_value - bf).abs() < 1e-9, "{c:?}: {} vs {bf}", plan.cost_value);
                    assert!(plan.marginal_error(a.weights(), b.weights()) < 1e-12);
                    assert!(plan.dual_violation < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rejects_oversized_problems() {
        let a = cloud(4000, 1, 1, 1.0);
        let b = cloud(3000, 1, 2, 1.0);
        assert!(matches!(solve_ot(&a, &b, TransportCost::Quadratic), Err(Error::ScaleExceeded { .. })));
        assert!(solve_ot(&a, &a, TransportCost::Logarithmic { delta: 0.0 }).is_err());
    }

    #[test]
    fn unequal_sizes_and_weights() {
        let a = weighted(13, 2, 3);
        let b = weighted(7, 2, 4);
        for c in costs() {
            let p = solve_ot(&a, &b, c).unwrap();
            assert!(p.marginal_error(a.weights(), b.weights()) < 1e-9);
            assert!(p.dual_violation < 1e-9, "{c:?}: {}", p.dual_violation);
            let dense = p.to_dense();
            let cm = cost_matrix(&a, &b, &c);
            let recomputed: f64 = (0..13).flat_map(|i| (0..7).map(move |j| (i, j))).map(|(i, j)| dense[i][j] * cm[i * 7 + j]).sum();
            assert!((recomputed - p.cost_value).abs() < 1e-9);
        }
    }

    #[test]
    fn sorted_fast_path_agrees_with_simplex() {
        let a = cloud(200, 1, 5, 3.0);
        let b = cloud(200, 1, 6, 1.0);
        let fast = w2_empirical(&a, &b).unwrap();
        let exact = ot_cost(&a, &b, TransportCost::Quadratic).unwrap().sqrt();
        assert!((fast - exact).abs() < 1e-10);
    }

    #[test]
    fn medium_gaussian_instance() {
        let a = make_isotropic(2, 1.0).unwrap().sample(500, 1).unwrap();
        let b = make_isotropic(2, 4.0).unwrap().sample(500, 2).unwrap();
        let p = solve_ot(&a, &b, TransportCost::Quadratic).unwrap();
        assert!(p.dual_violation < 1e-8);
        assert!(p.marginal_error(a.weights(), b.weights()) < 1e-12);
        // n = m uniform: optimal plan is a permutation
        assert_eq!(p.nnz(), 500);
    }

    #[test]
    fn entropic_is_close_for_small_epsilon() {
        let a = cloud(40, 2, 7, 1.0);
        let b = cloud(40, 2, 8, 1.5);
        let exact = ot_cost(&a, &b, TransportCost::Quadratic).unwrap();
        let ent = w2_entropic(&a, &b, 1e-3, 2000).unwrap();
        assert!((ent - exact).abs() < 0.05 * exact, "{ent} vs {exact}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn exact_for_small_uniform(seed in 0u64..100_000, n in 1usize..=7, d in 1usize..=3) {
            let a = cloud(n, d, seed, 1.0);
            let b = cloud(n, d, seed ^ 0xabc, 1.0);
            for c in costs() {
                let v = ot_cost(&a, &b, c).unwrap();
                prop_assert!((v - brute_force(&a, &b, &c)).abs() < 1e-9);
            }
        }

        #[test]
        fn symmetric_and_monotone(seed in 0u64..100_000) {
            let a = weighted(12, 2, seed);
            let b = weighted(9, 2, seed + 1);
            for c in costs() {
                let ab = ot_cost(&a, &b, c).unwrap();
                let ba = ot_cost(&b, &a, c).unwrap();
                prop_assert!((ab - ba).abs() < 1e-9);
            }
            let w2 = ot_cost(&a, &b, TransportCost::Quadratic).unwrap();
            let mut last = 0.0;
            for r in [0.1, 0.5, 1.0, 2.0, 8.0, 100.0] {
                let v = ot_cost(&a, &b, TransportCost::TruncatedQuadratic { r }).unwrap();
                prop_assert!(v >= last - 1e-12);
                prop_assert!(v <= w2 + 1e-12);
                last = v;
            }
            let mut last = f64::INFINITY;
            for delta in [0.05, 0.1, 0.5, 1.0, 3.0] {
                let v = ot_cost(&a, &b, TransportCost::Logarithmic { delta }).unwrap();
                prop_assert!(v <= last + 1e-12);
                last = v;
            }
        }
    }
}
