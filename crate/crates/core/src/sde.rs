//! Synchronous-coupling Euler–Maruyama simulation and equilibrium diagnostics.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{second_moment, EmpiricalMeasure, MeasureSpec};
use crate::rng::{self, Purpose};
use crate::stats::{linear_fit, Estimate};
use crate::testfn::TestFunction;
use crate::transport::w2_empirical;

const BLOW_UP: f64 = 1e8;

/// Symmetric square root by eigendecomposition. Eigenvalues down to -1e-10
/// (relative to the largest) are clamped to zero.
pub fn spd_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(Error::invalid("matrix square root of a non-square matrix"));
    }
    let scale = s.amax().max(f64::MIN_POSITIVE);
    let asymmetry = (s - s.transpose()).amax() / scale;
    if asymmetry > 1e-8 {
        return Err(Error::NotSymmetric { asymmetry });
    }
    let sym = 0.5 * (s + s.transpose());
    let eig = sym.symmetric_eigen();
    let mut roots = DVector::zeros(eig.eigenvalues.len());
    for (r, &l) in roots.iter_mut().zip(eig.eigenvalues.iter()) {
        if l < -1e-10 * scale {
            return Err(Error::NotPositiveDefinite(format!("eigenvalue {l:.3e}")));
        }
        *r = l.max(0.0).sqrt();
    }
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok(0.5 * (&r + r.transpose()))
}

pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&[f64], &mut DMatrix<f64>) + Send + Sync>;

#[derive(Clone)]
pub enum Drift {
    /// `a(x) = c·x`
    Linear(f64),
    Field(VectorField),
}

impl Drift {
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Drift::Linear(c) => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = c * v;
                }
            }
            Drift::Field(f) => f(x, out),
        }
    }
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Linear(c) => write!(f, "Linear({c})"),
            Drift::Field(_) => f.write_str("Field"),
        }
    }
}

/// The diffusion coefficient, given as √τ (scalar, diagonal, or full
/// matrix) or as τ itself, in which case `spd_sqrt` is applied per step.
#[derive(Clone)]
pub enum Diffusion {
    Scalar(f64),
    Diagonal(VectorField),
    Matrix(MatrixField),
    Tau(MatrixField),
}

impl fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diffusion::Scalar(c) => write!(f, "Scalar({c})"),
            Diffusion::Diagonal(_) => f.write_str("Diagonal"),
            Diffusion::Matrix(_) => f.write_str("Matrix"),
            Diffusion::Tau(_) => f.write_str("Tau"),
        }
    }
}

impl Diffusion {
    /// √τ(x) as a dense matrix.
    pub fn sqrt_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let d = x.len();
        Ok(match self {
            Diffusion::Scalar(c) => DMatrix::identity(d, d) * *c,
            Diffusion::Diagonal(f) => {
                let mut v = vec![0.0; d];
                f(x, &mut v);
                DMatrix::from_diagonal(&DVector::from_vec(v))
            }
            Diffusion::Matrix(f) => {
                let mut m = DMatrix::zeros(d, d);
                f(x, &mut m);
                m
            }
            Diffusion::Tau(f) => {
                let mut m = DMatrix::zeros(d, d);
                f(x, &mut m);
                spd_sqrt(&m)?
            }
        })
    }

    /// τ(x) = (√τ)².
    pub fn tau_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if let Diffusion::Tau(f) = self {
            let d = x.len();
            let mut m = DMatrix::zeros(d, d);
            f(x, &mut m);
            return Ok(m);
        }
        let r = self.sqrt_at(x)?;
        Ok(&r * &r)
    }

    fn apply(&self, x: &[f64], xi: &[f64], out: &mut [f64], scratch: &mut DMatrix<f64>) {
        match self {
            Diffusion::Scalar(c) => {
                for (o, z) in out.iter_mut().zip(xi) {
                    *o = c * z;
                }
            }
            Diffusion::Diagonal(f) => {
                f(x, out);
                for (o, z) in out.iter_mut().zip(xi) {
                    *o *= z;
                }
            }
            Diffusion::Matrix(f) => {
                f(x, scratch);
                matvec(scratch, xi, out);
            }
            Diffusion::Tau(f) => {
                f(x, scratch);
                match spd_sqrt(scratch) {
                    Ok(r) => matvec(&r, xi, out),
                    Err(_) => out.iter_mut().for_each(|o| *o = f64::NAN),
                }
            }
        }
    }
}

fn matvec(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..v.len()).map(|j| m[(i, j)] * v[j]).sum();
    }
}

/// A diffusion `dX = a(X)dt + √2·√τ(X) dB`.
#[derive(Clone, Debug)]
pub struct Process {
    pub drift: Drift,
    pub diffusion: Diffusion,
}

impl Process {
    /// Ornstein–Uhlenbeck `dX = -X dt + √(2s) dB`, invariant law N(0, s I).
    pub fn ou(s: f64) -> Self {
        Process { drift: Drift::Linear(-1.0), diffusion: Diffusion::Scalar(s.sqrt()) }
    }
}

#[derive(Clone, Debug)]
pub struct DiffusionPair {
    pub x: Process,
    pub y: Process,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Synchronous,
    Independent,
}

#[derive(Debug, Clone)]
pub enum Init {
    /// `X₀ = Y₀`, drawn once from the given law.
    Shared(MeasureSpec),
    /// `X₀ ~ first`, `Y₀ ~ second`, drawn from the same stream so identical
    /// laws give identical starts.
    Separate(MeasureSpec, MeasureSpec),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// Times to record; snapped to the step grid. Time 0 is always recorded.
    pub record: Vec<f64>,
    pub noise: NoiseMode,
}

impl SimConfig {
    pub fn new(t_end: f64, dt: f64, n_traj: usize, seed: u64) -> Self {
        SimConfig { t_end, dt, n_traj, seed, record: vec![t_end], noise: NoiseMode::Synchronous }
    }

    pub fn record(mut self, times: &[f64]) -> Self {
        self.record = times.to_vec();
        self
    }

    pub fn noise(mut self, noise: NoiseMode) -> Self {
        self.noise = noise;
        self
    }

    fn validate(&self) -> Result<(usize, Vec<usize>)> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_end >= self.dt) {
            return Err(Error::invalid(format!("T = {} must be at least dt", self.t_end)));
        }
        if self.n_traj == 0 {
            return Err(Error::invalid("n_traj must be positive"));
        }
        let steps = (self.t_end / self.dt).round() as usize;
        let mut idx = vec![0usize];
        for &t in &self.record {
            if !(0.0..=self.t_end + 0.5 * self.dt).contains(&t) {
                return Err(Error::invalid(format!("record time {t} outside [0, {}]", self.t_end)));
            }
            idx.push(((t / self.dt).round() as usize).min(steps));
        }
        idx.sort_unstable();
        idx.dedup();
        Ok((steps, idx))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlowUp {
    pub trajectory: usize,
    pub time: f64,
}

/// Recorded paths, stored as `[trajectory][time][coordinate]`.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    pub dt: f64,
    pub seed: u64,
    pub dim: usize,
    pub trajectories: Vec<usize>,
    pub paths_x: Vec<f64>,
    pub paths_y: Vec<f64>,
    pub blow_ups: Vec<BlowUp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    X,
    Y,
}

impl TrajectoryEnsemble {
    pub fn n_traj(&self) -> usize {
        self.trajectories.len()
    }

    /// Index of the recorded time closest to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        if (self.times[best] - t).abs() > 1e-9 {
            warn!("time {t} not recorded; using nearest recorded time {}", self.times[best]);
        }
        best
    }

    pub fn state(&self, which: Which, traj: usize, time_idx: usize) -> &[f64] {
        let nt = self.times.len();
        let off = (traj * nt + time_idx) * self.dim;
        let paths = match which {
            Which::X => &self.paths_x,
            Which::Y => &self.paths_y,
        };
        &paths[off..off + self.dim]
    }

    pub fn marginal_at(&self, t: f64, which: Which) -> Result<EmpiricalMeasure> {
        if self.n_traj() == 0 {
            return Err(Error::invalid("ensemble has no surviving trajectories"));
        }
        let k = self.time_index(t);
        let mut pts = Vec::with_capacity(self.n_traj() * self.dim);
        for i in 0..self.n_traj() {
            pts.extend_from_slice(self.state(which, i, k));
        }
        EmpiricalMeasure::uniform(self.dim, pts)
    }

    /// |Z_t|² = |X_t - Y_t|² per trajectory.
    pub fn squared_gaps(&self, t: f64) -> Vec<f64> {
        let k = self.time_index(t);
        (0..self.n_traj())
            .map(|i| {
                let x = self.state(Which::X, i, k);
                let y = self.state(Which::Y, i, k);
                x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum()
            })
            .collect()
    }

    /// CSV with columns `traj,t,x_1..x_d,y_1..y_d`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["traj".to_string(), "t".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x_{k}")));
        header.extend((1..=self.dim).map(|k| format!("y_{k}")));
        out.write_record(&header)?;
        for (i, &traj) in self.trajectories.iter().enumerate() {
            for (k, t) in self.times.iter().enumerate() {
                let mut row = vec![traj.to_string(), format!("{t}")];
                row.extend(self.state(Which::X, i, k).iter().map(|v| format!("{v:e}")));
                row.extend(self.state(Which::Y, i, k).iter().map(|v| format!("{v:e}")));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

struct Stepper<'a> {
    p: &'a Process,
    a: Vec<f64>,
    n: Vec<f64>,
    scratch: DMatrix<f64>,
}

impl<'a> Stepper<'a> {
    fn new(p: &'a Process, d: usize) -> Self {
        Stepper { p, a: vec![0.0; d], n: vec![0.0; d], scratch: DMatrix::zeros(d, d) }
    }

    /// One Euler–Maruyama step; returns false on blow-up.
    fn step(&mut self, x: &mut [f64], xi: &[f64], dt: f64, sq: f64) -> bool {
        self.p.drift.eval(x, &mut self.a);
        self.p.diffusion.apply(x, xi, &mut self.n, &mut self.scratch);
        let mut r2 = 0.0;
        for k in 0..x.len() {
            x[k] += self.a[k] * dt + sq * self.n[k];
            r2 += x[k] * x[k];
        }
        r2.is_finite() && r2 <= BLOW_UP * BLOW_UP
    }
}

enum PathResult {
    Ok(Vec<f64>, Vec<f64>),
    BlowUp(f64),
}

/// Simulate the coupled pair. Both processes consume the same increments
/// `ξ_k` in synchronous mode; the Y process draws its own stream in
/// independent mode. Each trajectory has its own RNG stream, so results do
/// not depend on scheduling.
pub fn simulate_coupled(pair: &DiffusionPair, init: &Init, cfg: &SimConfig) -> Result<TrajectoryEnsemble> {
    let (steps, rec) = cfg.validate()?;
    let d = pair.dim;
    match init {
        Init::Shared(m) if m.dim() != d => return Err(Error::invalid("init dimension mismatch")),
        Init::Separate(a, b) if a.dim() != d || b.dim() != d => {
            return Err(Error::invalid("init dimension mismatch"))
        }
        _ => {}
    }
    let dt = cfg.dt;
    let sq = (2.0 * dt).sqrt();
    let results: Vec<PathResult> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|i| {
            let mut init_rng = rng::stream(cfg.seed, Purpose::Init, i as u64);
            let mut x = vec![0.0; d];
            let mut y = vec![0.0; d];
            match init {
                Init::Shared(m) => {
                    m.sample_point(&mut init_rng, &mut x);
                    y.copy_from_slice(&x);
                }
                Init::Separate(a, b) => {
                    a.sample_point(&mut init_rng, &mut x);
                    let mut rng_y = rng::stream(cfg.seed, Purpose::Init, i as u64);
                    b.sample_point(&mut rng_y, &mut y);
                }
            }
            let mut rng_x = rng::stream(cfg.seed, Purpose::Trajectory, i as u64);
            let mut rng_y = rng::stream(cfg.seed, Purpose::TrajectoryIndependent, i as u64);
            let mut sx = Stepper::new(&pair.x, d);
            let mut sy = Stepper::new(&pair.y, d);
            let mut xi = vec![0.0; d];
            let mut eta = vec![0.0; d];
            let mut px = Vec::with_capacity(rec.len() * d);
            let mut py = Vec::with_capacity(rec.len() * d);
            let mut next = 0;
            if rec[0] == 0 {
                px.extend_from_slice(&x);
                py.extend_from_slice(&y);
                next = 1;
            }
            for k in 1..=steps {
                rng::fill_normal(&mut rng_x, &mut xi);
                let ok_x = sx.step(&mut x, &xi, dt, sq);
                let ok_y = match cfg.noise {
                    NoiseMode::Synchronous => sy.step(&mut y, &xi, dt, sq),
                    NoiseMode::Independent => {
                        rng::fill_normal(&mut rng_y, &mut eta);
                        sy.step(&mut y, &eta, dt, sq)
                    }
                };
                if !(ok_x && ok_y) {
                    return PathResult::BlowUp(k as f64 * dt);
                }
                if next < rec.len() && rec[next] == k {
                    px.extend_from_slice(&x);
                    py.extend_from_slice(&y);
                    next += 1;
                }
            }
            PathResult::Ok(px, py)
        })
        .collect();

    let mut ens = TrajectoryEnsemble {
        times: rec.iter().map(|&k| k as f64 * dt).collect(),
        dt,
        seed: cfg.seed,
        dim: d,
        trajectories: Vec::new(),
        paths_x: Vec::new(),
        paths_y: Vec::new(),
        blow_ups: Vec::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            PathResult::Ok(px, py) => {
                ens.trajectories.push(i);
                ens.paths_x.extend(px);
                ens.paths_y.extend(py);
            }
            PathResult::BlowUp(time) => ens.blow_ups.push(BlowUp { trajectory: i, time }),
        }
    }
    if !ens.blow_ups.is_empty() {
        warn!(
            "{} of {} trajectories exceeded |x| > {BLOW_UP:e} and were dropped",
            ens.blow_ups.len(),
            cfg.n_traj
        );
    }
    Ok(ens)
}

/// Simulate a single process by coupling it with itself.
pub fn simulate(process: &Process, dim: usize, init: &MeasureSpec, cfg: &SimConfig) -> Result<TrajectoryEnsemble> {
    let pair = DiffusionPair { x: process.clone(), y: process.clone(), dim };
    simulate_coupled(&pair, &Init::Shared(init.clone()), cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceProfile {
    pub times: Vec<f64>,
    pub w2_estimates: Vec<f64>,
    pub noise_floor: f64,
    /// Times whose estimates exceeded three noise floors and entered the fit.
    pub fit_window: Vec<f64>,
    pub fitted_kappa: f64,
    pub fitted_ch: f64,
    pub fit_residual: f64,
    pub w2_initial: f64,
}

/// Fit `ln W2(μ_t, μ) = ln(C_H W2(μ_0, μ)) - κ t` from simulated marginals.
/// `init` must be a point mass so that `W2(μ_0, μ)` is exact.
pub fn estimate_convergence(
    process: &Process,
    target: &MeasureSpec,
    init: &MeasureSpec,
    times: &[f64],
    n_traj: usize,
    dt: f64,
    seed: u64,
) -> Result<ConvergenceProfile> {
    if times.len() < 2 {
        return Err(Error::FitRefused(format!("{} time point(s) cannot determine a rate", times.len())));
    }
    if !init.is_dirac() {
        return Err(Error::invalid("convergence fits start from a point mass"));
    }
    let d = target.dim();
    let t_end = times.iter().cloned().fold(0.0, f64::max).max(dt);
    let cfg = SimConfig::new(t_end, dt, n_traj, seed).record(times);
    let ens = simulate(process, d, init, &cfg)?;

    let floor_a = target.sample(n_traj, rng::derive_seed(seed, 0xF1))?;
    let floor_b = target.sample(n_traj, rng::derive_seed(seed, 0xF2))?;
    let noise_floor = w2_empirical(&floor_a, &floor_b)?;

    let mut w2 = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let marginal = ens.marginal_at(t, Which::X)?;
        let fresh = target.sample(n_traj, rng::derive_seed(seed, 0x100 + k as u64))?;
        w2.push(w2_empirical(&marginal, &fresh)?);
    }

    let x0 = init.mean();
    let m = target.mean();
    let m2 = second_moment(target)?.value;
    let gap: f64 = x0.iter().zip(&m).map(|(a, b)| (a - b).powi(2)).sum();
    let m_sq: f64 = m.iter().map(|v| v * v).sum();
    let w2_initial = (gap + m2 - m_sq).max(0.0).sqrt();

    let (mut ts, mut ys) = (Vec::new(), Vec::new());
    for (&t, &w) in times.iter().zip(&w2) {
        if w > 3.0 * noise_floor {
            ts.push(t);
            ys.push(w.ln());
        }
    }
    if ts.len() < 2 {
        return Err(Error::FitRefused(format!(
            "only {} estimate(s) above three noise floors ({noise_floor:.3e})",
            ts.len()
        )));
    }
    let (intercept, slope, rms) = linear_fit(&ts, &ys);
    Ok(ConvergenceProfile {
        times: times.to_vec(),
        w2_estimates: w2,
        noise_floor,
        fit_window: ts,
        fitted_kappa: -slope,
        fitted_ch: intercept.exp() / w2_initial,
        fit_residual: rms,
        w2_initial,
    })
}

/// Monte Carlo estimate of `E_μ[Lf]` with `Lf = ⟨a, ∇f⟩ + ⟨τ, Hess f⟩_HS`.
pub fn generator_residual(
    drift: &Drift,
    diffusion: &Diffusion,
    m: &MeasureSpec,
    f: &TestFunction,
    n: usize,
    seed: u64,
) -> Result<Estimate> {
    let d = m.dim();
    let xs = m.sample(n, seed)?;
    let vals: Result<Vec<f64>> = xs
        .points()
        .par_chunks(d)
        .map(|x| {
            let mut a = vec![0.0; d];
            drift.eval(x, &mut a);
            let g = (f.grad)(x);
            let h = (f.hess)(x);
            let tau = diffusion.tau_at(x)?;
            let first: f64 = a.iter().zip(g.iter()).map(|(u, v)| u * v).sum();
            Ok(first + tau.component_mul(&h).sum())
        })
        .collect();
    Ok(Estimate::from_samples(&vals?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{make_dirac, make_isotropic};
    use crate::rng::StreamRng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn sqrt_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert_relative_eq!(spd_sqrt(&i).unwrap(), i, epsilon = 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = spd_sqrt(&d).unwrap();
        assert_relative_eq!(r, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])), epsilon = 1e-14);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(spd_sqrt(&a), Err(Error::NotSymmetric { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sqrt_round_trip(seed in 0u64..10_000, d in 1usize..6) {
            let mut rng = StreamRng::seed_from_u64(seed);
            let a = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
            let s: DMatrix<f64> = &a * a.transpose() + DMatrix::identity(d, d) * 1e-3;
            let r = spd_sqrt(&s).unwrap();
            prop_assert!((&r * &r - &s).norm() <= 1e-10 * s.norm());
        }
    }

    #[test]
    fn identical_pair_stays_coupled() {
        let pair = DiffusionPair {
            x: Process { drift: Drift::Linear(-1.0), diffusion: Diffusion::Scalar(2f64.sqrt()) },
            y: Process { drift: Drift::Linear(-1.0), diffusion: Diffusion::Scalar(2f64.sqrt()) },
            dim: 2,
        };
        let init = Init::Shared(make_isotropic(2, 1.0).unwrap());
        let cfg = SimConfig::new(1.0, 1e-2, 50, 3).record(&[0.25, 0.5, 1.0]);
        let e = simulate_coupled(&pair, &init, &cfg).unwrap();
        assert_eq!(e.paths_x, e.paths_y);
        assert_eq!(e.marginal_at(1.0, Which::X).unwrap(), e.marginal_at(1.0, Which::Y).unwrap());
    }

    #[test]
    fn ou_variance_at_unit_time() {
        let init = make_dirac(vec![0.0]).unwrap();
        let cfg = SimConfig::new(1.0, 1e-3, 10_000, 5);
        let e = simulate(&Process::ou(1.0), 1, &init, &cfg).unwrap();
        let m = e.marginal_at(1.0, Which::X).unwrap();
        let sq: Vec<f64> = m.points().iter().map(|v| v * v).collect();
        let est = Estimate::from_samples(&sq);
        assert!(est.within(1.0 - (-2.0f64).exp(), 3.0), "{est:?}");
        // point mass start: every path starts at the origin
        assert!(e.marginal_at(0.0, Which::X).unwrap().points().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unstable_drift_blows_up() {
        let init = make_dirac(vec![1.0]).unwrap();
        let p = Process { drift: Drift::Linear(1.0), diffusion: Diffusion::Scalar(1.0) };
        let cfg = SimConfig::new(50.0, 1e-2, 8, 1);
        let e = simulate(&p, 1, &init, &cfg).unwrap();
        assert_eq!(e.blow_ups.len(), 8);
        assert_eq!(e.n_traj(), 0);
        assert!(e.marginal_at(50.0, Which::X).is_err());
    }

    #[test]
    fn rejects_bad_steps() {
        let init = Init::Shared(make_dirac(vec![0.0]).unwrap());
        let pair = DiffusionPair { x: Process::ou(1.0), y: Process::ou(1.0), dim: 1 };
        assert!(simulate_coupled(&pair, &init, &SimConfig::new(1.0, -0.1, 4, 0)).is_err());
    }

    #[test]
    fn generator_examples() {
        let drift = Drift::Linear(-1.0);
        let diff = Diffusion::Scalar(1.0);
        let n1 = make_isotropic(1, 1.0).unwrap();
        for k in [2, 4] {
            let r = generator_residual(&drift, &diff, &n1, &TestFunction::power(1, 0, k), 100_000, 9).unwrap();
            assert!(r.within(0.0, 3.0), "x^{k}: {r:?}");
        }
        let n4 = make_isotropic(1, 4.0).unwrap();
        let r = generator_residual(&drift, &diff, &n4, &TestFunction::power(1, 0, 2), 100_000, 9).unwrap();
        assert!(r.within(-6.0, 3.0), "{r:?}");
    }

    #[test]
    fn single_time_fit_is_refused() {
        let r = estimate_convergence(
            &Process::ou(1.0),
            &make_isotropic(1, 1.0).unwrap(),
            &make_dirac(vec![3.0]).unwrap(),
            &[0.0],
            100,
            1e-2,
            1,
        );
        assert!(matches!(r, Err(Error::FitRefused(_))));
    }
}
