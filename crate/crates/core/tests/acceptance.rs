//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
//! Every criterion runs twice; the second pass must reproduce the first
//! byte for byte (criterion 13).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use invstab::bounds::{discrepancy_beta_quadrature, theorem2_rhs, Verdict};
use invstab::expr::Expr;
use invstab::harness::{run_experiment, ExperimentConfig, RunOptions};
use invstab::lusin::{estimate_lusin_witness, Field, KKT_TOL};
use invstab::measures::{
    make_dirac, make_gibbs_1d, make_isotropic, relative_density_norm, EmpiricalMeasure, MeasureSpec,
};
use invstab::moment_map::{
    hessian_bounds_check, monge_ampere_residual, solve_moment_map_1d, GridSpec, MomentMap1D,
};
use invstab::rng::{fill_normal, open_uniform, stream, Purpose};
use invstab::sde::{
    estimate_convergence, generator_residual, simulate, simulate_coupled, DiffusionPair, Init, Process, SimConfig,
    Which,
};
use invstab::stein::{
    kernel_closed_form_1d, kernel_from_moment_map_1d, stein_identity_quadrature, stein_identity_residual, stein_sde,
    SteinKernelField,
};
use invstab::testfn::TestFunction;
use invstab::transport::{
    check_eps_optimized, check_finite_time_bound, check_interpolation, w2_empirical, FiniteTimeInputs,
    InterpolationMode,
};
use nalgebra::{DMatrix, DVector};

const OT_REL_TOL: f64 = 0.05;
const OT_SAMPLES: usize = 2000;
const OT_CASE_LIMIT: Duration = Duration::from_secs(60);
const SWEEP_LIMIT: Duration = Duration::from_secs(300);
const N_SE: f64 = 3.0;
const INEQ_SLACK: f64 = -1e-9;
const INEQ_PAIRS: usize = 100;
const INEQ_LIMIT: Duration = Duration::from_secs(120);
const FIXED_POINT_TOL: f64 = 1e-6;
const MA_ANALYTIC_TOL: f64 = 1e-10;
const MA_SOLVED_TOL: f64 = 1e-6;
const MOMENT_MAP_LIMIT: Duration = Duration::from_secs(10);
const KERNEL_AGREE_TOL: f64 = 1e-4;
const KERNEL_LIMIT: Duration = Duration::from_secs(30);
const STEIN_N: usize = 100_000;
const QUADRATURE_TOL: f64 = 1e-6;
const NOISE_FLOOR_FACTOR: f64 = 3.0;
const KAPPA_RANGE: (f64, f64) = (0.9, 1.1);
const CH_RANGE: (f64, f64) = (0.8, 1.25);
const LUSIN_MATCH_TOL: f64 = 1e-6;
const PIPELINE_LIMIT: Duration = Duration::from_secs(600);

/// Outcome of one criterion; `fingerprint` records every computed number.
struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
    fingerprint: String,
}

#[derive(Default)]
struct Recorder {
    ok: bool,
    failures: Vec<String>,
    details: Vec<String>,
    fp: String,
}

impl Recorder {
    fn new() -> Self {
        Recorder { ok: true, ..Default::default() }
    }

    fn check(&mut self, cond: bool, what: impl Into<String>) {
        let what = what.into();
        if !cond {
            self.ok = false;
            self.failures.push(what.clone());
        }
        self.details.push(format!("{} {what}", if cond { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, what: impl Into<String>) {
        self.details.push(format!("info {}", what.into()));
    }

    fn record(&mut self, key: &str, v: f64) {
        // Debug formatting of f64 round-trips exactly
        let _ = writeln!(self.fp, "{key}={v:?}");
    }

    fn finish(self, summary: String) -> Outcome {
        let summary = if self.failures.is_empty() { summary } else { format!("{summary}; failed: {}", self.failures.join("; ")) };
        Outcome { pass: self.ok, summary, details: self.details, fingerprint: self.fp }
    }
}

type Criterion = fn(&Path) -> invstab::Result<Outcome>;

fn manifest() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn logcosh(eps: f64) -> MeasureSpec {
    let params = BTreeMap::from([("eps".to_string(), eps)]);
    make_gibbs_1d(Expr::parse("x^2/2 + eps*logcosh(x)", &["x"], &params).unwrap()).unwrap()
}

fn c1_gaussian_ot(_: &Path) -> invstab::Result<Outcome> {
    let mut r = Recorder::new();
    let mut worst = 0.0f64;
    for d in 1..=3 {
        for s in [0.25, 4.0] {
            let t = Instant::now();
            // both laws drawn from one seed (common random numbers)
            let seed = 1000 + d as u64;
            let a = make_isotropic(d, 1.0)?.sample(OT_SAMPLES, seed)?;
            let b = make_isotropic(d, s)?.sample(OT_SAMPLES, seed)?;
            let w = w2_empirical(&a, &b)?;
            let exact = (d as f64).sqrt() * (1.0 - s.sqrt()).abs();
            let rel = (w - exact).abs() / exact;
            worst = worst.max(rel);
            let el = t.elapsed();
            r.record(&format!("w2_d{d}_s{s}"), w);
            r.check(rel < OT_REL_TOL && el < OT_CASE_LIMIT, format!("d={d} s={s}: W2 {w:.5} vs {exact:.5}, rel {rel:.4} ({el:.1?})"));
            let indep = w2_empirical(&a, &make_isotropic(d, s)?.sample(OT_SAMPLES, seed + 500)?)?;
            r.record(&format!("w2_indep_d{d}_s{s}"), indep);
            r.note(format!("d={d} s={s}: independent-sample estimate {indep:.5}, rel {:+.4}", (indep - exact) / exact));
        }
    }
    Ok(r.finish(format!("max relative error {worst:.4} < {OT_REL_TOL}")))
}

fn c2_theorem2_sweep(scratch: &Path) -> invstab::Result<Outcome> {
    let mut r = Recorder::new();
    let t = Instant::now();
    // quoted rate: 15 C_H^{(4L²+1)/(2κ)} β (L/κ + 1), checked at C_H = 2
    let hand = theorem2_rhs(1.0, 1.0, 2.0, 1.0)?;
    r.check((hand - 15.0 * 2f64.powf(2.5) * 2.0).abs() < 1e-12, format!("15 C_H^((4L^2+1)/(2 kappa)) beta (L/kappa+1) at C_H=2: {hand}"));
    let cfg = ExperimentConfig::load(&manifest().join("configs/ou_scaled.toml"))?;
    let out = run_experiment(&cfg, &RunOptions { out: Some(scratch.join("ou_scaled")), ..Default::default() })?;
    let d = 2.0f64;
    let mut min_margin = f64::INFINITY;
    for (row, rep) in out.rows.iter().zip(&out.reports) {
        let s = row.value.expect("sweep value");
        let exact = d.sqrt() * (1.0 - s.sqrt()).abs();
        let rhs_expected = 30.0 * d.sqrt() * (1.0 - s.sqrt()).abs();
        let rhs_stated = 30.0 * (2.0 * d).sqrt() * (1.0 - s.sqrt()).abs();
        r.record(&format!("lhs_{s}"), rep.lhs.value);
        r.record(&format!("rhs_{s}"), rep.rhs);
        r.record(&format!("beta_{s}"), rep.inputs.beta);
        let margin = rep.slack - N_SE * rep.lhs.se;
        min_margin = min_margin.min(margin);
        r.check((rep.lhs.value - exact).abs() <= 1e-9 * exact, format!("s={s}: LHS {:.6} = sqrt(d)|1-sqrt(s)| {exact:.6}", rep.lhs.value));
        r.check((rep.rhs - rhs_expected).abs() <= 1e-9 * rhs_expected, format!("s={s}: RHS {:.6} = 30 sqrt(d)|1-sqrt(s)|", rep.rhs));
        r.check(rep.rhs <= rhs_stated, format!("s={s}: RHS {:.6} <= 30 sqrt(2d)|1-sqrt(s)| = {rhs_stated:.6}", rep.rhs));
        r.check(margin > 0.0 && rep.verdict == Verdict::Holds, format!("s={s}: slack {:.4} > 3 SE ({:.1e}), verdict {:?}", rep.slack, rep.lhs.se, rep.verdict));
    }
    r.check(out.rows.len() == 3, format!("{} sweep rows", out.rows.len()));
    let el = t.elapsed();
    r.check(el < SWEEP_LIMIT, format!("runtime {el:.1?}"));
    Ok(r.finish(format!("3 values of s hold, min slack - 3 SE = {min_margin:.4}")))
}

/// Random weighted clouds with `n ≤ 50`, `d ≤ 3`.
fn random_pair(i: u64) -> (EmpiricalMeasure, EmpiricalMeasure) {
    let mut rng = stream(77, Purpose::Sample, i);
    let d = 1 + (open_uniform(&mut rng) * 3.0) as usize;
    let cloud = |rng: &mut _| {
        let n = 2 + (open_uniform(rng) * 49.0) as usize;
        let scale = 0.2 + 3.0 * open_uniform(rng);
        let shift = 4.0 * (open_uniform(rng) - 0.5);
        let mut pts = vec![0.0; n * d];
        fill_normal(rng, &mut pts);
        pts.iter_mut().for_each(|v| *v = shift + scale * *v);
        let masses: Vec<f64> = (0..n).map(|_| 0.1 + open_uniform(rng)).collect();
        EmpiricalMeasure::from_masses(d, pts, masses).unwrap()
    };
    let a = cloud(&mut rng);
    let b = cloud(&mut rng);
    (a, b)
}

const RADII: [f64; 3] = [1.5, 4.0, 20.0];
const DELTAS: [f64; 4] = [0.05, 0.5, 2.0, 10.0];
const EPSILONS: [f64; 3] = [0.05, 0.5, 2.0];

fn c3_interpolation(_: &Path) -> invstab::Result<Outcome> {
    let mut r = Recorder::new();
    let t = Instant::now();
    let (mut worst, mut count) = (f64::INFINITY, 0);
    for i in 0..INEQ_PAIRS as u64 {
        let (a, b) = random_pair(i);
        for rr in RADII {
            for delta in DELTAS {
                for eps in EPSILONS {
                    let rep = check_interpolation(&a, &b, rr, delta, eps, InterpolationMode::W2)?;
                    worst = worst.min(rep.slack);
                    count += 1;
                    if rep.slack < INEQ_SLACK {
                        r.check(false, format!("pair {i} R={rr} delta={delta} eps={eps}: slack {:e}", rep.slack));
                    }
                }
            }
        }
    }
    r.record("worst", worst);
    let el = t.elapsed();
    r.check(worst >= INEQ_SLACK, format!("{count} instances, worst slack {worst:.4e}"));
    r.check(el < INEQ_LIMIT, format!("runtime {el:.1?}"));
    Ok(r.finish(format!("delta^2 exp(D_delta/eps) + R eps + R D_delta/ln(1+R^2/delta^2): worst slack {worst:.3e} over {count}")))
}

fn c4_eps_optimized(_: &Path) -> invstab::Result<Outcome> {
    let mut r = Recorder::new();
    let (mut worst_opt, mut worst_w1, mut count) = (f64::INFINITY, f64::INFINITY, 0);
    for i in 0..INEQ_PAIRS as u64 {
        let (a, b) = random_pair(i);
        for rr in RADII {
            for delta in DELTAS.into_iter().filter(|d| *d < rr) {
                let rep = check_eps_optimized(&a, &b, rr, delta)?;
                worst_opt = worst_opt.min(rep.slack);
                for eps in EPSILONS {
                    worst_w1 = worst_w1.min(check_interpolation(&a, &b, rr, delta, eps, InterpolationMode::W1)?.slack);
                }
                count += 1;
            }
        }
    }
    r.record("worst_opt", worst_opt);
    r.record("worst_w1", worst_w1);
    r.check(worst_opt >= INEQ_SLACK, format!("2R(delta + D_delta/ln(1+R/delta)): worst slack {worst_opt:.4e} over {count}"));
    r.check(worst_w1 >= INEQ_SLACK, format!("truncated W1 variant: worst slack {worst_w1:.4e}"));
    Ok(r.finish(format!("worst slack {:.3e} (eps-optimized), {:.3e} (W1)", worst_opt, worst_w1)))
}

fn c5_gaussian_fixed_point(_: &Path) -> invstab::Result<Outcome> {
    let mut r = Recorder::new();
    let t = Instant::now();
    let analytic = MomentMap1D::gaussian(1.0, GridSpec::default())?;
    let ma_analytic = monge_ampere_residual(&analytic);
    let solved = solve_moment_map_1d(&make_isotropic(1, 1.0)?, GridSpec::default())?;
    let ma_solved = monge_ampere_residual(&solved);
    let sup = solved
        .grid
        .iter()
        .zip(&solved.phi_second)
        .filter(|(x, _)| x.abs() <= 4.0)
        .map(|(_, v)| (v - 1.0).abs())
        .fold(0.0, f64::max);
    r.record("sup", sup);
    r.record("ma_analytic", ma_analytic);
    r.record("ma_solved", ma_solved);
    r.check(sup < FIXED_POINT_TOL, format!("tau_gamma = 1: sup |phi'' - 1| on [-4, 4] = {sup:.2e}"));
    r.check(ma_analytic < MA_ANALYTIC_TOL, format!("Monge-Ampere residual, analytic map {ma_analytic:.2e}"));
    r.check(ma_solved < MA_SOLVED_TOL, format!("Monge-Ampere residual, solved map {ma_solved:.2e}"));
    let el = t.elapsed();
    r.check(el < MOMENT_MAP_LIMIT, format!("runtime {el:.1?}"));
    Ok(r.finish(format!("sup |phi''-1| {sup:.1e}, residuals {ma_analytic:.1e} / {ma_solved:.1e}")))
}

fn c6_kernel_agreement(_: &Path) -> invstab::Result<Outcome> {
    let mut r = Recorder::new();
    let t = Instant::now();
    let m = logcosh(0.3);
    let map = solve_moment_map_1d(&m, GridSpec::default())?;
    let a = kernel_from_moment_map_1d(&map)?;
    let b = kernel_closed_form_1d(&m)?;
    let f = m.univariate().expect("one-dimensional");
    let (lo, hi) = (f.quantile(0.0015), f.quantile(0.9985));
    let mut worst = 0.0f64;
    for i in 0..=2000 {
        let y = lo + (hi - lo) * i as f64 / 2000.0;
        worst = worst.max((a.evaluate(&[y])?[(0, 0)] - b.evaluate(&[y])?[(0, 0)]).abs());
    }
    let alpha = 1.0 / 1.3;
    let h = hessian_bounds_check(&map, alpha);
    r.record("worst", worst);
    r.record("min_phi2", h.min_phi_second);
    r.record("max_phi2", h.max_phi_second);
    r.check(worst < KERNEL_AGREE_TOL, format!("sup |tau_map - tau_closed| on [{lo:.3}, {hi:.3}] = {worst:.2e}"));
    r.check(h.pass, format!("{alpha:.4} <= phi'' in [{:.4}, {:.4}] <= {:.4}", h.min_phi_second, h.max_phi_second, 1.0 / alpha));
    let el = t.elapsed();
    r.check(el < KERNEL_LIMIT, format!("runtime {el:.1?}"));
    Ok(r.finish(format!("sup difference {worst:.1e}, Hessian bounds hold")))
}

fn stein_battery(r: &mut Recorder, label: &str, m: &MeasureSpec, k: &SteinKernelField, seed: u64) -> invstab::Result<()> {
    for (i, f) in TestFunction::battery(m.dim()).iter().enumerate() {
        let res = stein_identity_residual(m, k, f, STEIN_N, seed + i as u64)?;
        r.record(&format!("{label}_{}", f.name), res.residual.value);
        r.check(
            res.residual.value.abs() < N_SE * res.residual.se && !res.flagged,
            format!("{label} {}: residual {:+.2e}, SE {:.1e}, clip {:.1e}", f.name, res.residual.value, res.residual.se, res.clip_fraction),
        );
    }
    if m.dim() == 1 {
        for f in TestFunction::battery(1) {
            let q = stein_identity_quadrature(k, &f)?;
            r.record(&format!("{label}_quad_{}", f.name), q);
            r.check(q.abs() < QUADRATURE_TOL, format!("{label} {} quadrature residual {q:.2e}", f.name));
        }
    }
    Ok(())
}

fn c7_stein_identity(_: &Path) -> invstab::Result<Outcome> {
    let mut r = Recorder::new();
    for d in [1, 2] {
        let g = make_isotropic(d, 1.0)?;
        let k = SteinKernelField::constant(g.clone(), DMatrix::identity(d, d))?;
        stein_battery(&mut r, &format!("gaussian d={d}"), &g, &k, 100 * d as u64)?;
    }
    let m = logcosh(0.3);
    let k = kernel_from_moment_map_1d(&solve_moment_map_1d(&m, GridSpec::default())?)?;
    stein_battery(&mut r, "log-cosh", &m, &k, 900)?;
    let n = r.details.len();
    Ok(r.finish(format!("<Hess f(X), tau(X)>_HS identity, {n} checks at n = {STEIN_N}")))
}

fn c8_kernel_sde(_: &Path) -> invstab::Result<Outcome> {
    let mut r = Recorder::new();
    let m = logcosh(0.3);
    let k = kernel_from_moment_map_1d(&solve_moment_map_1d(&m, GridSpec::default())?)?;
    let sp = stein_sde(&k)?;
    for f in [TestFunction::power(1, 0, 2), TestFunction::power(1, 0, 4)] {
        let g = generator_residual(&sp.process.drift, &sp.process.diffusion, &m, &f, STEIN_N, 31)?;
        r.record(&format!("gen_{}", f.name), g.value);
        r.check(g.value.abs() < N_SE * g.se, format!("generator residual on {}: {:+.2e} +- {:.1e}", f.name, g.value, g.se));
    }
    let n = 2000;
    let cfg = SimConfig::new(10.0, 1e-3, n, 41);
    let ens = simulate(&sp.process, 1, &make_dirac(vec![2.0])?, &cfg)?;
    let marginal = ens.marginal_at(10.0, Which::X)?;
    let w = w2_empirical(&marginal, &m.sample(n, 42)?)?;
    let floor = w2_empirical(&m.sample(n, 43)?, &m.sample(n, 44)?)?;
    r.record("w2", w);
    r.record("floor", floor);
    r.check(ens.n_traj() == n, format!("{} of {n} trajectories survived", ens.n_traj()));
    r.check(w < NOISE_FLOOR_FACTOR * floor, format!("W2(law(X_10), mu) {w:.4} < 3 x noise floor {floor:.4}"));
    r.note(format!("{} kernel clamps", sp.clamp_count()));
    Ok(r.finish(format!("mu is invariant: W2 {w:.3} vs floor {floor:.3}")))
}

fn c9_convergence_fit(_: &Path) -> invstab::Result<Outcome> {
    let mut r = Recorder::new();
    let times = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5];
    let fit = estimate_convergence(&Process::ou(1.0), &make_isotropic(1, 1.0)?, &make_dirac(vec![3.0])?, &times, 4000, 1e-3, 51)?;
    r.record("kappa", fit.fitted_kappa);
    r.record("ch", fit.fitted_ch);
    r.check((KAPPA_RANGE.0..=KAPPA_RANGE.1).contains(&fit.fitted_kappa), format!("kappa {:.4} in {KAPPA_RANGE:?}", fit.fitted_kappa));
    r.check((CH_RANGE.0..=CH_RANGE.1).contains(&fit.fitted_ch), format!("C_H {:.4} in {CH_RANGE:?}", fit.fitted_ch));
    r.note(format!("fit window {:?}, noise floor {:.3e}", fit.fit_window, fit.noise_floor));
    Ok(r.finish(format!("kappa {:.3}, C_H {:.3}", fit.fitted_kappa, fit.fitted_ch)))
}

fn c10_finite_time(_: &Path) -> invstab::Result<Outcome> {
    let mut r = Recorder::new();
    for (d, s) in [(1usize, 0.5), (2, 0.25)] {
        let pair = DiffusionPair { x: Process::ou(1.0), y: Process::ou(s), dim: d };
        let mu = make_isotropic(d, 1.0)?;
        let nu = make_isotropic(d, s)?;
        let disc = discrepancy_beta_quadrature_or_mc(&pair, &nu)?;
        let cloud = mu.sample(200, 61)?;
        let drift = |x: &[f64]| x.iter().map(|v| -v).collect::<Vec<f64>>();
        let g = estimate_lusin_witness(&cloud, &[&drift as Field], 2.0)?;
        let inputs = FiniteTimeInputs {
            density_norm: relative_density_norm(&nu, &mu, f64::INFINITY)?,
            g_norm: Some(g.norm_p),
            drift_l1: disc.0,
            diff_l2: disc.1,
        };
        let delta = disc.0 + disc.1;
        let cfg = SimConfig::new(2.0, 1e-3, 2000, 62).record(&[0.5, 1.0, 2.0]);
        let ens = simulate_coupled(&pair, &Init::Shared(make_dirac(vec![0.5; d])?), &cfg)?;
        for t in [0.5, 1.0, 2.0] {
            let rep = check_finite_time_bound(&ens, t, delta, &inputs)?;
            r.record(&format!("d{d}_t{t}"), rep.lhs);
            r.check(
                rep.lhs <= rep.rhs + N_SE * rep.lhs_se,
                format!("d={d} s={s} delta=beta={delta:.4} t={t}: {:.4e} <= {:.4e} + 3 SE", rep.lhs, rep.rhs),
            );
        }
    }
    Ok(r.finish("coupled log-cost below the bound from X_0 = Y_0".into()))
}

/// `(‖a−b‖_{L¹(ν)}, ‖√σ−√τ‖_{L²(ν)})`; both coefficients here are constant or linear.
fn discrepancy_beta_quadrature_or_mc(pair: &DiffusionPair, nu: &MeasureSpec) -> invstab::Result<(f64, f64)> {
    if pair.dim == 1 {
        let rep = discrepancy_beta_quadrature(pair, nu)?;
        return Ok((rep.drift_l1, rep.diff_l2));
    }
    let rep = invstab::bounds::discrepancy_beta(pair, nu, 20_000, 63)?;
    Ok((rep.drift_l1, rep.diff_l2))
}

/// Minimum of `Σ w_i g_i²` over `A g ≥ b` by enumerating active sets.
fn enumerate_active_sets(w: &[f64], cons: &[(Vec<f64>, f64)]) -> f64 {
    let n = w.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << cons.len()) {
        let act: Vec<usize> = (0..cons.len()).filter(|k| mask >> k & 1 == 1).collect();
        let g = if act.is_empty() {
            DVector::zeros(n)
        } else {
            let a = DMatrix::from_fn(act.len(), n, |i, j| cons[act[i]].0[j]);
            let b = DVector::from_iterator(act.len(), act.iter().map(|&k| cons[k].1));
            let winv = DMatrix::from_diagonal(&DVector::from_iterator(n, w.iter().map(|v| 0.5 / v)));
            let s = &a * &winv * a.transpose();
            let Some(mult) = s.clone().lu().solve(&b) else { continue };
            if (&s * &mult - &b).amax() > 1e-9 || mult.iter().any(|v| *v < -1e-12) {
                continue;
            }
            winv * a.transpose() * mult
        };
        if cons.iter().all(|(a, b)| a.iter().zip(g.iter()).map(|(x, y)| x * y).sum::<f64>() >= b - 1e-9) {
            best = best.min(g.iter().zip(w).map(|(g, w)| w * g * g).sum());
        }
    }
    best
}

fn c11_lusin(_: &Path) -> invstab::Result<Outcome> {
    let mut r = Recorder::new();
    let (mut worst_match, mut worst_kkt, mut worst_viol) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..10u64 {
        let mut rng = stream(seed, Purpose::Sample, 11);
        let xs: Vec<f64> = (0..5).map(|_| 4.0 * open_uniform(&mut rng) - 2.0).collect();
        let masses: Vec<f64> = (0..5).map(|_| 0.2 + open_uniform(&mut rng)).collect();
        let f = |x: &[f64]| vec![3.0 * (2.5 * x[0]).sin() + x[0] * x[0]];
        let cloud = EmpiricalMeasure::from_masses(1, xs.clone(), masses)?;
        let wit = estimate_lusin_witness(&cloud, &[&f as Field], 2.0)?;
        let n = wit.weights.len();
        let mut cons = Vec::new();
        for i in 0..n {
            let mut a = vec![0.0; n];
            a[i] = 1.0;
            cons.push((a, 1.0));
            for j in i + 1..n {
                let mut a = vec![0.0; n];
                a[i] = 1.0;
                a[j] = 1.0;
                let (xi, xj) = (wit.points[i], wit.points[j]);
                cons.push((a, (f(&[xi])[0] - f(&[xj])[0]).abs() / (xi - xj).abs()));
            }
        }
        let best = enumerate_active_sets(&wit.weights, &cons);
        worst_match = worst_match.max((wit.objective - best).abs());
        worst_kkt = worst_kkt.max(wit.kkt_residual);
        worst_viol = worst_viol.max(wit.max_violation).max(wit.check(&[&f as Field]));
        r.record(&format!("obj_{seed}"), wit.objective);
    }
    r.check(worst_match < LUSIN_MATCH_TOL, format!("n=5: |objective - enumeration| <= {worst_match:.2e}"));
    r.check(worst_kkt < KKT_TOL, format!("KKT residual <= {worst_kkt:.2e}"));
    r.check(worst_viol <= 0.0, format!("constraint violation {worst_viol:.2e}"));

    let mut worst_excess = f64::NEG_INFINITY;
    for (k, l) in [0.5, 1.0, 2.0, 5.0, 10.0].into_iter().enumerate() {
        let cloud = make_isotropic(2, 1.0)?.sample(60, 70 + k as u64)?;
        let (u1, u2) = (0.6, 0.8);
        let wave = move |x: &[f64]| vec![l * (u1 * x[0] + u2 * x[1]).sin()];
        let linear = move |x: &[f64]| vec![l * x[0], 0.0];
        for (name, f) in [("sine", &wave as Field), ("linear", &linear as Field)] {
            let wit = estimate_lusin_witness(&cloud, &[f], 2.0)?;
            let bound = (l / 2.0).max(1.0);
            worst_excess = worst_excess.max(wit.norm_p - bound);
            worst_kkt = worst_kkt.max(wit.kkt_residual);
            r.record(&format!("lip_{name}_{l}"), wit.norm_p);
            r.check(wit.norm_p <= bound + 1e-6, format!("{name} L={l}: norm {:.6} <= max(L/2, 1) = {bound}", wit.norm_p));
            r.check(wit.kkt_residual < KKT_TOL && wit.check(&[f]) <= 0.0, format!("{name} L={l}: KKT {:.1e}, feasible", wit.kkt_residual));
        }
    }
    Ok(r.finish(format!("enumeration gap {worst_match:.1e}, KKT {worst_kkt:.1e}, Lipschitz excess {worst_excess:.1e}")))
}

fn c12_theorem1(scratch: &Path) -> invstab::Result<Outcome> {
    let mut r = Recorder::new();
    let t = Instant::now();
    let cfg = ExperimentConfig::load(&manifest().join("configs/theorem1_logcosh.toml"))?;
    let out_dir = scratch.join("theorem1");
    let out = run_experiment(&cfg, &RunOptions { out: Some(out_dir.clone()), ..Default::default() })?;
    let rep = &out.reports[0];
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    let inputs = &json["inputs"];
    r.check(json["config_hash"].as_str().is_some_and(|h| h.len() == 64), "report carries the config hash");
    r.check(inputs["p"] == "inf" && inputs["q"] == 1.0, format!("p = {}, q = {}", inputs["p"], inputs["q"]));
    for key in ["r", "beta", "kappa", "c_h", "g_norm", "density_norm", "m2_mu", "m2_nu"] {
        let v = inputs[key].as_f64();
        r.check(v.is_some_and(f64::is_finite), format!("input {key} = {}", inputs[key]));
        r.record(key, v.unwrap_or(f64::NAN));
    }
    let prov = &json["provenance"];
    r.check(prov["constants"].as_object().is_some_and(|c| !c.is_empty()), format!("constants {}", prov["constants"]));
    r.check(!prov["kappa_source"].as_str().unwrap_or("").is_empty(), format!("kappa source: {}", prov["kappa_source"]));
    r.check(!prov["g_source"].as_str().unwrap_or("").is_empty(), format!("g source: {}", prov["g_source"]));
    r.record("lhs", rep.lhs.value);
    r.record("rhs", rep.rhs);
    r.check(rep.verdict != Verdict::Violated, format!("LHS {:.4e} +- {:.1e}, RHS {:.4e}: {:?}", rep.lhs.value, rep.lhs.se, rep.rhs, rep.verdict));
    let el = t.elapsed();
    r.check(el < PIPELINE_LIMIT, format!("runtime {el:.1?}"));
    Ok(r.finish(format!("verdict {:?} (slack {:.3e})", rep.verdict, rep.slack)))
}

/// Every regular file below `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 12] = [
        ("Gaussian OT oracle", c1_gaussian_ot),
        ("Lipschitz bound on the OU sweep", c2_theorem2_sweep),
        ("log-cost interpolation sweep", c3_interpolation),
        ("eps-optimized and truncated W1 variants", c4_eps_optimized),
        ("moment map Gaussian fixed point", c5_gaussian_fixed_point),
        ("moment-map vs closed-form kernel", c6_kernel_agreement),
        ("Stein identity", c7_stein_identity),
        ("kernel SDE invariance", c8_kernel_sde),
        ("OU convergence-rate fit", c9_convergence_fit),
        ("finite-time log-cost bound", c10_finite_time),
        ("Lusin witness", c11_lusin),
        ("first stability bound end to end", c12_theorem1),
    ];
    let scratch = tempfile::tempdir().expect("scratch directory");
    let (first, second) = (scratch.path().join("run1"), scratch.path().join("run2"));
    let mut failed = 0;
    let mut fingerprints = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = f(&first).unwrap_or_else(|e| Outcome {
            pass: false,
            summary: format!("error: {e}"),
            details: vec![],
            fingerprint: String::new(),
        });
        println!("{} [{}] {name}: {} ({:.1?})", if outcome.pass { "PASS" } else { "FAIL" }, k + 1, outcome.summary, t.elapsed());
        for d in &outcome.details {
            println!("      {d}");
        }
        failed += usize::from(!outcome.pass);
        fingerprints.push(outcome.fingerprint);
    }

    let t = Instant::now();
    let mut differing = Vec::new();
    for (k, ((name, f), fp)) in criteria.iter().zip(&fingerprints).enumerate() {
        match f(&second) {
            Ok(o) if o.fingerprint == *fp && !fp.is_empty() => {}
            _ => differing.push(format!("[{}] {name}", k + 1)),
        }
    }
    let (ta, tb) = (tree(&first), tree(&second));
    if ta != tb {
        differing.push("artifact files".into());
    }
    let det_ok = differing.is_empty();
    println!(
        "{} [13] determinism: {} ({:.1?})",
        if det_ok { "PASS" } else { "FAIL" },
        if det_ok {
            format!("12 criteria and {} artifact files reproduced byte for byte", ta.len())
        } else {
            format!("differs: {}", differing.join(", "))
        },
        t.elapsed()
    );
    failed += usize::from(!det_ok);
    println!("{} of 13 criteria passed", 13 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
