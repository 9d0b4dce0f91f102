//! Experiment runner behind the command-line interface: config-driven
//! scenario verification and sweeps, plus the single-purpose subcommands.
//! Every JSON artifact embeds the SHA-256 of the resolved config (or of the
//! inputs, for config-free subcommands) and is written atomically.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, KernelSource, Resolved};

use crate::bounds::{finite_or_string, verify_scenario, BoundReport, Verdict};
use crate::error::{Error, Result};
use crate::lusin::{estimate_lusin_witness, Field};
use crate::measures::{make_dirac, EmpiricalMeasure};
use crate::moment_map::{hessian_bounds_check, solve_moment_map_product, GridSpec, HessianBounds, MapResiduals};
use crate::rng::derive_seed;
use crate::sde::{simulate_coupled, BlowUp, DiffusionPair, Init, NoiseMode, SimConfig, TrajectoryEnsemble, Which};
use crate::stats::Estimate;
use crate::stein::{stein_identity_quadrature, stein_identity_residual, SteinResidual};
use crate::testfn::TestFunction;
use crate::transport::{solve_ot, TransportCost};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write through a temporary sibling and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Point cloud with header `x_1,..,x_d,weight`; weights are normalised.
pub fn read_cloud_csv(path: &Path) -> Result<EmpiricalMeasure> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let d = header.len().saturating_sub(1);
    let expected: Vec<String> = (1..=d).map(|k| format!("x_{k}")).chain(["weight".to_string()]).collect();
    if d == 0 || header != expected {
        return Err(Error::invalid(format!(
            "{}: header {:?} should be x_1..x_d,weight",
            path.display(),
            header
        )));
    }
    let (mut pts, mut w) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| Error::invalid(format!("{} row {}: {e}", path.display(), line + 2)))?;
        if vals.len() != d + 1 {
            return Err(Error::invalid(format!("{} row {}: expected {} fields", path.display(), line + 2, d + 1)));
        }
        pts.extend_from_slice(&vals[..d]);
        w.push(vals[d]);
    }
    EmpiricalMeasure::from_masses(d, pts, w)
}

pub fn write_cloud_csv(path: &Path, cloud: &EmpiricalMeasure) -> Result<()> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=cloud.dim()).map(|k| format!("x_{k}")).collect();
    header.push("weight".into());
    out.write_record(&header)?;
    for (x, w) in cloud.iter() {
        let mut row: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
        row.push(format!("{w:e}"));
        out.write_record(&row)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportFile<'a> {
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_param: Option<BTreeMap<String, f64>>,
    #[serde(flatten)]
    pub report: &'a BoundReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: Option<f64>,
    pub beta: f64,
    pub lhs: f64,
    pub lhs_se: f64,
    #[serde(serialize_with = "finite_or_string")]
    pub rhs: f64,
    #[serde(serialize_with = "finite_or_string")]
    pub slack: f64,
    pub verdict: Verdict,
    pub config_hash: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub theorem: Option<u8>,
    /// Output directory, or a `.json` file for a single report.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<BoundReport>,
    pub rows: Vec<SweepRow>,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn any_violated(&self) -> bool {
        self.reports.iter().any(|r| r.verdict == Verdict::Violated)
    }
}

fn run_one(cfg: &ExperimentConfig, theorem: Option<u8>) -> Result<(BoundReport, String)> {
    let hash = cfg.hash()?;
    let mut res = Resolved::new(cfg)?;
    let sc = res.scenario(cfg, theorem)?;
    let mut report = verify_scenario(&sc)?;
    report.provenance.notes.extend(res.notes.drain(..));
    Ok((report, hash))
}

fn row(value: Option<f64>, r: &BoundReport, hash: &str) -> SweepRow {
    SweepRow {
        value,
        beta: r.inputs.beta,
        lhs: r.lhs.value,
        lhs_se: r.lhs.se,
        rhs: r.rhs,
        slack: r.slack,
        verdict: r.verdict,
        config_hash: hash.to_string(),
    }
}

/// Run the scenario (or sweep) of a config and write its artifacts:
/// `report.json` and `resolved.toml`, or per-value subdirectories plus
/// `sweep.csv` for sweeps.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let mut files = Vec::new();

    let Some(sweep) = cfg.sweep.clone() else {
        let (report, hash) = run_one(&cfg, opts.theorem)?;
        let (report_path, resolved_path) = if out.extension().is_some_and(|e| e == "json") {
            let stem = out.file_stem().unwrap_or_default().to_string_lossy().to_string();
            (out.clone(), out.with_file_name(format!("{stem}.resolved.toml")))
        } else {
            (out.join("report.json"), out.join("resolved.toml"))
        };
        write_json(&report_path, &ReportFile { config_hash: hash.clone(), sweep_param: None, report: &report })?;
        write_atomic(&resolved_path, cfg.resolved_toml()?.as_bytes())?;
        files.extend([report_path, resolved_path]);
        let rows = vec![row(None, &report, &hash)];
        return Ok(RunOutcome { reports: vec![report], rows, files });
    };

    write_atomic(&out.join("resolved.toml"), cfg.resolved_toml()?.as_bytes())?;
    files.push(out.join("resolved.toml"));
    let children: Vec<ExperimentConfig> = sweep
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut c = cfg.with_param(&sweep.param, v);
            c.seed = derive_seed(cfg.seed, i as u64 + 1);
            c
        })
        .collect();
    let results: Vec<(BoundReport, String)> = children
        .par_iter()
        .zip(&sweep.values)
        .map(|(c, v)| run_one(c, opts.theorem).map_err(|e| e.context(format!("{} = {v}", sweep.param))))
        .collect::<Result<_>>()?;

    let mut csv_out = csv::Writer::from_writer(Vec::new());
    csv_out.write_record([sweep.param.as_str(), "beta", "lhs", "rhs", "slack", "lhs_se", "verdict", "config_hash"])?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for ((child, &v), (report, hash)) in children.iter().zip(&sweep.values).zip(results) {
        let dir = out.join(format!("{}_{v}", sweep.param));
        let param = BTreeMap::from([(sweep.param.clone(), v)]);
        write_json(&dir.join("report.json"), &ReportFile { config_hash: hash.clone(), sweep_param: Some(param), report: &report })?;
        write_atomic(&dir.join("resolved.toml"), child.resolved_toml()?.as_bytes())?;
        files.extend([dir.join("report.json"), dir.join("resolved.toml")]);
        let verdict = serde_json::to_value(report.verdict)?;
        csv_out.write_record([
            format!("{v}"),
            format!("{:e}", report.inputs.beta),
            format!("{:e}", report.lhs.value),
            format!("{:e}", report.rhs),
            format!("{:e}", report.slack),
            format!("{:e}", report.lhs.se),
            verdict.as_str().unwrap_or_default().to_string(),
            hash.clone(),
        ])?;
        rows.push(row(Some(v), &report, &hash));
        reports.push(report);
    }
    let bytes = csv_out.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_atomic(&out.join("sweep.csv"), &bytes)?;
    files.push(out.join("sweep.csv"));
    Ok(RunOutcome { reports, rows, files })
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportSummary {
    pub cost: TransportCost,
    pub cost_value: f64,
    pub plan_nnz: usize,
    pub marginal_err: f64,
    pub dual_violation: f64,
    pub n: usize,
    pub m: usize,
    pub input_hash: String,
}

pub fn transport_command(a: &EmpiricalMeasure, b: &EmpiricalMeasure, cost: TransportCost) -> Result<TransportSummary> {
    let plan = solve_ot(a, b, cost)?;
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(a, b, cost))?);
    Ok(TransportSummary {
        cost,
        cost_value: plan.cost_value,
        plan_nnz: plan.nnz(),
        marginal_err: plan.marginal_error(a.weights(), b.weights()),
        dual_violation: plan.dual_violation,
        n: a.len(),
        m: b.len(),
        input_hash: hex::encode(h.finalize()),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LusinSummary {
    pub p: f64,
    pub norm_p: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub active_pairs: usize,
    pub candidate_pairs: usize,
    pub max_violation: f64,
    pub converged: bool,
    pub points: usize,
    pub merged: usize,
    pub fields: Vec<String>,
    pub input_hash: String,
}

/// Witness for the field whose components are `exprs` (variables `x` in 1D,
/// `x1..xd` otherwise).
pub fn lusin_command(cloud: &EmpiricalMeasure, exprs: &[String], p: f64) -> Result<LusinSummary> {
    if exprs.is_empty() {
        return Err(Error::invalid("give at least one field component"));
    }
    let parsed = config::expr_field(exprs, cloud.dim(), &BTreeMap::new())?;
    let f = |x: &[f64]| parsed.iter().map(|e| e.eval(x)).collect::<Vec<f64>>();
    let fields: [Field; 1] = [&f];
    let w = estimate_lusin_witness(cloud, &fields, p)?;
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(cloud, exprs, p))?);
    Ok(LusinSummary {
        p,
        norm_p: w.norm_p,
        objective: w.objective,
        kkt_residual: w.kkt_residual,
        active_pairs: w.active_pairs,
        candidate_pairs: w.candidate_pairs,
        max_violation: w.max_violation,
        converged: w.converged,
        points: w.weights.len(),
        merged: w.merged,
        fields: exprs.to_vec(),
        input_hash: hex::encode(h.finalize()),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FactorReport {
    pub csv: String,
    pub residuals: MapResiduals,
    pub accepted: bool,
    pub hessian: HessianBounds,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentMapReport {
    pub config_hash: String,
    pub measure: String,
    pub alpha: f64,
    pub factors: Vec<FactorReport>,
    pub accepted: bool,
}

/// Solve the moment map of a configured measure, writing `map.csv`
/// (`map_<k>.csv` per factor for products) and `residuals.json`.
pub fn moment_map_command(cfg: &ExperimentConfig, measure: &str, out: &Path) -> Result<MomentMapReport> {
    let res = Resolved::new(cfg)?;
    let m = res.measure(measure)?;
    let alpha = m.convexity_alpha().unwrap_or(f64::NAN);
    let map = solve_moment_map_product(m, GridSpec::default())?;
    let mut factors = Vec::new();
    for (k, f) in map.factors.iter().enumerate() {
        let name = if map.factors.len() == 1 { "map.csv".to_string() } else { format!("map_{}.csv", k + 1) };
        let mut buf = Vec::new();
        f.write_csv(&mut buf)?;
        write_atomic(&out.join(&name), &buf)?;
        factors.push(FactorReport {
            csv: name,
            residuals: f.residuals(),
            accepted: f.accepted(),
            hessian: hessian_bounds_check(f, alpha),
        });
    }
    let report = MomentMapReport {
        config_hash: cfg.hash()?,
        measure: measure.to_string(),
        alpha,
        accepted: factors.iter().all(|f| f.accepted),
        factors,
    };
    write_json(&out.join("residuals.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SteinCheckReport {
    pub config_hash: String,
    pub measure: String,
    pub kernel: KernelSource,
    pub n: usize,
    pub seed: u64,
    pub residuals: Vec<SteinResidual>,
    /// 1D quadrature residual per test function.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<BTreeMap<String, f64>>,
    /// Residual within three standard errors for every test function.
    pub passed: bool,
}

pub fn stein_check_command(
    cfg: &ExperimentConfig,
    measure: &str,
    kernel: KernelSource,
    n: usize,
    seed: u64,
) -> Result<SteinCheckReport> {
    let mut res = Resolved::new(cfg)?;
    let m = res.measure(measure)?.clone();
    let k = res.kernel(measure, kernel)?;
    let battery = TestFunction::battery(m.dim());
    let residuals: Vec<SteinResidual> = battery
        .iter()
        .enumerate()
        .map(|(i, f)| stein_identity_residual(&m, &k, f, n, derive_seed(seed, i as u64)))
        .collect::<Result<_>>()?;
    let quadrature = if m.dim() == 1 {
        Some(battery.iter().map(|f| Ok((f.name.clone(), stein_identity_quadrature(&k, f)?))).collect::<Result<_>>()?)
    } else {
        None
    };
    let passed = residuals.iter().all(|r| !r.flagged && r.residual.within(0.0, 3.0));
    Ok(SteinCheckReport {
        config_hash: cfg.hash()?,
        measure: measure.to_string(),
        kernel,
        n,
        seed,
        residuals,
        quadrature,
        passed,
    })
}

#[derive(Debug, Clone)]
pub struct SimulateParams {
    pub t_end: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub record: Vec<f64>,
    /// Start both processes at this point; otherwise `X₀ ~ law(x)`, `Y₀ ~ law(y)`.
    pub init_point: Option<Vec<f64>>,
    /// Drive the two processes with independent noise instead of shared increments.
    pub independent_noise: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginalSummary {
    pub t: f64,
    pub mean_x: Vec<f64>,
    pub var_x: Vec<f64>,
    pub mean_y: Vec<f64>,
    pub var_y: Vec<f64>,
    /// `E|X_t − Y_t|²` under the synchronous coupling.
    pub squared_gap: Estimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub config_hash: String,
    pub x: String,
    pub y: String,
    pub n_traj: usize,
    pub survivors: usize,
    pub blow_ups: Vec<BlowUp>,
    pub marginals: Vec<MarginalSummary>,
}

pub fn simulate_command(
    cfg: &ExperimentConfig,
    x: &str,
    y: &str,
    p: &SimulateParams,
) -> Result<(TrajectoryEnsemble, SimulateSummary)> {
    let mut res = Resolved::new(cfg)?;
    let sx = res.process(cfg, x)?;
    let sy = res.process(cfg, y)?;
    let d = sx.law.dim();
    if sy.law.dim() != d {
        return Err(Error::invalid("processes have different dimensions"));
    }
    let init = match &p.init_point {
        Some(pt) => Init::Shared(make_dirac(pt.clone())?),
        None => Init::Separate(sx.law.clone(), sy.law.clone()),
    };
    let pair = DiffusionPair { x: sx.process, y: sy.process, dim: d };
    let noise = if p.independent_noise { NoiseMode::Independent } else { NoiseMode::Synchronous };
    let sim = SimConfig::new(p.t_end, p.dt, p.n_traj, p.seed).record(&p.record).noise(noise);
    let ens = simulate_coupled(&pair, &init, &sim)?;
    let mut marginals = Vec::new();
    for &t in &ens.times {
        if ens.n_traj() == 0 {
            break;
        }
        let mx = ens.marginal_at(t, Which::X)?;
        let my = ens.marginal_at(t, Which::Y)?;
        marginals.push(MarginalSummary {
            t,
            mean_x: mx.mean(),
            var_x: mx.variance(),
            mean_y: my.mean(),
            var_y: my.variance(),
            squared_gap: Estimate::from_samples(&ens.squared_gaps(t)),
        });
    }
    let summary = SimulateSummary {
        config_hash: cfg.hash()?,
        x: x.to_string(),
        y: y.to_string(),
        n_traj: p.n_traj,
        survivors: ens.n_traj(),
        blow_ups: ens.blow_ups.clone(),
        marginals,
    };
    Ok((ens, summary))
}
