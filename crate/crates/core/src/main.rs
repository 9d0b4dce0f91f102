use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use invstab::harness::{self, ExperimentConfig, KernelSource, RunOptions, SimulateParams};
use invstab::transport::TransportCost;

#[derive(Parser)]
#[command(name = "invstab", version, about = "Stability of invariant measures of diffusions: simulation, transport, Stein kernels, bound verification")]
struct Cli {
    /// Base seed (overrides the config seed where one exists).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; INVSTAB_THREADS is read when the flag is absent.
    #[arg(long, global = true, env = "INVSTAB_THREADS")]
    threads: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    W2,
    W2trunc,
    W1trunc,
    Logcost,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    MomentMap,
    ClosedForm,
    Gaussian,
}

impl From<KernelArg> for KernelSource {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::MomentMap => KernelSource::MomentMap,
            KernelArg::ClosedForm => KernelSource::ClosedForm,
            KernelArg::Gaussian => KernelSource::Gaussian,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate two configured processes under a synchronous coupling.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1000)]
        n_traj: usize,
        /// Recording times, comma separated (default: t_end only).
        #[arg(long, value_delimiter = ',')]
        record: Vec<f64>,
        /// Common starting point, comma separated; otherwise each process starts from its law.
        #[arg(long, value_delimiter = ',')]
        init: Option<Vec<f64>>,
        #[arg(long)]
        independent_noise: bool,
        /// Write every recorded state to this CSV.
        #[arg(long)]
        dump_paths: Option<PathBuf>,
    },
    /// Exact optimal transport between two weighted point clouds.
    Transport {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value = "w2")]
        cost: CostArg,
        #[arg(long = "R")]
        r: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Solve the moment map of a configured measure.
    MomentMap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        measure: String,
    },
    /// Monte Carlo check of the Stein identity for a configured measure.
    SteinCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        measure: String,
        #[arg(long, value_enum)]
        kernel: KernelArg,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
    },
    /// Lusin–Lipschitz witness for a vector field on a point cloud.
    Lusin {
        #[arg(long)]
        points: PathBuf,
        /// One expression per component, in `x` (1D) or `x1..xd`.
        #[arg(long = "field", required = true)]
        fields: Vec<String>,
        /// Norm exponent of the witness, finite and > 1.
        #[arg(long, default_value_t = 2.0)]
        p: f64,
    },
    /// Evaluate one theorem on the scenario of a config file.
    VerifyBounds {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        theorem: Option<u8>,
    },
    /// Run a config, including its sweep if it declares one.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(path)?)
}

fn out_or(out: &Option<PathBuf>, default: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from(default))
}

/// Returns whether every verdict and residual check passed.
fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    match cli.cmd {
        Cmd::Simulate { config, x, y, t_end, dt, n_traj, record, init, independent_noise, dump_paths } => {
            let cfg = load(&config)?;
            let record = if record.is_empty() { vec![t_end] } else { record };
            let params = SimulateParams {
                t_end,
                dt,
                n_traj,
                record,
                init_point: init,
                independent_noise,
                seed: cli.seed.unwrap_or(cfg.seed),
            };
            let (ens, summary) = harness::simulate_command(&cfg, &x, &y, &params)?;
            if let Some(path) = dump_paths {
                let mut buf = Vec::new();
                ens.write_csv(&mut buf)?;
                harness::write_atomic(&path, &buf)?;
            }
            harness::write_json(&out_or(&cli.out, "simulate.json"), &summary)?;
            println!("{} of {} trajectories survived", summary.survivors, summary.n_traj);
            Ok(summary.blow_ups.is_empty())
        }
        Cmd::Transport { a, b, cost, r, delta } => {
            let need = |v: Option<f64>, flag: &str| v.with_context(|| format!("--cost needs {flag}"));
            let cost = match cost {
                CostArg::W2 => TransportCost::Quadratic,
                CostArg::W2trunc => TransportCost::TruncatedQuadratic { r: need(r, "--R")? },
                CostArg::W1trunc => TransportCost::TruncatedFirst { r: need(r, "--R")? },
                CostArg::Logcost => TransportCost::Logarithmic { delta: need(delta, "--delta")? },
            };
            let a = harness::read_cloud_csv(&a)?;
            let b = harness::read_cloud_csv(&b)?;
            let s = harness::transport_command(&a, &b, cost)?;
            harness::write_json(&out_or(&cli.out, "transport.json"), &s)?;
            println!("cost {:e} (plan nnz {}, marginal error {:e})", s.cost_value, s.plan_nnz, s.marginal_err);
            Ok(true)
        }
        Cmd::MomentMap { config, measure } => {
            let cfg = load(&config)?;
            let out = out_or(&cli.out, "moment_map");
            let rep = harness::moment_map_command(&cfg, &measure, &out)?;
            for f in &rep.factors {
                println!(
                    "{}: Monge-Ampere residual {:e}, accepted {}",
                    f.csv, f.residuals.monge_ampere, f.accepted
                );
            }
            Ok(rep.accepted)
        }
        Cmd::SteinCheck { config, measure, kernel, n } => {
            let cfg = load(&config)?;
            let rep = harness::stein_check_command(&cfg, &measure, kernel.into(), n, cli.seed.unwrap_or(cfg.seed))?;
            harness::write_json(&out_or(&cli.out, "stein_check.json"), &rep)?;
            println!("stein identity {}", if rep.passed { "passed" } else { "FAILED" });
            Ok(rep.passed)
        }
        Cmd::Lusin { points, fields, p } => {
            let cloud = harness::read_cloud_csv(&points)?;
            let s = harness::lusin_command(&cloud, &fields, p)?;
            harness::write_json(&out_or(&cli.out, "lusin.json"), &s)?;
            println!("norm {:e}, KKT residual {:e}, {} active pairs", s.norm_p, s.kkt_residual, s.active_pairs);
            Ok(s.converged)
        }
        Cmd::VerifyBounds { scenario, theorem } => {
            let cfg = load(&scenario)?;
            if cfg.sweep.is_some() {
                bail!("{} declares a sweep; use the sweep subcommand", scenario.display());
            }
            let opts = RunOptions { seed: cli.seed, theorem, out: cli.out.clone() };
            report(harness::run_experiment(&cfg, &opts)?)
        }
        Cmd::Sweep { config } => {
            let cfg = load(&config)?;
            let opts = RunOptions { seed: cli.seed, theorem: None, out: cli.out.clone() };
            report(harness::run_experiment(&cfg, &opts)?)
        }
    }
}

fn report(outcome: harness::RunOutcome) -> Result<bool> {
    for (row, rep) in outcome.rows.iter().zip(&outcome.reports) {
        let label = row.value.map(|v| format!("{v}: ")).unwrap_or_default();
        println!(
            "{label}theorem {} lhs {:.4e} ± {:.1e}, rhs {:.4e}, slack {:.4e}: {:?}",
            rep.theorem, row.lhs, row.lhs_se, row.rhs, row.slack, row.verdict
        );
    }
    for f in &outcome.files {
        log::info!("wrote {}", f.display());
    }
    Ok(!outcome.any_violated())
}
