//! End-to-end run of the bundled config comparing a Gaussian with the
//! invariant law of a log-cosh Stein diffusion.

use std::path::Path;

use invstab::harness::{run_experiment, ExperimentConfig, RunOptions};

fn main() -> invstab::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/theorem1_logcosh.toml");
    let cfg = ExperimentConfig::load(&path)?;
    let out = std::env::temp_dir().join("invstab_theorem1_pipeline");
    let outcome = run_experiment(&cfg, &RunOptions { out: Some(out.clone()), ..Default::default() })?;
    let rep = &outcome.reports[0];
    println!("{}", serde_json::to_string_pretty(&rep.inputs).expect("serializable"));
    println!("lhs {:.4e} ± {:.1e}, rhs {:.4e}: {:?}", rep.lhs.value, rep.lhs.se, rep.rhs, rep.verdict);
    println!("artifacts in {}", out.display());
    Ok(())
}
