//! Stein-kernel stability bound, all three variants, for a product log-cosh
//! law against a Gaussian.

use std::path::Path;

use invstab::bounds::{verify_scenario, Theorem, Theorem3Variant};
use invstab::harness::{ExperimentConfig, Resolved};

fn main() -> invstab::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/theorem3_stein.toml");
    let cfg = ExperimentConfig::load(&path)?;
    let mut res = Resolved::new(&cfg)?;
    let base = res.scenario(&cfg, None)?;
    for variant in [Theorem3Variant::General, Theorem3Variant::Radial, Theorem3Variant::Lipschitz] {
        let mut sc = base.clone();
        sc.theorem = Theorem::Three(variant);
        sc.lipschitz = Some(1.0);
        let rep = verify_scenario(&sc)?;
        println!(
            "{variant:?}: beta {:.4e}, lhs {:.4e} ± {:.1e}, rhs {:.4e}, {:?}, notes {:?}",
            rep.inputs.beta, rep.lhs.value, rep.lhs.se, rep.rhs, rep.verdict, rep.provenance.notes
        );
    }
    Ok(())
}
