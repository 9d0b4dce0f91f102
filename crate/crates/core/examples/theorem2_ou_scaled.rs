//! Lipschitz stability bound for OU against a rescaled OU, where the
//! left side W2(μ, ν) = √d |1 − √s| is known in closed form.

use invstab::bounds::{ou_side, verify_scenario, ConvergenceSource, GSource, Scenario, Theorem};

fn main() -> invstab::Result<()> {
    let d = 2;
    for s in [0.25, 0.5, 0.9] {
        let sc = Scenario {
            name: format!("ou_vs_{s}"),
            theorem: Theorem::Two,
            mu: ou_side(d, 1.0)?,
            nu: ou_side(d, s)?,
            p: f64::INFINITY,
            r: None,
            delta: None,
            convergence: ConvergenceSource::Given { kappa: 1.0, c_h: 1.0, source: "analytic OU".into() },
            g: GSource::Given { value: 1.0, source: "unused".into() },
            lipschitz: Some(1.0),
            c3: 1.0,
            lhs_samples: 500,
            replicates: 4,
            beta_samples: 20_000,
            seed: 1,
        };
        let rep = verify_scenario(&sc)?;
        println!(
            "s = {s}: beta {:.4}, lhs {:.4}, rhs {:.4}, {:?}",
            rep.inputs.beta, rep.lhs.value, rep.rhs, rep.verdict
        );
    }
    Ok(())
}
