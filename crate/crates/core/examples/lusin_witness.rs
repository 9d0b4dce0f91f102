//! Optimal empirical Lusin–Lipschitz witness g with
//! |f(x) − f(y)| ≤ (g(x) + g(y))|x − y| for a non-Lipschitz field.

use invstab::lusin::{estimate_lusin_witness, Field};
use invstab::measures::make_isotropic;

fn main() -> invstab::Result<()> {
    let cloud = make_isotropic(2, 1.0)?.sample(200, 5)?;
    let cube = |x: &[f64]| vec![x[0].powi(3), x[1] * x[0].abs().sqrt()];
    let lipschitz = |x: &[f64]| vec![(2.0 * x[0]).sin(), x[1]];
    for (name, f) in [("cubic", &cube as Field), ("2-Lipschitz", &lipschitz as Field)] {
        for p in [2.0, 4.0] {
            let w = estimate_lusin_witness(&cloud, &[f], p)?;
            println!(
                "{name:>12} p = {p:>3}: ||g||_p = {:.4}, KKT {:.1e}, violation {:.1e}, {} of {} pairs active",
                w.norm_p, w.kkt_residual, w.max_violation, w.active_pairs, w.candidate_pairs
            );
        }
    }
    Ok(())
}
