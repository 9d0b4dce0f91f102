//! Moment map of V(x) = x²/2 + 0.3 log cosh x and its Hessian bounds.

use std::collections::BTreeMap;

use invstab::expr::Expr;
use invstab::measures::make_gibbs_1d;
use invstab::moment_map::{hessian_bounds_check, solve_moment_map_1d, GridSpec};

fn main() -> invstab::Result<()> {
    let v = Expr::parse("x^2/2 + 0.3*logcosh(x)", &["x"], &BTreeMap::new())?;
    let target = make_gibbs_1d(v)?;
    let map = solve_moment_map_1d(&target, GridSpec::default())?;
    let r = map.residuals();
    println!("nodes {}, Monge-Ampere residual {:.2e}, pushforward residual {:.2e}", map.len(), r.monge_ampere, r.pushforward);
    let alpha = 1.0 / 1.3;
    let h = hessian_bounds_check(&map, alpha);
    println!("alpha = {alpha:.4}: {h:?}");
    for k in (0..map.len()).step_by(map.len() / 8) {
        println!("x = {:7.3}  phi'' = {:.6}", map.grid[k], map.phi_second[k]);
    }
    Ok(())
}
