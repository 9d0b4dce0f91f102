//! Stein identity E⟨∇f, X⟩ = E⟨Hess f, τ⟩ for the moment-map and closed-form
//! kernels of a log-cosh perturbed Gaussian.

use std::collections::BTreeMap;

use invstab::expr::Expr;
use invstab::measures::make_gibbs_1d;
use invstab::moment_map::{solve_moment_map_1d, GridSpec};
use invstab::stein::{kernel_closed_form_1d, kernel_from_moment_map_1d, stein_identity_quadrature, stein_identity_residual};
use invstab::testfn::TestFunction;

fn main() -> invstab::Result<()> {
    let m = make_gibbs_1d(Expr::parse("x^2/2 + 0.3*logcosh(x)", &["x"], &BTreeMap::new())?)?;
    let from_map = kernel_from_moment_map_1d(&solve_moment_map_1d(&m, GridSpec::default())?)?;
    let closed = kernel_closed_form_1d(&m)?;
    let mut diff: f64 = 0.0;
    for i in 0..=100 {
        let y = -3.0 + 0.06 * i as f64;
        diff = diff.max((from_map.evaluate(&[y])?[(0, 0)] - closed.evaluate(&[y])?[(0, 0)]).abs());
    }
    println!("sup |tau_map - tau_closed| on [-3, 3]: {diff:.2e}");
    for f in TestFunction::battery(1) {
        let r = stein_identity_residual(&m, &from_map, &f, 100_000, 3)?;
        let q = stein_identity_quadrature(&from_map, &f)?;
        println!(
            "{:>12}: MC residual {:+.2e} ± {:.1e}, quadrature {:+.2e}",
            f.name, r.residual.value, r.residual.se, q
        );
    }
    Ok(())
}
