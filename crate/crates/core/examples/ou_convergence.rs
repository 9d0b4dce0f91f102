//! Fit the exponential rate κ and prefactor C_H of an Ornstein–Uhlenbeck process
//! started from a point mass.

use invstab::measures::{make_dirac, make_isotropic};
use invstab::sde::{estimate_convergence, Process};

fn main() -> invstab::Result<()> {
    let target = make_isotropic(1, 1.0)?;
    let init = make_dirac(vec![3.0])?;
    let times = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5];
    let fit = estimate_convergence(&Process::ou(1.0), &target, &init, &times, 4000, 1e-3, 7)?;
    for (t, w) in fit.times.iter().zip(&fit.w2_estimates) {
        println!("t = {t:4.2}  W2 = {w:.4}  (exact {:.4})", 3.0 * (-t).exp());
    }
    println!("noise floor {:.4}", fit.noise_floor);
    println!("kappa = {:.3}, C_H = {:.3}, rms residual {:.2e}", fit.fitted_kappa, fit.fitted_ch, fit.fit_residual);
    Ok(())
}
