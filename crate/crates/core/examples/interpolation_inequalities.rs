//! Interpolation between the logarithmic cost and the truncated W2/W1 costs
//! on random empirical pairs; prints the worst slack per inequality.

use invstab::measures::EmpiricalMeasure;
use invstab::rng::{fill_normal, stream, Purpose};
use invstab::transport::{check_eps_optimized, check_interpolation, InterpolationMode};

fn cloud(d: usize, n: usize, shift: f64, seed: u64) -> EmpiricalMeasure {
    let mut rng = stream(seed, Purpose::Sample, 0);
    let mut pts = vec![0.0; n * d];
    fill_normal(&mut rng, &mut pts);
    pts.iter_mut().for_each(|v| *v += shift);
    EmpiricalMeasure::uniform(d, pts).expect("valid cloud")
}

fn main() -> invstab::Result<()> {
    let (mut w2, mut w1, mut eps_opt) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for i in 0..20u64 {
        let d = 1 + (i % 3) as usize;
        let a = cloud(d, 30, 0.0, 2 * i);
        let b = cloud(d, 30, 0.5 + 0.1 * i as f64, 2 * i + 1);
        for r in [2.0, 10.0] {
            for delta in [0.1, 1.0] {
                for eps in [0.1, 1.0] {
                    w2 = w2.min(check_interpolation(&a, &b, r, delta, eps, InterpolationMode::W2)?.slack);
                    w1 = w1.min(check_interpolation(&a, &b, r, delta, eps, InterpolationMode::W1)?.slack);
                }
                eps_opt = eps_opt.min(check_eps_optimized(&a, &b, r, delta)?.slack);
            }
        }
    }
    println!("min slack: truncated W2 {w2:.4e}, truncated W1 {w1:.4e}, eps-optimized {eps_opt:.4e}");
    Ok(())
}
