//! Checks the radix-2 transform against a direct DFT and times both.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use octforce::recon::fft::FftPlan;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, v)| {
                    v * Complex64::from_polar(1.0, -2.0 * PI * (j * k % n) as f64 / n as f64)
                })
                .sum()
        })
        .collect()
}

fn main() -> octforce::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [8, 64, 1024] {
        let plan = FftPlan::new(n)?;
        let x: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let t = Instant::now();
        let mut fast = x.clone();
        plan.forward(&mut fast)?;
        let t_fft = t.elapsed();
        let t = Instant::now();
        let slow = dft(&x);
        let t_dft = t.elapsed();
        let err = fast
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        println!("n={n:>5}  max abs error {err:.2e}  fft {t_fft:?}  dft {t_dft:?}");
    }
    Ok(())
}
