//! In-place iterative radix-2 Cooley-Tukey FFT.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Precomputed twiddles and bit-reversal permutation for one length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<u32>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::UnsupportedLength(n));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n as u32)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (32 - bits)
                }
            })
            .collect();
        // exp(-2 pi i k / n) evaluated directly, not by recurrence
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Ok(Self {
            n,
            twiddles,
            bitrev,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized forward transform `X_k = sum_j x_j exp(-2 pi i jk / n)`.
    pub fn forward(&self, data: &mut [Complex64]) -> Result<()> {
        if data.len() != self.n {
            return Err(Error::Shape(format!(
                "fft plan for {} points applied to {}",
                self.n,
                data.len()
            )));
        }
        for i in 0..self.n {
            let j = self.bitrev[i] as usize;
            if j > i {
                data.swap(i, j);
            }
        }
        let mut half = 1;
        while half < self.n {
            let stride = self.n / (2 * half);
            for start in (0..self.n).step_by(2 * half) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = data[start + k];
                    let b = data[start + k + half] * w;
                    data[start + k] = a + b;
                    data[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
        Ok(())
    }
}

/// Shared plan for the 1024-point spectra used throughout the pipeline.
pub(crate) fn plan_1024() -> &'static FftPlan {
    static PLAN: OnceLock<FftPlan> = OnceLock::new();
    PLAN.get_or_init(|| FftPlan::new(1024).expect("1024 is a power of two"))
}

/// Forward FFT of a real sequence.
pub fn fft_real(input: &[f64]) -> Result<Vec<Complex64>> {
    let mut buf: Vec<Complex64> = input.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if input.len() == 1024 {
        plan_1024().forward(&mut buf)?;
    } else {
        FftPlan::new(input.len())?.forward(&mut buf)?;
    }
    Ok(buf)
}
