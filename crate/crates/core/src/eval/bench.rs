use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::quantile_sorted;
use crate::error::{Error, Result};
use crate::nn::ForceModel;
use crate::tensor::{Mode, Tape, Tensor};

pub const MIN_REPS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    pub reps: usize,
}

impl LatencyStats {
    pub fn iqr_ms(&self) -> f64 {
        self.q3_ms - self.q1_ms
    }

    pub fn from_samples(mut ms: Vec<f64>) -> Result<Self> {
        if ms.is_empty() {
            return Err(Error::InvalidInput("no latency samples".into()));
        }
        ms.sort_by(f64::total_cmp);
        Ok(Self {
            median_ms: quantile_sorted(&ms, 0.5),
            q1_ms: quantile_sorted(&ms, 0.25),
            q3_ms: quantile_sorted(&ms, 0.75),
            reps: ms.len(),
        })
    }
}

/// Times single-scan eval-mode forward passes on `scan`.
pub fn benchmark_inference(
    model: &ForceModel,
    scan: &[f32],
    warmup: usize,
    reps: usize,
) -> Result<LatencyStats> {
    if reps < MIN_REPS {
        return Err(Error::Config(format!(
            "benchmark needs at least {MIN_REPS} repetitions, got {reps}"
        )));
    }
    let len = model.input_len();
    if scan.len() != len {
        return Err(Error::RepresentationMismatch {
            expected: len,
            actual: scan.len(),
        });
    }
    let mut input = vec![0.0; len];
    model.normalizer.apply(scan, &mut input);
    let input = Tensor::new(vec![1, 1, len], input)?;
    let mut times = Vec::with_capacity(reps);
    for i in 0..warmup + reps {
        let start = Instant::now();
        let mut tape = Tape::inference();
        let x = tape.constant(input.clone());
        let (y, _) = model.net.forward(&mut tape, x, Mode::Eval)?;
        std::hint::black_box(tape.value(y).data()[0]);
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        if tape.num_records() != 0 {
            return Err(Error::Contract(
                "inference tape recorded backward state".into(),
            ));
        }
        if i >= warmup {
            times.push(elapsed);
        }
    }
    LatencyStats::from_samples(times)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_from_samples() {
        let s = LatencyStats::from_samples(vec![5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(s.median_ms, 3.0);
        assert_eq!(s.q1_ms, 2.0);
        assert_eq!(s.iqr_ms(), 2.0);
        assert_eq!(s.reps, 5);
    }
}
