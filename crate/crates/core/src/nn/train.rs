use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::resnet::{ArchSpec, ResNet1d};
use crate::error::{Error, Result};
use crate::recon::{AScanDataset, ASCAN_LEN};
use crate::sim::{MScanDataset, SPECTRUM_LEN};
use crate::tensor::{Mode, Tape, Tensor};

const STD_FLOOR: f64 = 1e-12;
const PREDICT_CHUNK: usize = 256;

/// Which signal a network sees: raw spectra or reconstructed A-scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Raw,
    Recon,
}

impl Representation {
    pub const ALL: [Representation; 2] = [Representation::Raw, Representation::Recon];

    pub fn input_len(self) -> usize {
        match self {
            Representation::Raw => SPECTRUM_LEN,
            Representation::Recon => ASCAN_LEN,
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::Raw => "raw",
            Representation::Recon => "recon",
        })
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(Representation::Raw),
            "recon" | "reconstructed" => Ok(Representation::Recon),
            _ => Err(Error::Config(format!("unknown representation `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub val_fraction: f64,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            val_fraction: 0.2,
            seeds: vec![0, 1],
        }
    }
}

impl TrainConfig {
    pub fn paper_scale() -> Self {
        Self {
            epochs: 150,
            seeds: (0..5).collect(),
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction {} not in (0, 1)",
                self.val_fraction
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Input standardization fitted on training rows only.
///
/// Raw spectra are standardized per sample position. A-scans go through
/// `log1p` first and then share one global mean and std.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub log1p: bool,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(set: &TrainingSet, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput(
                "cannot fit a normalizer on zero rows".into(),
            ));
        }
        let l = set.sample_len;
        let n = rows.len() as f64;
        match set.representation {
            Representation::Raw => {
                let mut mean = vec![0.0; l];
                for &r in rows {
                    for (m, &x) in mean.iter_mut().zip(set.row(r)) {
                        *m += x as f64;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; l];
                for &r in rows {
                    for ((v, &x), m) in var.iter_mut().zip(set.row(r)).zip(&mean) {
                        let d = x as f64 - m;
                        *v += d * d;
                    }
                }
                let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
                Ok(Self {
                    log1p: false,
                    mean,
                    std,
                })
            }
            Representation::Recon => {
                let total = n * l as f64;
                let mut sum = 0.0;
                for &r in rows {
                    sum += set.row(r).iter().map(|&x| (x as f64).ln_1p()).sum::<f64>();
                }
                let mean = sum / total;
                let mut ss = 0.0;
                for &r in rows {
                    ss += set
                        .row(r)
                        .iter()
                        .map(|&x| ((x as f64).ln_1p() - mean).powi(2))
                        .sum::<f64>();
                }
                let std = (ss / total).sqrt().max(STD_FLOOR);
                Ok(Self {
                    log1p: true,
                    mean: vec![mean],
                    std: vec![std],
                })
            }
        }
    }

    pub fn identity(len: usize) -> Self {
        Self {
            log1p: false,
            mean: vec![0.0; len],
            std: vec![1.0; len],
        }
    }

    pub fn apply(&self, row: &[f32], out: &mut [f64]) {
        let per_position = self.mean.len() > 1;
        for (i, (o, &x)) in out.iter_mut().zip(row).enumerate() {
            let j = if per_position { i } else { 0 };
            let v = if self.log1p {
                (x as f64).ln_1p()
            } else {
                x as f64
            };
            *o = (v - self.mean[j]) / self.std[j];
        }
    }
}

/// Scan/label pairs flattened for training, kept in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub representation: Representation,
    pub sample_len: usize,
    inputs: Vec<f32>,
    targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(
        representation: Representation,
        sample_len: usize,
        inputs: Vec<f32>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        if sample_len == 0 || inputs.len() != sample_len * targets.len() {
            return Err(Error::Shape(format!(
                "{} input values do not form {} rows of {}",
                inputs.len(),
                targets.len(),
                sample_len
            )));
        }
        Ok(Self {
            representation,
            sample_len,
            inputs,
            targets,
        })
    }

    pub fn from_raw(data: &MScanDataset) -> Self {
        let inputs = data
            .scans
            .iter()
            .flat_map(|s| s.samples().iter().copied())
            .collect();
        Self {
            representation: Representation::Raw,
            sample_len: SPECTRUM_LEN,
            inputs,
            targets: data.forces.iter().map(|&f| f as f64).collect(),
        }
    }

    pub fn from_ascans(data: &AScanDataset) -> Self {
        let inputs = data
            .scans
            .iter()
            .flat_map(|s| s.values().iter().map(|&v| v as f32))
            .collect();
        Self {
            representation: Representation::Recon,
            sample_len: ASCAN_LEN,
            inputs,
            targets: data.forces.iter().map(|&f| f as f64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.sample_len..(i + 1) * self.sample_len]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Rows `rows` normalized into a `[B, 1, L]` tensor.
    pub fn batch(&self, rows: &[usize], norm: &Normalizer) -> Tensor {
        let l = self.sample_len;
        let mut data = vec![0.0; rows.len() * l];
        for (chunk, &r) in data.chunks_mut(l).zip(rows) {
            norm.apply(self.row(r), chunk);
        }
        Tensor::new(vec![rows.len(), 1, l], data).expect("batch shape")
    }

    fn batch_targets(&self, rows: &[usize]) -> Tensor {
        Tensor::new(
            vec![rows.len(), 1],
            rows.iter().map(|&r| self.targets[r]).collect(),
        )
        .expect("target shape")
    }
}

/// Seeded uniform random split into (train, validation) index sets.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("cannot split {n} samples")));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction {val_fraction} not in (0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, 1));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A trained network together with the normalization it expects.
#[derive(Debug, Clone)]
pub struct ForceModel {
    pub net: ResNet1d,
    pub normalizer: Normalizer,
    pub representation: Representation,
}

impl ForceModel {
    pub fn input_len(&self) -> usize {
        self.net.spec().input_len
    }

    fn check(&self, set: &TrainingSet) -> Result<()> {
        if set.sample_len != self.input_len() {
            return Err(Error::RepresentationMismatch {
                expected: self.input_len(),
                actual: set.sample_len,
            });
        }
        Ok(())
    }

    /// Eval-mode predictions in newtons for the given rows.
    pub fn predict(&self, set: &TrainingSet, rows: &[usize]) -> Result<Vec<f64>> {
        self.check(set)?;
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(PREDICT_CHUNK) {
            let mut tape = Tape::inference();
            let x = tape.constant(set.batch(chunk, &self.normalizer));
            let (y, _) = self.net.forward(&mut tape, x, Mode::Eval)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }

    pub fn predict_all(&self, set: &TrainingSet) -> Result<Vec<f64>> {
        self.predict(set, &(0..set.len()).collect::<Vec<_>>())
    }

    /// Single-scan prediction in newtons.
    pub fn predict_one(&self, scan: &[f32]) -> Result<f64> {
        if scan.len() != self.input_len() {
            return Err(Error::RepresentationMismatch {
                expected: self.input_len(),
                actual: scan.len(),
            });
        }
        let mut x = vec![0.0; scan.len()];
        self.normalizer.apply(scan, &mut x);
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::new(vec![1, 1, scan.len()], x)?);
        let (y, _) = self.net.forward(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(y).data()[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse_n2: f64,
    pub val_mae_mn: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_mae(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_mae_mn
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "train_mse_N2", "val_mae_mN", "seconds"])?;
        for e in &self.epochs {
            w.write_record(&[
                e.epoch.to_string(),
                format!("{:e}", e.train_mse_n2),
                format!("{:.6}", e.val_mae_mn),
                format!("{:.3}", e.seconds),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// One optimizer step on `rows`; returns the batch MSE.
fn train_step(
    net: &mut ResNet1d,
    opt: &mut Adam,
    set: &TrainingSet,
    rows: &[usize],
    norm: &Normalizer,
) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(set.batch(rows, norm));
    let t = tape.constant(set.batch_targets(rows));
    let (y, stats) = net.forward(&mut tape, x, Mode::Train)?;
    let loss = tape.mse(y, t)?;
    let value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    net.params_mut().zero_grad();
    grads.accumulate_into(net.params_mut());
    opt.step(net.params_mut())?;
    net.update_running_stats(&stats)?;
    Ok(value)
}

/// Trains one network. The returned model carries the parameters from the
/// epoch with the lowest validation MAE.
pub fn train(
    set: &TrainingSet,
    spec: &ArchSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ForceModel, TrainHistory)> {
    train_with_progress(set, spec, cfg, seed, |_| {})
}

pub fn train_with_progress(
    set: &TrainingSet,
    spec: &ArchSpec,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ForceModel, TrainHistory)> {
    cfg.validate()?;
    if spec.input_len != set.sample_len {
        return Err(Error::RepresentationMismatch {
            expected: spec.input_len,
            actual: set.sample_len,
        });
    }
    if set.len() < 2 * cfg.batch_size {
        return Err(Error::InvalidInput(format!(
            "dataset has {} samples, need at least {}",
            set.len(),
            2 * cfg.batch_size
        )));
    }
    let (mut train_rows, val_rows) = split_indices(set.len(), cfg.val_fraction, seed)?;
    let normalizer = Normalizer::fit(set, &train_rows)?;
    let mut net = ResNet1d::new(spec, &mut stream_rng(seed, 2))?;
    let mut opt = Adam::new(cfg.adam(), net.params());
    let mut shuffle = stream_rng(seed, 3);
    let val_targets: Vec<f64> = val_rows.iter().map(|&r| set.target(r)).collect();

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ResNet1d, usize)> = None;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        train_rows.shuffle(&mut shuffle);
        let (mut sse, mut seen) = (0.0, 0usize);
        for rows in train_rows.chunks(cfg.batch_size) {
            if rows.len() < 2 {
                continue;
            }
            let loss =
                train_step(&mut net, &mut opt, set, rows, &normalizer).map_err(|e| match e {
                    Error::NonFiniteGradient(_) => Error::NonFiniteLoss { epoch },
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            sse += loss * rows.len() as f64;
            seen += rows.len();
        }
        let model = ForceModel {
            net,
            normalizer: normalizer.clone(),
            representation: set.representation,
        };
        let val_mae = crate::eval::mae(&model.predict(set, &val_rows)?, &val_targets)?;
        net = model.net;
        if !val_mae.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_mse_n2: sse / seen as f64,
            val_mae_mn: val_mae,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        records.push(record);
        if best.as_ref().is_none_or(|(b, _, _)| val_mae < *b) {
            best = Some((val_mae, net.clone(), epoch));
        }
    }
    let (_, best_net, best_epoch) = best.expect("at least one epoch");
    Ok((
        ForceModel {
            net: best_net,
            normalizer,
            representation: set.representation,
        },
        TrainHistory {
            seed,
            epochs: records,
            best_epoch,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityReport {
    pub epochs_run: usize,
    pub final_mse: f64,
    pub best_mse: f64,
    pub reached: bool,
}

/// Full-batch training on a small set until the training MSE falls to
/// `target_mse` or `max_epochs` is exhausted.
pub fn capacity_probe(
    set: &TrainingSet,
    spec: &ArchSpec,
    lr: f64,
    seed: u64,
    max_epochs: usize,
    target_mse: f64,
) -> Result<CapacityReport> {
    if set.len() < 2 {
        return Err(Error::InvalidInput(
            "capacity probe needs at least two samples".into(),
        ));
    }
    let rows: Vec<usize> = (0..set.len()).collect();
    let normalizer = Normalizer::fit(set, &rows)?;
    let mut net = ResNet1d::new(spec, &mut stream_rng(seed, 2))?;
    let mut opt = Adam::new(
        AdamConfig {
            lr,
            ..AdamConfig::default()
        },
        net.params(),
    );
    let mut best = f64::INFINITY;
    let mut last = f64::INFINITY;
    for epoch in 1..=max_epochs {
        last = train_step(&mut net, &mut opt, set, &rows, &normalizer)?;
        if !last.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        best = best.min(last);
        if last <= target_mse {
            return Ok(CapacityReport {
                epochs_run: epoch,
                final_mse: last,
                best_mse: best,
                reached: true,
            });
        }
    }
    Ok(CapacityReport {
        epochs_run: max_epochs,
        final_mse: last,
        best_mse: best,
        reached: false,
    })
}
