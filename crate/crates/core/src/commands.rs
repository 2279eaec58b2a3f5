//! Library side of the command-line tool. Each `cmd_*` function does the
//! work and returns a summary; the binary only parses flags and prints.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{sha256_hex, ExperimentConfig};
use crate::error::{Error, Result};
use crate::eval::{self, LatencyStats, MatrixOptions, MatrixOutput, NeedleData};
use crate::formats;
use crate::nn::{self, ArchSpec, Representation, TrainHistory, TrainingSet, Variant};
use crate::recon::baseline::{fit_linear_baseline, peak_displacement, LinearBaseline};
use crate::recon::{AScanDataset, ReconConfig};
use crate::sim::{generate_dataset, MScanDataset, ProfileSpec};

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub path: PathBuf,
    pub scans: usize,
    pub min_force: f32,
    pub max_force: f32,
    pub seed: u64,
    pub sha256: String,
}

/// Generates one needle's dataset. `samples` overrides the profile length.
pub fn cmd_simulate(
    cfg: &ExperimentConfig,
    needle: Option<&str>,
    samples: Option<usize>,
    out: &Path,
) -> Result<SimulateSummary> {
    let idx = cfg.needle_index(needle)?;
    let data = simulate_needle(cfg, idx, samples)?;
    formats::write_mscan(out, &data)?;
    let (min_force, max_force) = data
        .forces
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &f| {
            (lo.min(f), hi.max(f))
        });
    Ok(SimulateSummary {
        path: out.to_path_buf(),
        scans: data.len(),
        min_force,
        max_force,
        seed: data.seed,
        sha256: sha256_hex(&formats::encode_mscan(&data)),
    })
}

fn simulate_needle(
    cfg: &ExperimentConfig,
    idx: usize,
    samples: Option<usize>,
) -> Result<MScanDataset> {
    let spec = ProfileSpec {
        samples: samples.unwrap_or(cfg.profile.samples),
        ..cfg.profile.clone()
    };
    let needle = &cfg.needles[idx];
    let mut data = generate_dataset(&spec.build()?, &needle.model, cfg.needle_seed(idx))?;
    data.needle_id = needle.id.clone();
    Ok(data)
}

/// Reconstruction settings for a raw dataset: the chirp table comes from
/// the dataset's own model sidecar when it has one.
fn recon_for(cfg: &ExperimentConfig, data: &MScanDataset) -> Result<ReconConfig> {
    let model = data
        .model
        .as_ref()
        .or_else(|| cfg.needles.first().map(|n| &n.model));
    cfg.recon.resolve(model)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructSummary {
    pub path: PathBuf,
    pub scans: usize,
    pub sha256: String,
}

pub fn cmd_reconstruct(
    cfg: &ExperimentConfig,
    input: &Path,
    out: &Path,
) -> Result<ReconstructSummary> {
    let raw = formats::read_mscan(input)?;
    let ascans = AScanDataset::from_mscan(&raw, &recon_for(cfg, &raw)?)?;
    formats::write_ascans(out, &ascans)?;
    Ok(ReconstructSummary {
        path: out.to_path_buf(),
        scans: ascans.len(),
        sha256: sha256_hex(&formats::encode_ascans(&ascans)),
    })
}

/// Loads an OCTF or OCTA file as a training set, by its magic bytes.
pub fn load_training_set(path: &Path) -> Result<TrainingSet> {
    Ok(match formats::detect_representation(path)? {
        Representation::Raw => TrainingSet::from_raw(&formats::read_mscan(path)?),
        Representation::Recon => TrainingSet::from_ascans(&formats::read_ascans(path)?),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub representation: Representation,
    pub variant: Variant,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_mae_mn: f64,
}

pub fn checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("model.octw")
}

/// Trains one network on `data` and writes `model.octw` (with its
/// architecture sidecar) and `history.csv` into `out_dir`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    data: &Path,
    variant: Variant,
    seed: u64,
    out_dir: &Path,
    on_epoch: impl FnMut(&nn::EpochRecord),
) -> Result<TrainSummary> {
    let set = load_training_set(data)?;
    let spec = ArchSpec::new(variant, set.sample_len).with_stem_channels(cfg.stem_channels);
    let (model, history) = nn::train_with_progress(&set, &spec, &cfg.train, seed, on_epoch)?;
    let checkpoint = checkpoint_path(out_dir);
    formats::write_model(&checkpoint, &model)?;
    let history_path = out_dir.join("history.csv");
    write_history(&history_path, &history)?;
    Ok(TrainSummary {
        checkpoint,
        history: history_path,
        representation: set.representation,
        variant,
        seed,
        best_epoch: history.best_epoch,
        best_val_mae_mn: history.best_val_mae(),
    })
}

fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    fs::write(path, history.to_csv()?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub variant: Variant,
    pub representation: Representation,
    pub scans: usize,
    pub mae_mn: f64,
}

/// MAE of a checkpoint over every scan of a dataset.
pub fn cmd_eval(checkpoint: &Path, data: &Path) -> Result<EvalRow> {
    let model = formats::read_model(checkpoint)?;
    let set = load_training_set(data)?;
    let pred = model.predict_all(&set)?;
    Ok(EvalRow {
        checkpoint: checkpoint.to_path_buf(),
        data: data.to_path_buf(),
        variant: model.net.spec().variant,
        representation: model.representation,
        scans: set.len(),
        mae_mn: eval::mae(&pred, set.targets())?,
    })
}

/// Single-scan latency of a checkpoint, on the first scan of `data` when
/// given and on an all-zero scan otherwise.
pub fn cmd_bench(
    checkpoint: &Path,
    data: Option<&Path>,
    warmup: usize,
    reps: usize,
) -> Result<LatencyStats> {
    let model = formats::read_model(checkpoint)?;
    let scan = match data {
        Some(p) => load_training_set(p)?.row(0).to_vec(),
        None => vec![0.0; model.input_len()],
    };
    eval::benchmark_inference(&model, &scan, warmup, reps)
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineSummary {
    pub fit: LinearBaseline,
    pub train_points: usize,
    pub val_points: usize,
    pub skipped: usize,
    pub val_mae_mn: f64,
}

/// Peak tracking plus a least-squares line, scored on a random hold-out.
///
/// The first scan is skipped because the DC estimate starts from it and
/// leaves nothing to track; scans without a usable peak are skipped too.
pub fn baseline_on_ascans(
    ascans: &AScanDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<BaselineSummary> {
    let mut points = Vec::new();
    let mut skipped = 0;
    for (i, (scan, &force)) in ascans.scans.iter().zip(&ascans.forces).enumerate() {
        if i == 0 {
            skipped += 1;
            continue;
        }
        match peak_displacement(scan) {
            Ok(depth) => points.push((depth, force as f64)),
            Err(Error::NoPeak) => skipped += 1,
            Err(e) => return Err(Error::at_scan(i, e)),
        }
    }
    let (train_idx, val_idx) = nn::split_indices(points.len(), val_fraction, seed)?;
    let train: Vec<(f64, f64)> = train_idx.iter().map(|&i| points[i]).collect();
    let fit = fit_linear_baseline(&train)?;
    let pred: Vec<f64> = val_idx.iter().map(|&i| fit.predict(points[i].0)).collect();
    let target: Vec<f64> = val_idx.iter().map(|&i| points[i].1).collect();
    Ok(BaselineSummary {
        fit,
        train_points: train.len(),
        val_points: val_idx.len(),
        skipped,
        val_mae_mn: eval::mae(&pred, &target)?,
    })
}

pub fn cmd_baseline(cfg: &ExperimentConfig, data: &Path, seed: u64) -> Result<BaselineSummary> {
    let ascans = match formats::detect_representation(data)? {
        Representation::Raw => {
            let raw = formats::read_mscan(data)?;
            AScanDataset::from_mscan(&raw, &recon_for(cfg, &raw)?)?
        }
        Representation::Recon => formats::read_ascans(data)?,
    };
    baseline_on_ascans(&ascans, cfg.train.val_fraction, seed)
}

#[derive(Debug, Clone)]
pub struct MatrixSummary {
    pub output: MatrixOutput,
    pub reports: Vec<PathBuf>,
    pub config_hash: String,
}

/// Builds in-memory training sets for every configured needle, writing the
/// datasets under `out_dir/data` so they can be reused by other commands.
pub fn prepare_needles(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<NeedleData>> {
    let mut needles = Vec::new();
    for idx in 0..cfg.needles.len() {
        let raw = simulate_needle(cfg, idx, None)?;
        let id = raw.needle_id.clone();
        let mut needle = NeedleData::new(id.clone());
        let raw_path = out_dir.join("data").join(format!("{id}.octf"));
        formats::write_mscan(&raw_path, &raw)?;
        if cfg.representations.contains(&Representation::Raw) {
            let hash = sha256_hex(&formats::encode_mscan(&raw));
            needle = needle.with(TrainingSet::from_raw(&raw), hash);
        }
        if cfg.representations.contains(&Representation::Recon) {
            let ascans = AScanDataset::from_mscan(&raw, &recon_for(cfg, &raw)?)?;
            formats::write_ascans(&out_dir.join("data").join(format!("{id}.octa")), &ascans)?;
            let hash = sha256_hex(&formats::encode_ascans(&ascans));
            needle = needle.with(TrainingSet::from_ascans(&ascans), hash);
        }
        needles.push(needle);
    }
    Ok(needles)
}

pub fn matrix_options(cfg: &ExperimentConfig) -> MatrixOptions {
    MatrixOptions {
        stem_channels: cfg.stem_channels,
        jobs: cfg.jobs,
        bench_warmup: cfg.bench.warmup,
        bench_reps: cfg.bench.reps,
    }
}

/// Runs the full experiment described by `cfg` into `cfg.out_dir`.
pub fn cmd_matrix(cfg: &ExperimentConfig) -> Result<MatrixSummary> {
    cfg.validate()?;
    let config_hash = cfg.hash()?;
    let out_dir = &cfg.out_dir;
    let needles = prepare_needles(cfg, out_dir)?;
    let output = eval::run_experiment_matrix(
        &needles,
        &cfg.architectures,
        &cfg.representations,
        &cfg.train,
        &matrix_options(cfg),
        &config_hash,
    )?;
    let reports = eval::write_reports(out_dir, &output, &config_hash)?;
    let config_path = out_dir.join("config.json");
    fs::write(&config_path, cfg.to_json()?).map_err(|e| Error::io(&config_path, e))?;
    Ok(MatrixSummary {
        output,
        reports,
        config_hash,
    })
}
