use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bench::{benchmark_inference, LatencyStats};
use super::metrics::mean_std;
use crate::error::{Error, Result};
use crate::nn::{train, ArchSpec, ForceModel, Representation, TrainConfig, TrainingSet, Variant};

/// Training data for one needle, keyed by representation.
#[derive(Debug, Clone)]
pub struct NeedleData {
    pub needle_id: String,
    pub sets: BTreeMap<Representation, (TrainingSet, String)>,
}

impl NeedleData {
    pub fn new(needle_id: impl Into<String>) -> Self {
        Self {
            needle_id: needle_id.into(),
            sets: BTreeMap::new(),
        }
    }

    /// Adds a set together with the hash of the file it came from.
    pub fn with(mut self, set: TrainingSet, hash: impl Into<String>) -> Self {
        self.sets.insert(set.representation, (set, hash.into()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixOptions {
    pub stem_channels: usize,
    /// Worker threads for training cells; 0 uses every logical core.
    pub jobs: usize,
    pub bench_warmup: usize,
    pub bench_reps: usize,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        Self {
            stem_channels: crate::nn::DEFAULT_STEM_CHANNELS,
            jobs: 0,
            bench_warmup: 5,
            bench_reps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mae_mn: f64,
    pub best_epoch: usize,
    pub first_train_mse: f64,
    pub last_train_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub needle_id: String,
    pub variant: Variant,
    pub representation: Representation,
    pub seed: u64,
    pub outcome: std::result::Result<RunSummary, String>,
}

/// Aggregate over seeds for one (needle, variant, representation) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub needle_id: String,
    pub variant: Variant,
    pub representation: Representation,
    pub seed_maes: Vec<(u64, f64)>,
    pub failures: Vec<(u64, String)>,
    pub mean_mn: f64,
    pub std_mn: f64,
    pub latency: Option<LatencyStats>,
    pub dataset_hash: String,
    pub config_hash: String,
}

impl EvalReport {
    pub fn is_complete(&self, seeds: usize) -> bool {
        self.failures.is_empty() && self.seed_maes.len() == seeds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixOutput {
    pub needles: Vec<String>,
    pub variants: Vec<Variant>,
    pub representations: Vec<Representation>,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellRun>,
    pub reports: Vec<EvalReport>,
}

impl MatrixOutput {
    pub fn report(
        &self,
        needle: &str,
        variant: Variant,
        rep: Representation,
    ) -> Option<&EvalReport> {
        self.reports
            .iter()
            .find(|r| r.needle_id == needle && r.variant == variant && r.representation == rep)
    }

    /// Latency for a variant, preferring the raw-input model.
    pub fn variant_latency(&self, variant: Variant) -> Option<LatencyStats> {
        let mut reps = self.representations.clone();
        reps.sort();
        reps.iter()
            .flat_map(|&rep| {
                self.reports
                    .iter()
                    .filter(move |r| r.variant == variant && r.representation == rep)
            })
            .find_map(|r| r.latency)
    }
}

/// Trains and evaluates every (needle, variant, representation, seed) cell.
///
/// Cells run in parallel; a failing cell is recorded rather than aborting
/// the matrix. Latency is measured afterwards, one model at a time.
pub fn run_experiment_matrix(
    needles: &[NeedleData],
    variants: &[Variant],
    representations: &[Representation],
    cfg: &TrainConfig,
    opts: &MatrixOptions,
    config_hash: &str,
) -> Result<MatrixOutput> {
    cfg.validate()?;
    for n in needles {
        for rep in representations {
            if !n.sets.contains_key(rep) {
                return Err(Error::MissingDataset(format!(
                    "needle `{}` has no {rep} dataset",
                    n.needle_id
                )));
            }
        }
    }
    let mut jobs = Vec::new();
    for n in needles {
        for &variant in variants {
            for &rep in representations {
                for &seed in &cfg.seeds {
                    jobs.push((n, variant, rep, seed));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let runs: Vec<(CellRun, Option<ForceModel>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(n, variant, rep, seed)| {
                let set = &n.sets[&rep].0;
                let spec =
                    ArchSpec::new(variant, rep.input_len()).with_stem_channels(opts.stem_channels);
                let (outcome, model) = match train(set, &spec, cfg, seed) {
                    Ok((model, hist)) => (
                        Ok(RunSummary {
                            mae_mn: hist.best_val_mae(),
                            best_epoch: hist.best_epoch,
                            first_train_mse: hist.epochs[0].train_mse_n2,
                            last_train_mse: hist.epochs.last().expect("epochs >= 1").train_mse_n2,
                        }),
                        // only the first seed's model is kept, for benchmarking
                        (seed == cfg.seeds[0]).then_some(model),
                    ),
                    Err(e) => (Err(e.to_string()), None),
                };
                let cell = CellRun {
                    needle_id: n.needle_id.clone(),
                    variant,
                    representation: rep,
                    seed,
                    outcome,
                };
                (cell, model)
            })
            .collect()
    });

    let mut reports = Vec::new();
    for n in needles {
        for &variant in variants {
            for &rep in representations {
                let in_cell: Vec<&(CellRun, Option<ForceModel>)> = runs
                    .iter()
                    .filter(|(c, _)| {
                        c.needle_id == n.needle_id
                            && c.variant == variant
                            && c.representation == rep
                    })
                    .collect();
                let mut seed_maes = Vec::new();
                let mut failures = Vec::new();
                for (c, _) in &in_cell {
                    match &c.outcome {
                        Ok(s) => seed_maes.push((c.seed, s.mae_mn)),
                        Err(e) => failures.push((c.seed, e.clone())),
                    }
                }
                let (mean_mn, std_mn) =
                    mean_std(&seed_maes.iter().map(|(_, m)| *m).collect::<Vec<_>>());
                let (set, hash) = &n.sets[&rep];
                let latency = match in_cell.iter().find_map(|(_, m)| m.as_ref()) {
                    Some(model) => Some(benchmark_inference(
                        model,
                        set.row(0),
                        opts.bench_warmup,
                        opts.bench_reps,
                    )?),
                    None => None,
                };
                reports.push(EvalReport {
                    needle_id: n.needle_id.clone(),
                    variant,
                    representation: rep,
                    seed_maes,
                    failures,
                    mean_mn,
                    std_mn,
                    latency,
                    dataset_hash: hash.clone(),
                    config_hash: config_hash.to_string(),
                });
            }
        }
    }
    Ok(MatrixOutput {
        needles: needles.iter().map(|n| n.needle_id.clone()).collect(),
        variants: variants.to_vec(),
        representations: representations.to_vec(),
        seeds: cfg.seeds.clone(),
        cells: runs.into_iter().map(|(c, _)| c).collect(),
        reports,
    })
}
