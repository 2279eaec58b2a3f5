use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use octforce::commands;
use octforce::config::ExperimentConfig;
use octforce::nn::Variant;
use octforce::Error;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "octforce",
    version,
    about = "Needle-tip force calibration from OCT signals"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for matrix cells (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// 180k scans, 150 epochs, 5 seeds, all architectures.
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic raw dataset (OCTF).
    Simulate {
        #[arg(long)]
        needle: Option<String>,
        /// Number of scans.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Turn a raw dataset into A-scans (OCTA).
    Reconstruct { input: PathBuf },
    /// Train one network on a dataset.
    Train {
        data: PathBuf,
        #[arg(long, default_value = "resnet6")]
        arch: Variant,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Mean absolute error of a checkpoint on a dataset.
    Eval { checkpoint: PathBuf, data: PathBuf },
    /// Single-scan inference latency of a checkpoint.
    Bench {
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
    },
    /// Peak tracking with a linear fit.
    Baseline { data: PathBuf },
    /// Full needle x architecture x representation x seed experiment.
    Matrix,
}

fn load_config(common: &Common) -> octforce::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if common.paper_scale {
        cfg.apply_paper_scale();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_or(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn with_extension(input: &Path, ext: &str) -> PathBuf {
    input.with_extension(ext)
}

fn run(cli: Cli) -> octforce::Result<()> {
    let common = &cli.common;
    let mut cfg = load_config(common)?;
    let hash = cfg.hash()?;
    match cli.command {
        Command::Simulate { needle, n } => {
            let out = out_or(common, "needle.octf");
            let s = commands::cmd_simulate(&cfg, needle.as_deref(), n, &out)?;
            println!("config {hash} seed {}", s.seed);
            println!(
                "wrote {} N_t={} force=[{:.4}, {:.4}] N sha256={}",
                s.path.display(),
                s.scans,
                s.min_force,
                s.max_force,
                s.sha256
            );
        }
        Command::Reconstruct { input } => {
            let out = common
                .out
                .clone()
                .unwrap_or_else(|| with_extension(&input, "octa"));
            let s = commands::cmd_reconstruct(&cfg, &input, &out)?;
            println!("config {hash} seed {}", cfg.seed);
            println!(
                "wrote {} N_t={} sha256={}",
                s.path.display(),
                s.scans,
                s.sha256
            );
        }
        Command::Train {
            data,
            arch,
            epochs,
            batch_size,
            lr,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(lr) = lr {
                cfg.train.learning_rate = lr;
            }
            cfg.train.validate()?;
            let hash = cfg.hash()?;
            let out = out_or(common, "train");
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            println!("config {hash} seed {}", cfg.seed);
            let s = commands::cmd_train(&cfg, &data, arch, cfg.seed, &out, |r| {
                println!(
                    "epoch {:>3} train_mse={:.3e} N^2 val_mae={:.3} mN ({:.1}s)",
                    r.epoch, r.train_mse_n2, r.val_mae_mn, r.seconds
                );
            })?;
            println!(
                "best epoch {} val_mae={:.3} mN, wrote {} and {}",
                s.best_epoch,
                s.best_val_mae_mn,
                s.checkpoint.display(),
                s.history.display()
            );
        }
        Command::Eval { checkpoint, data } => {
            let r = commands::cmd_eval(&checkpoint, &data)?;
            println!("config {hash} seed {}", cfg.seed);
            println!(
                "{} {} on {} scans: mae={:.3} mN",
                r.variant, r.representation, r.scans, r.mae_mn
            );
        }
        Command::Bench {
            checkpoint,
            data,
            reps,
            warmup,
        } => {
            let stats = commands::cmd_bench(
                &checkpoint,
                data.as_deref(),
                warmup.unwrap_or(cfg.bench.warmup),
                reps.unwrap_or(cfg.bench.reps),
            )?;
            println!("config {hash} seed {}", cfg.seed);
            println!(
                "median {:.3} ms, IQR {:.3} ms over {} reps",
                stats.median_ms,
                stats.iqr_ms(),
                stats.reps
            );
        }
        Command::Baseline { data } => {
            let s = commands::cmd_baseline(&cfg, &data, cfg.seed)?;
            println!("config {hash} seed {}", cfg.seed);
            println!(
                "force = {:.6} * depth + {:.6}; {} fit / {} held out / {} skipped; val_mae={:.3} mN",
                s.fit.slope, s.fit.intercept, s.train_points, s.val_points, s.skipped, s.val_mae_mn
            );
        }
        Command::Matrix => {
            println!("config {hash} seeds {:?}", cfg.train.seeds);
            let s = commands::cmd_matrix(&cfg)?;
            for r in &s.output.reports {
                println!(
                    "{} {} {}: {:.3} ± {:.3} mN",
                    r.needle_id, r.variant, r.representation, r.mean_mn, r.std_mn
                );
            }
            for p in &s.reports {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(2)
        }
    }
}
