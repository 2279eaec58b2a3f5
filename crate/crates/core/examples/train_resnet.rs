//! Trains a small ResNet6 on simulated raw spectra and reports the
//! hold-out error after each epoch.
//!
//!     cargo run --release --example train_resnet -- [scans] [epochs] [raw|recon]

use octforce::nn::{
    train_with_progress, ArchSpec, Representation, TrainConfig, TrainingSet, Variant,
};
use octforce::recon::{AScanDataset, ReconConfig};
use octforce::sim::{generate_dataset, ForceProfile, NeedleModel};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> octforce::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let scans = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let rep: Representation = args
        .get(3)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(Representation::Raw);

    let model = NeedleModel::default();
    let raw = generate_dataset(&ForceProfile::triangle(scans, 10, 1.0)?, &model, 11)?;
    let set = match rep {
        Representation::Raw => TrainingSet::from_raw(&raw),
        Representation::Recon => TrainingSet::from_ascans(&AScanDataset::from_mscan(
            &raw,
            &ReconConfig::for_model(&model)?,
        )?),
    };
    let cfg = TrainConfig {
        epochs,
        seeds: vec![0],
        ..TrainConfig::default()
    };
    let spec = ArchSpec::new(Variant::ResNet6, set.sample_len);
    let (fitted, history) = train_with_progress(&set, &spec, &cfg, 0, |r| {
        println!(
            "epoch {:>3}  train mse {:.2e} N^2  val mae {:.2} mN  {:.1}s",
            r.epoch, r.train_mse_n2, r.val_mae_mn, r.seconds
        );
    })?;
    println!(
        "best epoch {} ({:.2} mN); {} weights",
        history.best_epoch,
        history.best_val_mae(),
        fitted.net.params().num_weights()
    );
    let f = fitted.predict_one(set.row(scans / 4))?;
    println!(
        "scan {}: predicted {f:.4} N, true {:.4} N",
        scans / 4,
        set.target(scans / 4)
    );
    Ok(())
}
