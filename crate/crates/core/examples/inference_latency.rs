//! Single-scan inference latency for the three network depths.

use octforce::eval::{benchmark_inference, REFERENCE_LATENCY_MS};
use octforce::nn::{train, ArchSpec, Representation, TrainConfig, TrainingSet, Variant};
use octforce::sim::{generate_dataset, ForceProfile, NeedleModel};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> octforce::Result<()> {
    let raw = generate_dataset(
        &ForceProfile::ramp(64, 0.0, 1.0)?,
        &NeedleModel::default(),
        0,
    )?;
    let set = TrainingSet::from_raw(&raw);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 16,
        seeds: vec![0],
        ..TrainConfig::default()
    };
    for variant in Variant::ALL {
        let spec = ArchSpec::new(variant, Representation::Raw.input_len());
        let (model, _) = train(&set, &spec, &cfg, 0)?;
        let stats = benchmark_inference(&model, set.row(0), 5, 50)?;
        let reference = REFERENCE_LATENCY_MS
            .iter()
            .find(|(v, _)| *v == variant)
            .map(|(_, ms)| *ms)
            .unwrap_or(f64::NAN);
        println!(
            "{variant:>8}: median {:.3} ms  IQR {:.3} ms  ({} weights; reference GPU figure {reference} ms)",
            stats.median_ms,
            stats.iqr_ms(),
            model.net.params().num_weights()
        );
    }
    Ok(())
}
