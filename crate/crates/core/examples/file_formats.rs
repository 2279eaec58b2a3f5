//! Writes raw, reconstructed and checkpoint files, reads them back and
//! shows what a damaged file reports.

use octforce::formats;
use octforce::nn::{train, ArchSpec, Representation, TrainConfig, TrainingSet, Variant};
use octforce::recon::{AScanDataset, ReconConfig};
use octforce::sim::{generate_dataset, ForceProfile, NeedleModel};

fn main() -> octforce::Result<()> {
    let dir = std::env::temp_dir().join("octforce-formats-demo");
    let model = NeedleModel::default();
    let raw = generate_dataset(&ForceProfile::ramp(40, 0.0, 1.0)?, &model, 9)?;
    let ascans = AScanDataset::from_mscan(&raw, &ReconConfig::for_model(&model)?)?;

    let raw_path = dir.join("needle.octf");
    let recon_path = dir.join("needle.octa");
    formats::write_mscan(&raw_path, &raw)?;
    formats::write_ascans(&recon_path, &ascans)?;
    let back = formats::read_mscan(&raw_path)?;
    println!(
        "{}: {} scans, sidecar model present: {}, identical: {}",
        raw_path.display(),
        back.len(),
        back.model.is_some(),
        back == raw
    );
    println!(
        "{}: detected as {}",
        recon_path.display(),
        formats::detect_representation(&recon_path)?
    );

    let set = TrainingSet::from_ascans(&ascans);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let (net, _) = train(
        &set,
        &ArchSpec::new(Variant::ResNet6, Representation::Recon.input_len()),
        &cfg,
        0,
    )?;
    let ckpt = dir.join("model.octw");
    formats::write_model(&ckpt, &net)?;
    let restored = formats::read_model(&ckpt)?;
    println!(
        "{}: prediction before {:.6} N, after reload {:.6} N",
        ckpt.display(),
        net.predict_one(set.row(5))?,
        restored.predict_one(set.row(5))?
    );

    let mut bytes = std::fs::read(&raw_path).map_err(|e| octforce::Error::Io {
        path: raw_path.clone(),
        source: e,
    })?;
    bytes[0] = b'X';
    let bad = dir.join("damaged.octf");
    std::fs::write(&bad, bytes).map_err(|e| octforce::Error::Io {
        path: bad.clone(),
        source: e,
    })?;
    match formats::read_mscan(&bad) {
        Err(e) => println!("damaged file: [{}] {e}", e.category()),
        Ok(_) => println!("damaged file unexpectedly parsed"),
    }
    Ok(())
}
