//! Turns raw interferograms into A-scans and compares the depth peak with
//! the position predicted from the needle geometry.
//!
//!     cargo run --release --example reconstruct_ascans

use octforce::recon::{peak_displacement, reconstruct_mscan, ReconConfig};
use octforce::sim::{force_to_displacement, generate_dataset, ForceProfile, NeedleModel};

fn main() -> octforce::Result<()> {
    let model = NeedleModel::default();
    let data = generate_dataset(&ForceProfile::ramp(400, 0.0, 1.0)?, &model, 3)?;

    for (label, cfg) in [
        ("dechirped", ReconConfig::for_model(&model)?),
        ("raw pixels", ReconConfig::without_dechirp()),
    ] {
        let ascans = reconstruct_mscan(&data, &cfg)?;
        println!("{label}:");
        for i in [50, 150, 250, 350] {
            let d = force_to_displacement(data.forces[i] as f64, &model)?;
            let peak = peak_displacement(&ascans[i])?;
            let height = ascans[i].values().iter().cloned().fold(0.0, f64::max);
            println!(
                "  scan {i}: expected bin {:.2}, found {peak:.2} (peak height {height:.1})",
                model.fringe_bin(d)
            );
        }
    }
    Ok(())
}
