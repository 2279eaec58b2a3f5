//! Classical calibration: track the A-scan peak and fit a straight line
//! from depth to force.

use octforce::commands::baseline_on_ascans;
use octforce::recon::{AScanDataset, ReconConfig};
use octforce::sim::{generate_dataset, ForceProfile, NeedleModel};

fn main() -> octforce::Result<()> {
    for (label, model) in [
        (
            "noiseless",
            NeedleModel {
                noise_sigma: 0.0,
                ..NeedleModel::default()
            },
        ),
        ("1% noise", NeedleModel::default()),
        (
            "saturating spring",
            NeedleModel {
                saturation_force: Some(0.5),
                ..NeedleModel::default()
            },
        ),
    ] {
        let raw = generate_dataset(&ForceProfile::triangle(3000, 3, 1.0)?, &model, 2)?;
        let ascans = AScanDataset::from_mscan(&raw, &ReconConfig::for_model(&model)?)?;
        let s = baseline_on_ascans(&ascans, 0.2, 0)?;
        println!(
            "{label:>18}: force = {:+.5} * bin {:+.4}  val mae {:.3} mN ({} skipped)",
            s.fit.slope, s.fit.intercept, s.val_mae_mn, s.skipped
        );
    }
    Ok(())
}
