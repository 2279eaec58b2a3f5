//! Simulates a short loading cycle and prints how the interferogram
//! changes with force.
//!
//!     cargo run --release --example simulate_needle

use octforce::sim::{force_to_displacement, generate_dataset, ForceProfile, NeedleModel};

fn main() -> octforce::Result<()> {
    let model = NeedleModel::default();
    let profile = ForceProfile::triangle(200, 1, 1.0)?;
    let data = generate_dataset(&profile, &model, 7)?;

    println!(
        "{} scans of {} samples",
        data.len(),
        data.scans[0].samples().len()
    );
    for i in (0..data.len()).step_by(25) {
        let f = data.forces[i] as f64;
        let d = force_to_displacement(f, &model)?;
        let s = data.scans[i].samples();
        let (lo, hi) = s
            .iter()
            .fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        println!(
            "scan {i:>3}  force {f:.3} N  compression {:.1} um  fringe bin {:.1}  range [{lo:.3}, {hi:.3}]",
            d * 1e6,
            model.fringe_bin(d)
        );
    }
    Ok(())
}
