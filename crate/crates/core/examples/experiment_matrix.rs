//! A miniature version of the full experiment: two needles, raw and
//! reconstructed inputs, two seeds, written as CSV, Markdown and JSON.
//!
//!     cargo run --release --example experiment_matrix -- [out_dir]

use octforce::commands::cmd_matrix;
use octforce::config::{ExperimentConfig, NeedleConfig};
use octforce::sim::NeedleModel;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> octforce::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/matrix-demo".into());
    let mut cfg = ExperimentConfig::default();
    cfg.out_dir = out.into();
    cfg.profile.samples = 1500;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 64;
    cfg.needles.push(NeedleConfig {
        id: "stiff".into(),
        model: NeedleModel {
            spring_constant: 8000.0,
            ..NeedleModel::default()
        },
        seed: None,
    });
    let s = cmd_matrix(&cfg)?;
    println!("config {}", s.config_hash);
    for r in &s.output.reports {
        println!(
            "{:>8} {} {:>5}: {:.2} +- {:.2} mN",
            r.needle_id, r.variant, r.representation, r.mean_mn, r.std_mn
        );
    }
    for p in &s.reports {
        println!("wrote {}", p.display());
    }
    let table =
        std::fs::read_to_string(cfg.out_dir.join("table.md")).map_err(|e| octforce::Error::Io {
            path: cfg.out_dir.join("table.md"),
            source: e,
        })?;
    print!("{table}");
    Ok(())
}
