//! Report artifacts for an experiment directory.
//!
//! `results.csv` has one row per trained cell and seed, `table.csv` and its
//! Markdown view `table.md` have one row per architecture with raw/recon
//! column pairs per needle, and `reldiff.csv` lists the relative MAE
//! difference per needle and architecture. Everything that varies between
//! identical reruns (timings, host, timestamp) lives in `env.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::bench::LatencyStats;
use super::matrix::MatrixOutput;
use super::metrics::relative_difference;
use crate::error::{Error, Result};
use crate::nn::{Representation, Variant};

/// Single-scan inference times of the reference implementation, ms.
pub const REFERENCE_LATENCY_MS: [(Variant, f64); 3] = [
    (Variant::ResNet6, 1.11),
    (Variant::ResNet18, 3.56),
    (Variant::ResNet34, 6.43),
];

fn csv_string(rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.digits$}"),
        _ => String::new(),
    }
}

pub fn results_csv(out: &MatrixOutput) -> Result<String> {
    let mut rows = vec![[
        "needle_id",
        "variant",
        "representation",
        "seed",
        "mae_mN",
        "best_epoch",
        "status",
    ]
    .map(String::from)
    .to_vec()];
    for c in &out.cells {
        let (mae, epoch, status) = match &c.outcome {
            Ok(s) => (
                format!("{:.6}", s.mae_mn),
                s.best_epoch.to_string(),
                "ok".to_string(),
            ),
            Err(e) => (String::new(), String::new(), format!("failed: {e}")),
        };
        rows.push(vec![
            c.needle_id.clone(),
            c.variant.to_string(),
            c.representation.to_string(),
            c.seed.to_string(),
            mae,
            epoch,
            status,
        ]);
    }
    csv_string(&rows)
}

fn cell_mean(
    out: &MatrixOutput,
    needle: &str,
    v: Variant,
    rep: Representation,
) -> (Option<f64>, Option<f64>) {
    match out.report(needle, v, rep) {
        Some(r) if !r.seed_maes.is_empty() => (Some(r.mean_mn), Some(r.std_mn)),
        _ => (None, None),
    }
}

/// Canonical Table-shaped grid: one row per variant.
pub fn table_csv(out: &MatrixOutput) -> Result<String> {
    let mut header = vec!["variant".to_string()];
    for n in &out.needles {
        for rep in &out.representations {
            header.push(format!("{n}_{rep}_mae_mean_mN"));
            header.push(format!("{n}_{rep}_mae_std_mN"));
        }
    }
    header.push("inf_time_median_ms".into());
    header.push("inf_time_iqr_ms".into());
    let mut rows = vec![header];
    for &v in &out.variants {
        let mut row = vec![v.to_string()];
        for n in &out.needles {
            for &rep in &out.representations {
                let (m, s) = cell_mean(out, n, v, rep);
                row.push(fmt_opt(m, 3));
                row.push(fmt_opt(s, 3));
            }
        }
        let lat = out.variant_latency(v);
        row.push(fmt_opt(lat.map(|l| l.median_ms), 3));
        row.push(fmt_opt(lat.map(|l| l.iqr_ms()), 3));
        rows.push(row);
    }
    csv_string(&rows)
}

/// Markdown view of [`table_csv`]; cells read `mean ± std`.
pub fn table_markdown(out: &MatrixOutput) -> String {
    let mut head = vec!["Model".to_string()];
    for n in &out.needles {
        for rep in &out.representations {
            head.push(format!("{n} {rep}"));
        }
    }
    head.push("Inf. times (ms)".into());
    let mut s = String::from(
        "MAE in mN (mean ± std over seeds) and single-scan inference time (median ± IQR).\n\n",
    );
    s += &format!("| {} |\n", head.join(" | "));
    s += &format!("|{}\n", "---|".repeat(head.len()));
    for &v in &out.variants {
        let mut row = vec![v.to_string()];
        for n in &out.needles {
            for &rep in &out.representations {
                row.push(match cell_mean(out, n, v, rep) {
                    (Some(m), Some(sd)) => format!("{m:.2} ± {sd:.2}"),
                    _ => "failed".into(),
                });
            }
        }
        row.push(match out.variant_latency(v) {
            Some(l) => format!("{:.2} ± {:.2}", l.median_ms, l.iqr_ms()),
            None => "n/a".into(),
        });
        s += &format!("| {} |\n", row.join(" | "));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelDiffRow {
    pub needle_id: String,
    pub variant: Variant,
    pub mae_raw_mn: f64,
    pub mae_recon_mn: f64,
    pub relative_difference: f64,
}

pub fn reldiff_rows(out: &MatrixOutput) -> Vec<RelDiffRow> {
    let mut rows = Vec::new();
    for n in &out.needles {
        for &v in &out.variants {
            let (Some(raw), _) = cell_mean(out, n, v, Representation::Raw) else {
                continue;
            };
            let (Some(recon), _) = cell_mean(out, n, v, Representation::Recon) else {
                continue;
            };
            if let Ok(d) = relative_difference(raw, recon) {
                rows.push(RelDiffRow {
                    needle_id: n.clone(),
                    variant: v,
                    mae_raw_mn: raw,
                    mae_recon_mn: recon,
                    relative_difference: d,
                });
            }
        }
    }
    rows
}

pub fn reldiff_csv(out: &MatrixOutput) -> Result<String> {
    let mut rows = vec![[
        "needle_id",
        "variant",
        "mae_raw_mN",
        "mae_recon_mN",
        "relative_difference",
        "raw_better",
    ]
    .map(String::from)
    .to_vec()];
    for r in reldiff_rows(out) {
        rows.push(vec![
            r.needle_id,
            r.variant.to_string(),
            format!("{:.6}", r.mae_raw_mn),
            format!("{:.6}", r.mae_recon_mn),
            format!("{:.6}", r.relative_difference),
            (r.relative_difference > 0.0).to_string(),
        ]);
    }
    csv_string(&rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct HostInfo {
    pub hostname: String,
    pub os: &'static str,
    pub arch: &'static str,
    pub logical_cpus: usize,
    pub precision: &'static str,
    pub package_version: &'static str,
}

impl HostInfo {
    pub fn detect() -> Self {
        let hostname = std::env::var("HOSTNAME")
            .ok()
            .or_else(|| fs::read_to_string("/etc/hostname").ok())
            .map(|s| s.trim().to_string())
            .unwrap_or_else(|| "unknown".into());
        Self {
            hostname,
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            logical_cpus: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            precision: "f64 compute, f32 storage",
            package_version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct LatencyEntry {
    needle_id: String,
    variant: Variant,
    representation: Representation,
    #[serde(flatten)]
    stats: LatencyStats,
}

#[derive(Debug, Clone, Serialize)]
struct Env<'a> {
    host: HostInfo,
    unix_time: u64,
    config_hash: &'a str,
    seeds: &'a [u64],
    dataset_hashes: BTreeMap<String, String>,
    latencies: Vec<LatencyEntry>,
    reference_latency_ms: BTreeMap<String, f64>,
    split_note: &'static str,
}

pub fn env_json(out: &MatrixOutput, config_hash: &str) -> Result<String> {
    let mut dataset_hashes = BTreeMap::new();
    let mut latencies = Vec::new();
    for r in &out.reports {
        dataset_hashes.insert(
            format!("{}/{}", r.needle_id, r.representation),
            r.dataset_hash.clone(),
        );
        if let Some(stats) = r.latency {
            latencies.push(LatencyEntry {
                needle_id: r.needle_id.clone(),
                variant: r.variant,
                representation: r.representation,
                stats,
            });
        }
    }
    let env = Env {
        host: HostInfo::detect(),
        unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        config_hash,
        seeds: &out.seeds,
        dataset_hashes,
        latencies,
        reference_latency_ms: REFERENCE_LATENCY_MS.iter().map(|(v, ms)| (v.to_string(), *ms)).collect(),
        split_note: "validation rows are drawn uniformly at random from the time series, so neighbouring scans \
                     can appear in both splits",
    };
    Ok(serde_json::to_string_pretty(&env)?)
}

/// Writes every report artifact into `dir` and returns their paths.
pub fn write_reports(dir: &Path, out: &MatrixOutput, config_hash: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("results.csv", results_csv(out)?),
        ("table.csv", table_csv(out)?),
        ("table.md", table_markdown(out)),
        ("reldiff.csv", reldiff_csv(out)?),
        ("env.json", env_json(out, config_hash)?),
    ];
    let mut paths = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        paths.push(p);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::matrix::{CellRun, EvalReport, RunSummary};

    fn fake(needles: &[&str]) -> MatrixOutput {
        let mut cells = Vec::new();
        let mut reports = Vec::new();
        for (ni, n) in needles.iter().enumerate() {
            for (vi, v) in Variant::ALL.iter().enumerate() {
                for rep in Representation::ALL {
                    let base = 5.0
                        + ni as f64
                        + vi as f64
                        + if rep == Representation::Raw { 0.0 } else { 1.0 };
                    let maes: Vec<(u64, f64)> =
                        (0..5).map(|s| (s, base + 0.1 * s as f64)).collect();
                    for (s, m) in &maes {
                        cells.push(CellRun {
                            needle_id: n.to_string(),
                            variant: *v,
                            representation: rep,
                            seed: *s,
                            outcome: Ok(RunSummary {
                                mae_mn: *m,
                                best_epoch: 1,
                                first_train_mse: 1.0,
                                last_train_mse: 0.1,
                            }),
                        });
                    }
                    let (mean_mn, std_mn) =
                        crate::eval::mean_std(&maes.iter().map(|(_, m)| *m).collect::<Vec<_>>());
                    reports.push(EvalReport {
                        needle_id: n.to_string(),
                        variant: *v,
                        representation: rep,
                        seed_maes: maes,
                        failures: vec![],
                        mean_mn,
                        std_mn,
                        latency: Some(LatencyStats {
                            median_ms: 1.0 + vi as f64,
                            q1_ms: 0.9,
                            q3_ms: 1.1 + vi as f64,
                            reps: 30,
                        }),
                        dataset_hash: "h".into(),
                        config_hash: "c".into(),
                    });
                }
            }
        }
        MatrixOutput {
            needles: needles.iter().map(|s| s.to_string()).collect(),
            variants: Variant::ALL.to_vec(),
            representations: Representation::ALL.to_vec(),
            seeds: (0..5).collect(),
            cells,
            reports,
        }
    }

    #[test]
    fn full_matrix_has_table_shape() {
        let out = fake(&["needle1", "needle2", "needle3"]);
        assert_eq!(out.cells.len(), 90);
        assert_eq!(out.reports.len(), 18);
        let table = table_csv(&out).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        let mae_cols = lines[0]
            .split(',')
            .filter(|c| c.ends_with("mae_mean_mN"))
            .count();
        assert_eq!(mae_cols, 6);
        assert!(lines[0].contains("inf_time_median_ms"));
        let md = table_markdown(&out);
        assert_eq!(md.lines().filter(|l| l.starts_with("| ResNet")).count(), 3);
        assert!(md.contains("Inf. times"));
        assert_eq!(reldiff_rows(&out).len(), 9);
        assert_eq!(results_csv(&out).unwrap().lines().count(), 91);
        assert!(out.reports.iter().all(|r| r.is_complete(5)));
    }

    #[test]
    fn env_records_reference_latencies() {
        let out = fake(&["n"]);
        let v: serde_json::Value = serde_json::from_str(&env_json(&out, "abc").unwrap()).unwrap();
        assert_eq!(v["reference_latency_ms"]["ResNet18"], 3.56);
        assert_eq!(v["config_hash"], "abc");
    }
}
