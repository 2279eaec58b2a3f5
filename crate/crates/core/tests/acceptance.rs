//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Set `OCTFORCE_ACCEPT=A1,A4` to run a subset.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use octforce::commands::{cmd_reconstruct, cmd_simulate, cmd_train, prepare_needles};
use octforce::config::ExperimentConfig;
use octforce::eval::{self, MatrixOptions, MatrixOutput};
use octforce::nn::{
    capacity_probe, train, ArchSpec, Representation, TrainConfig, TrainingSet, Variant,
};
use octforce::recon::fft::FftPlan;
use octforce::recon::{
    apodize, dechirp, fourier_transform, magnitude_ascan, update_and_subtract_dc, AScanDataset,
    ChirpTable, DcState, ReconConfig,
};
use octforce::sim::{
    force_to_displacement, generate_dataset, scan_rng, synthesize_spectrum, ForceProfile,
    NeedleModel,
};
use octforce::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Check = fn() -> octforce::Result<Outcome>;

// ---------------------------------------------------------------- A1

fn naive_dft(x: &[Complex64], twiddle: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, v)| v * twiddle[(j * k) % n])
                .sum()
        })
        .collect()
}

fn a1_fft() -> octforce::Result<Outcome> {
    let start = Instant::now();
    let n = 1024;
    let plan = FftPlan::new(n)?;
    let twiddle: Vec<Complex64> = (0..n)
        .map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / n as f64))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let mut worst: f64 = 0.0;
    for _ in 0..256 {
        let x: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let reference = naive_dft(&x, &twiddle);
        let mut fast = x;
        plan.forward(&mut fast)?;
        let scale = reference.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let err = fast
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        worst <= 1e-9 && secs < 10.0,
        format!("max relative error {worst:.2e} over 256 vectors in {secs:.1}s"),
    ))
}

// ---------------------------------------------------------------- A2

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero so ReLU stays differentiable under the
/// finite-difference step.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Worst relative error between the tape gradient and central differences,
/// over every input. The op output is contracted with a fixed random tensor
/// so every output element contributes to the loss.
fn grad_error(
    inputs: &[Tensor],
    rng: &mut ChaCha8Rng,
    op: impl Fn(&mut Tape, &[Var]) -> octforce::Result<Var>,
) -> octforce::Result<f64> {
    let build = |inputs: &[Tensor],
                 proj: Option<&Tensor>|
     -> octforce::Result<(Tape, Var, Vec<Var>, Tensor)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let out = op(&mut tape, &vars)?;
        let proj = match proj {
            Some(p) => p.clone(),
            None => Tensor::zeros(tape.value(out).shape()),
        };
        let scalar = if tape.value(out).is_scalar() {
            out
        } else {
            let p = tape.constant(proj.clone());
            let prod = tape.mul(out, p)?;
            tape.sum(prod)
        };
        Ok((tape, scalar, vars, proj))
    };
    let (tape0, _, _, shape_probe) = build(inputs, None)?;
    drop(tape0);
    let proj = random(shape_probe.shape(), rng);
    let (tape, loss, vars, _) = build(inputs, Some(&proj))?;
    let grads = tape.backward(loss)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut numeric = vec![0.0; inputs[i].len()];
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + h;
            let (t, l, _, _) = build(&work, Some(&proj))?;
            let up = t.value(l).item()?;
            work[i].data_mut()[j] = x - h;
            let (t, l, _, _) = build(&work, Some(&proj))?;
            let down = t.value(l).item()?;
            work[i].data_mut()[j] = x;
            numeric[j] = (up - down) / (2.0 * h);
        }
        let scale = numeric
            .iter()
            .chain(&analytic)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-6);
        let err = numeric
            .iter()
            .zip(&analytic)
            .map(|(n, a)| (n - a).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }
    Ok(worst)
}

fn a2_gradients() -> octforce::Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA2);
    let shapes = 20;
    let mut report = Vec::new();
    let mut pass = true;
    let ops = [
        "conv1d",
        "batchnorm1d",
        "relu",
        "add",
        "global_avg_pool",
        "linear",
        "mse",
    ];
    for name in ops {
        let mut worst: f64 = 0.0;
        for _ in 0..shapes {
            let b = rng.gen_range(2..5);
            let c = rng.gen_range(1..5);
            let l = rng.gen_range(3..12);
            let err = match name {
                "conv1d" => {
                    let c_out = rng.gen_range(1..5);
                    let k = [1, 3, 5, 7][rng.gen_range(0..4)];
                    let stride = rng.gen_range(1..3);
                    let pad = k / 2;
                    let with_bias = rng.gen_bool(0.5);
                    let mut inputs = vec![
                        random(&[b, c, l], &mut rng),
                        random(&[c_out, c, k], &mut rng),
                    ];
                    if with_bias {
                        inputs.push(random(&[c_out], &mut rng));
                    }
                    grad_error(&inputs, &mut rng, |t, v| {
                        t.conv1d(v[0], v[1], v.get(2).copied(), stride, pad)
                    })?
                }
                "batchnorm1d" => {
                    let inputs = [
                        random(&[b, c, l], &mut rng),
                        random(&[c], &mut rng),
                        random(&[c], &mut rng),
                    ];
                    grad_error(&inputs, &mut rng, |t, v| {
                        Ok(t.batch_norm_train(v[0], v[1], v[2])?.0)
                    })?
                }
                "relu" => grad_error(&[away_from_zero(&[b, c, l], &mut rng)], &mut rng, |t, v| {
                    Ok(t.relu(v[0]))
                })?,
                "add" => {
                    let inputs = [random(&[b, c, l], &mut rng), random(&[b, c, l], &mut rng)];
                    grad_error(&inputs, &mut rng, |t, v| t.add(v[0], v[1]))?
                }
                "global_avg_pool" => {
                    grad_error(&[random(&[b, c, l], &mut rng)], &mut rng, |t, v| {
                        t.global_avg_pool(v[0])
                    })?
                }
                "linear" => {
                    let out = rng.gen_range(1..4);
                    let inputs = [
                        random(&[b, c], &mut rng),
                        random(&[out, c], &mut rng),
                        random(&[out], &mut rng),
                    ];
                    grad_error(&inputs, &mut rng, |t, v| t.linear(v[0], v[1], v[2]))?
                }
                _ => {
                    let inputs = [random(&[b, 1], &mut rng), random(&[b, 1], &mut rng)];
                    grad_error(&inputs, &mut rng, |t, v| t.mse(v[0], v[1]))?
                }
            };
            worst = worst.max(err);
        }
        pass &= worst <= 1e-4;
        report.push(format!("{name} {worst:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        pass && secs < 120.0,
        format!(
            "{shapes} shapes per op, worst relative error: {} ({secs:.1}s)",
            report.join(", ")
        ),
    ))
}

// ---------------------------------------------------------------- A3 + A8

const DESK_SCANS: usize = 20_000;

fn desk_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.profile.samples = DESK_SCANS;
    cfg.train = TrainConfig::default();
    cfg.architectures = vec![Variant::ResNet6];
    cfg.representations = vec![Representation::Raw, Representation::Recon];
    cfg
}

fn run_matrix(
    cfg: &ExperimentConfig,
    needles: &[eval::NeedleData],
    rep: Representation,
) -> octforce::Result<(MatrixOutput, Duration)> {
    let start = Instant::now();
    let opts = MatrixOptions {
        stem_channels: cfg.stem_channels,
        jobs: 0,
        bench_warmup: 5,
        bench_reps: 50,
    };
    let out = eval::run_experiment_matrix(
        needles,
        &cfg.architectures,
        &[rep],
        &cfg.train,
        &opts,
        &cfg.hash()?,
    )?;
    Ok((out, start.elapsed()))
}

fn matrix_criteria() -> octforce::Result<(Outcome, Outcome)> {
    let cfg = desk_config();
    let dir = tempfile::tempdir().map_err(|e| octforce::Error::Io {
        path: std::env::temp_dir(),
        source: e,
    })?;
    let start = Instant::now();
    let needles = prepare_needles(&cfg, dir.path())?;
    let prep = start.elapsed();

    let (raw, raw_time) = run_matrix(&cfg, &needles, Representation::Raw)?;
    let needle = &cfg.needles[0].id;
    let raw_report = raw.report(needle, Variant::ResNet6, Representation::Raw);
    let a3 = match raw_report {
        Some(r) if r.is_complete(cfg.train.seeds.len()) => {
            let total = (prep + raw_time).as_secs_f64();
            let maes: Vec<String> = r
                .seed_maes
                .iter()
                .map(|(s, m)| format!("seed {s}: {m:.2}"))
                .collect();
            outcome(
                r.mean_mn <= 10.0 && total <= 1800.0,
                format!(
                    "ResNet6 raw, {DESK_SCANS} scans, {} epochs: mean val MAE {:.2} mN ({}) in {:.1} min",
                    cfg.train.epochs,
                    r.mean_mn,
                    maes.join(", "),
                    total / 60.0
                ),
            )
        }
        _ => outcome(false, format!("raw cells incomplete: {:?}", raw.cells)),
    };

    eprintln!("A3 {}", a3.detail);
    let (recon, recon_time) = run_matrix(&cfg, &needles, Representation::Recon)?;
    eprintln!(
        "recon cells finished in {:.1} min",
        recon_time.as_secs_f64() / 60.0
    );
    let mut merged = raw.clone();
    merged.representations.extend(recon.representations);
    merged.cells.extend(recon.cells);
    merged.reports.extend(recon.reports);
    let files = eval::write_reports(dir.path(), &merged, &cfg.hash()?)?;
    let complete = merged.reports.len() == 2
        && merged
            .reports
            .iter()
            .all(|r| r.is_complete(cfg.train.seeds.len()));
    let table = std::fs::read_to_string(dir.path().join("table.md")).unwrap_or_default();
    let reldiff = std::fs::read_to_string(dir.path().join("reldiff.csv")).unwrap_or_default();
    let names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let expected = [
        "results.csv",
        "table.csv",
        "table.md",
        "reldiff.csv",
        "env.json",
    ];
    let has_files = expected.iter().all(|e| names.iter().any(|n| n == e));
    let table_rows = table.lines().filter(|l| l.starts_with('|')).count();
    let shaped = table_rows == 3 && reldiff.lines().count() == 2;
    let direction = reldiff
        .lines()
        .nth(1)
        .map(|l| l.to_string())
        .unwrap_or_default();
    let a8 = outcome(
        complete && has_files && shaped,
        format!(
            "{} reports, {table_rows} table rows, files [{}], reldiff row: {direction}",
            merged.reports.len(),
            names.join(" ")
        ),
    );
    Ok((a3, a8))
}

// ---------------------------------------------------------------- A4

fn a4_baseline() -> octforce::Result<Outcome> {
    let model = NeedleModel {
        noise_sigma: 0.0,
        ..NeedleModel::default()
    };
    let raw = generate_dataset(&ForceProfile::triangle(5000, 10, 1.0)?, &model, 4)?;
    let ascans = AScanDataset::from_mscan(&raw, &ReconConfig::for_model(&model)?)?;
    let s = octforce::commands::baseline_on_ascans(&ascans, 0.2, 0)?;
    Ok(outcome(
        s.val_mae_mn <= 1.0,
        format!(
            "noiseless linear spring: val MAE {:.4} mN over {} held-out scans ({} skipped)",
            s.val_mae_mn, s.val_points, s.skipped
        ),
    ))
}

// ---------------------------------------------------------------- A5

/// A-scan of one spectrum whose DC estimate starts at the exact
/// fringe-free source spectrum, resampled with `table`.
fn single_ascan(
    raw: &[f64],
    dc: &[f64],
    table: &ChirpTable,
    cfg: &ReconConfig,
) -> octforce::Result<Vec<f64>> {
    let spectrum = dechirp(raw, table)?;
    let mut state = DcState::from_estimate(dechirp(dc, table)?);
    let fringe = update_and_subtract_dc(&spectrum, &mut state, cfg)?;
    Ok(magnitude_ascan(&fourier_transform(&apodize(&fringe))?)
        .values()
        .to_vec())
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn a5_fidelity() -> octforce::Result<Outcome> {
    let model = NeedleModel {
        noise_sigma: 0.0,
        drift_rate: 0.0,
        ..NeedleModel::default()
    };
    let r = model.reflectivity;
    let dc: Vec<f64> = (0..1024)
        .map(|i| model.envelope(model.wavenumber(i as f64)) * (1.0 + r * r))
        .collect();
    let with = ReconConfig::for_model(&model)?;
    let without = ReconConfig::without_dechirp();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA5);
    let (mut ok_with, mut bad_without) = (0, 0);
    let trials = 100;
    for i in 0..trials {
        let force: f64 = rng.gen_range(0.0..1.0);
        let d = force_to_displacement(force, &model)?;
        let raw = synthesize_spectrum(d, &model, 0, &mut scan_rng(0, i))?.to_f64();
        let expected = model.fringe_bin(d);
        let hit = |cfg: &ReconConfig| -> octforce::Result<bool> {
            let a = single_ascan(&raw, &dc, cfg.chirp_table(), cfg)?;
            Ok((argmax(&a) as f64 - expected).abs() <= 1.0)
        };
        ok_with += hit(&with)? as usize;
        bad_without += !hit(&without)? as usize;
    }
    Ok(outcome(
        ok_with == trials && bad_without * 100 >= 30 * trials,
        format!(
            "within +-1 bin: {ok_with}/{trials} with dechirp; violations without dechirp: {bad_without}/{trials}"
        ),
    ))
}

// ---------------------------------------------------------------- A6

fn a6_latency() -> octforce::Result<Outcome> {
    let raw = generate_dataset(
        &ForceProfile::ramp(64, 0.0, 1.0)?,
        &NeedleModel::default(),
        6,
    )?;
    let set = TrainingSet::from_raw(&raw);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let mut medians = Vec::new();
    for variant in Variant::ALL {
        let spec = ArchSpec::new(variant, Representation::Raw.input_len());
        let (model, _) = train(&set, &spec, &cfg, 0)?;
        let stats = eval::benchmark_inference(&model, set.row(0), 5, 50)?;
        medians.push((variant, stats.median_ms, stats.iqr_ms()));
    }
    let ordered = medians.windows(2).all(|w| w[0].1 < w[1].1);
    let detail: Vec<String> = medians
        .iter()
        .zip(eval::REFERENCE_LATENCY_MS)
        .map(|((v, m, iqr), (_, reference))| {
            format!("{v} {m:.3} ms (IQR {iqr:.3}, reference {reference})")
        })
        .collect();
    Ok(outcome(ordered, detail.join("; ")))
}

// ---------------------------------------------------------------- A7

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_default()
}

fn history_without_time(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .map(|l| {
            l.rsplit_once(',')
                .map(|(head, _)| head)
                .unwrap_or(l)
                .to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn a7_determinism() -> octforce::Result<Outcome> {
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = 2;
    cfg.train.batch_size = 32;
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let p = d.path();
        cmd_simulate(&cfg, None, Some(400), &p.join("n.octf"))?;
        cmd_reconstruct(&cfg, &p.join("n.octf"), &p.join("n.octa"))?;
        for (data, sub) in [("n.octf", "raw"), ("n.octa", "recon")] {
            let out = p.join(sub);
            std::fs::create_dir_all(&out).unwrap();
            cmd_train(
                &cfg,
                &p.join(data),
                Variant::ResNet6,
                cfg.seed,
                &out,
                |_| {},
            )?;
        }
    }
    let (a, b) = (dirs[0].path(), dirs[1].path());
    let mut same = Vec::new();
    for f in [
        "n.octf",
        "n.json",
        "n.octa",
        "raw/model.octw",
        "raw/model.json",
        "recon/model.octw",
    ] {
        same.push((
            f,
            !read(&a.join(f)).is_empty() && read(&a.join(f)) == read(&b.join(f)),
        ));
    }
    for f in ["raw/history.csv", "recon/history.csv"] {
        let h = history_without_time(&a.join(f));
        same.push((f, !h.is_empty() && h == history_without_time(&b.join(f))));
    }
    let differing: Vec<&str> = same.iter().filter(|(_, s)| !s).map(|(f, _)| *f).collect();
    Ok(outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts identical across reruns", same.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    ))
}

// ---------------------------------------------------------------- A9

fn a9_capacity() -> octforce::Result<Outcome> {
    let model = NeedleModel {
        noise_sigma: 0.0,
        ..NeedleModel::default()
    };
    let raw = generate_dataset(&ForceProfile::ramp(64, 0.0, 1.0)?, &model, 9)?;
    let set = TrainingSet::from_raw(&raw);
    let mut pass = true;
    let mut detail = Vec::new();
    for variant in Variant::ALL {
        let spec = ArchSpec::new(variant, Representation::Raw.input_len());
        let r = capacity_probe(&set, &spec, 1e-3, 0, 500, 1e-6)?;
        pass &= r.reached;
        detail.push(format!(
            "{variant} {:.1e} N^2 after {} epochs",
            r.best_mse, r.epochs_run
        ));
    }
    Ok(outcome(pass, detail.join("; ")))
}

// ----------------------------------------------------------------

fn main() {
    let only: Option<Vec<String>> = std::env::var("OCTFORCE_ACCEPT")
        .ok()
        .map(|s| s.split(',').map(|p| p.trim().to_uppercase()).collect());
    let wanted = |id: &str| only.as_ref().map_or(true, |o| o.iter().any(|x| x == id));

    let mut lines: Vec<(String, Outcome)> = Vec::new();
    let mut run = |id: &str, check: Check| {
        if wanted(id) {
            let start = Instant::now();
            let o = check().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
            eprintln!("{id} finished in {:.1}s", start.elapsed().as_secs_f64());
            lines.push((id.to_string(), o));
        }
    };
    run("A1", a1_fft);
    run("A2", a2_gradients);
    run("A4", a4_baseline);
    run("A5", a5_fidelity);
    run("A6", a6_latency);
    run("A7", a7_determinism);
    run("A9", a9_capacity);
    if wanted("A3") || wanted("A8") {
        match matrix_criteria() {
            Ok((a3, a8)) => {
                lines.push(("A3".into(), a3));
                lines.push(("A8".into(), a8));
            }
            Err(e) => {
                for id in ["A3", "A8"] {
                    lines.push((id.into(), outcome(false, format!("error: {e}"))));
                }
            }
        }
    }
    lines.sort_by(|a, b| a.0.cmp(&b.0));
    let mut failed = 0;
    for (id, o) in &lines {
        println!("{id} {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        lines.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
