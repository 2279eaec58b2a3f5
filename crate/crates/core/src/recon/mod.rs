//! Spectral-domain OCT reconstruction: raw 1024-pixel interferograms to
//! 512-bin depth profiles (A-scans).
//!
//! ```text
//! raw -> dechirp -> EMA DC update -> DC subtract -> Hann -> FFT -> |.| -> A-scan
//! ```
//!
//! The DC estimate is an exponential moving average carried across the scans
//! of one M-scan, so reconstruction is order-sensitive.

pub mod baseline;
pub mod fft;

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{MScanDataset, NeedleModel, SPECTRUM_LEN};

pub use baseline::{fit_linear_baseline, peak_displacement, LinearBaseline};

/// Depth bins per reconstructed A-scan.
pub const ASCAN_LEN: usize = SPECTRUM_LEN / 2;

pub const DEFAULT_DAMPING: f64 = 0.05;

/// Source pixel positions at which to sample a raw spectrum so that the
/// output is uniform in wavenumber.
#[derive(Debug, Clone, PartialEq)]
pub struct ChirpTable(Vec<f64>);

impl ChirpTable {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Config("chirp table is empty".into()));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config(
                "chirp table contains non-finite positions".into(),
            ));
        }
        if let Some(i) = positions.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Config(format!(
                "chirp table is not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self(positions))
    }

    pub fn identity(len: usize) -> Self {
        Self((0..len).map(|i| i as f64).collect())
    }

    /// Inverts the model's pixel-to-wavenumber map onto a uniform
    /// wavenumber grid spanning the same band.
    pub fn from_model(model: &NeedleModel) -> Result<Self> {
        model.validate()?;
        let last = (SPECTRUM_LEN - 1) as f64;
        let k0 = model.wavenumber(0.0);
        let dk = model.uniform_spacing();
        let positions = (0..SPECTRUM_LEN)
            .map(|j| {
                if j == 0 {
                    return 0.0;
                }
                if j == SPECTRUM_LEN - 1 {
                    return last;
                }
                let target = k0 + j as f64 * dk;
                let (mut lo, mut hi) = (0.0, last);
                for _ in 0..64 {
                    let mid = 0.5 * (lo + hi);
                    if model.wavenumber(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect();
        Self::new(positions)
    }

    pub fn positions(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
}

/// How the DC estimate is seeded before the first scan is absorbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DcInit {
    /// Start from the first scan of the M-scan.
    #[default]
    FirstScan,
    /// Start from an all-zero spectrum.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    damping: f64,
    chirp_table: ChirpTable,
    pub window: Window,
    pub dc_init: DcInit,
}

impl ReconConfig {
    pub fn new(
        damping: f64,
        chirp_table: ChirpTable,
        window: Window,
        dc_init: DcInit,
    ) -> Result<Self> {
        if !(damping > 0.0 && damping <= 1.0) {
            return Err(Error::Config(format!(
                "damping must lie in (0, 1], got {damping}"
            )));
        }
        if chirp_table.len() != SPECTRUM_LEN {
            return Err(Error::Config(format!(
                "chirp table must have {SPECTRUM_LEN} entries, got {}",
                chirp_table.len()
            )));
        }
        Ok(Self {
            damping,
            chirp_table,
            window,
            dc_init,
        })
    }

    /// Default settings with the chirp inverted from `model`.
    pub fn for_model(model: &NeedleModel) -> Result<Self> {
        Self::new(
            DEFAULT_DAMPING,
            ChirpTable::from_model(model)?,
            Window::Hann,
            DcInit::FirstScan,
        )
    }

    /// Default settings that skip resampling.
    pub fn without_dechirp() -> Self {
        Self::new(
            DEFAULT_DAMPING,
            ChirpTable::identity(SPECTRUM_LEN),
            Window::Hann,
            DcInit::FirstScan,
        )
        .expect("identity table is valid")
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn chirp_table(&self) -> &ChirpTable {
        &self.chirp_table
    }
}

/// `chirp_table` as written in experiment JSON: `"identity"`, `"model"`, or
/// an explicit list of 1024 positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChirpTableSpec {
    Named(String),
    Positions(Vec<f64>),
}

impl Default for ChirpTableSpec {
    fn default() -> Self {
        ChirpTableSpec::Named("model".into())
    }
}

/// JSON form of [`ReconConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconSettings {
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default)]
    pub chirp_table: ChirpTableSpec,
    #[serde(default)]
    pub window: Window,
    #[serde(default)]
    pub dc_init: DcInit,
}

fn default_damping() -> f64 {
    DEFAULT_DAMPING
}

impl Default for ReconSettings {
    fn default() -> Self {
        Self {
            damping: DEFAULT_DAMPING,
            chirp_table: ChirpTableSpec::default(),
            window: Window::Hann,
            dc_init: DcInit::FirstScan,
        }
    }
}

impl ReconSettings {
    /// `model` is needed when the chirp table is `"model"`.
    pub fn resolve(&self, model: Option<&NeedleModel>) -> Result<ReconConfig> {
        let table = match &self.chirp_table {
            ChirpTableSpec::Named(name) if name == "identity" => ChirpTable::identity(SPECTRUM_LEN),
            ChirpTableSpec::Named(name) if name == "model" => {
                let model = model.ok_or_else(|| {
                    Error::Config("chirp_table \"model\" requires needle model parameters".into())
                })?;
                ChirpTable::from_model(model)?
            }
            ChirpTableSpec::Named(other) => {
                return Err(Error::Config(format!("unknown chirp_table `{other}`")))
            }
            ChirpTableSpec::Positions(p) => ChirpTable::new(p.clone())?,
        };
        ReconConfig::new(self.damping, table, self.window, self.dc_init)
    }
}

/// Running DC spectrum estimate for one M-scan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DcState {
    estimate: Option<Vec<f64>>,
    count: usize,
}

impl DcState {
    pub fn new() -> Self {
        Self::default()
    }

    /// A state that already holds `estimate`.
    pub fn from_estimate(estimate: Vec<f64>) -> Self {
        Self {
            estimate: Some(estimate),
            count: 0,
        }
    }

    pub fn estimate(&self) -> Option<&[f64]> {
        self.estimate.as_deref()
    }

    /// Scans absorbed so far.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// Linear interpolation at a fractional position, clamped to the end samples.
pub fn interpolate(samples: &[f64], position: f64) -> f64 {
    let last = samples.len() - 1;
    if position <= 0.0 {
        return samples[0];
    }
    if position >= last as f64 {
        return samples[last];
    }
    let i = position.floor() as usize;
    let frac = position - i as f64;
    samples[i] * (1.0 - frac) + samples[i + 1] * frac
}

/// Resamples a spectrum at the chirp table's positions.
pub fn dechirp(raw: &[f64], table: &ChirpTable) -> Result<Vec<f64>> {
    if raw.len() != table.len() {
        return Err(Error::Shape(format!(
            "spectrum has {} samples, chirp table {}",
            raw.len(),
            table.len()
        )));
    }
    Ok(table
        .positions()
        .iter()
        .map(|&p| interpolate(raw, p))
        .collect())
}

/// Absorbs `spectrum` into the EMA, then returns `spectrum - estimate`.
pub fn update_and_subtract_dc(
    spectrum: &[f64],
    state: &mut DcState,
    cfg: &ReconConfig,
) -> Result<Vec<f64>> {
    let d = cfg.damping;
    let estimate = state.estimate.get_or_insert_with(|| match cfg.dc_init {
        DcInit::FirstScan => spectrum.to_vec(),
        DcInit::Zero => vec![0.0; spectrum.len()],
    });
    if estimate.len() != spectrum.len() {
        return Err(Error::Shape(format!(
            "DC estimate has {} samples, spectrum {}",
            estimate.len(),
            spectrum.len()
        )));
    }
    state.count += 1;
    Ok(estimate
        .iter_mut()
        .zip(spectrum)
        .map(|(e, &s)| {
            *e = (1.0 - d) * *e + d * s;
            s - *e
        })
        .collect())
}

pub fn hann_window(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

fn hann_1024() -> &'static [f64] {
    static W: OnceLock<Vec<f64>> = OnceLock::new();
    W.get_or_init(|| hann_window(SPECTRUM_LEN))
}

pub fn apodize(spectrum: &[f64]) -> Vec<f64> {
    let owned;
    let window = if spectrum.len() == SPECTRUM_LEN {
        hann_1024()
    } else {
        owned = hann_window(spectrum.len());
        &owned
    };
    spectrum.iter().zip(window).map(|(s, w)| s * w).collect()
}

/// Complex spectrum after the Fourier transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum(Vec<Complex64>);

impl ComplexSpectrum {
    pub fn values(&self) -> &[Complex64] {
        &self.0
    }
}

/// Unnormalized forward DFT via the radix-2 FFT.
pub fn fourier_transform(spectrum: &[f64]) -> Result<ComplexSpectrum> {
    fft::fft_real(spectrum).map(ComplexSpectrum)
}

/// Depth profile: magnitudes of the non-negative-frequency half.
#[derive(Debug, Clone, PartialEq)]
pub struct AScan(Vec<f64>);

impl AScan {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != ASCAN_LEN {
            return Err(Error::Shape(format!(
                "A-scan must have {ASCAN_LEN} bins, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(
                "A-scan values must be finite and >= 0".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Rounds every bin to single precision, as stored on disk.
    pub fn quantized(&self) -> Self {
        Self(self.0.iter().map(|&v| v as f32 as f64).collect())
    }
}

pub fn magnitude_ascan(spec: &ComplexSpectrum) -> AScan {
    let half = spec.0.len() / 2;
    AScan(spec.0[..half].iter().map(|c| c.norm()).collect())
}

/// Runs the full pipeline over one M-scan with a fresh DC state.
pub fn reconstruct_mscan(dataset: &MScanDataset, cfg: &ReconConfig) -> Result<Vec<AScan>> {
    dataset.validate()?;
    let mut resampled = dataset
        .scans
        .par_iter()
        .enumerate()
        .map(|(i, s)| dechirp(&s.to_f64(), &cfg.chirp_table).map_err(|e| Error::at_scan(i, e)))
        .collect::<Result<Vec<_>>>()?;

    let mut state = DcState::new();
    for (i, spectrum) in resampled.iter_mut().enumerate() {
        *spectrum =
            update_and_subtract_dc(spectrum, &mut state, cfg).map_err(|e| Error::at_scan(i, e))?;
    }

    resampled
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            fourier_transform(&apodize(s))
                .map(|c| magnitude_ascan(&c))
                .map_err(|e| Error::at_scan(i, e))
        })
        .collect()
}

/// Reconstructed M-scan with its force labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AScanDataset {
    pub scans: Vec<AScan>,
    pub forces: Vec<f32>,
    pub needle_id: String,
    pub seed: u64,
}

impl AScanDataset {
    /// Reconstructs `dataset`, rounding A-scans to single precision so the
    /// in-memory result matches what an OCTA file holds.
    pub fn from_mscan(dataset: &MScanDataset, cfg: &ReconConfig) -> Result<Self> {
        let scans = reconstruct_mscan(dataset, cfg)?
            .iter()
            .map(AScan::quantized)
            .collect();
        Ok(Self {
            scans,
            forces: dataset.forces.clone(),
            needle_id: dataset.needle_id.clone(),
            seed: dataset.seed,
        })
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }
}
