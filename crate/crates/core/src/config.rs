//! Experiment configuration, read from a single JSON file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Representation, TrainConfig, Variant, DEFAULT_STEM_CHANNELS};
use crate::recon::ReconSettings;
use crate::sim::{NeedleModel, ProfileSpec};

pub const PAPER_SCALE_SAMPLES: usize = 180_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleConfig {
    pub id: String,
    #[serde(default)]
    pub model: NeedleModel,
    /// Dataset seed; defaults to the experiment seed plus the needle index.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub warmup: usize,
    pub reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 5,
            reps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub needles: Vec<NeedleConfig>,
    pub profile: ProfileSpec,
    pub seed: u64,
    pub recon: ReconSettings,
    pub architectures: Vec<Variant>,
    pub stem_channels: usize,
    pub representations: Vec<Representation>,
    pub train: TrainConfig,
    pub bench: BenchConfig,
    pub out_dir: PathBuf,
    /// Worker threads for matrix cells; 0 uses every logical core.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            needles: vec![NeedleConfig {
                id: "needle1".into(),
                model: NeedleModel::default(),
                seed: None,
            }],
            profile: ProfileSpec::default(),
            seed: 0,
            recon: ReconSettings::default(),
            architectures: vec![Variant::ResNet6],
            stem_channels: DEFAULT_STEM_CHANNELS,
            representations: Representation::ALL.to_vec(),
            train: TrainConfig::default(),
            bench: BenchConfig::default(),
            out_dir: PathBuf::from("out"),
            jobs: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Full protocol: 180k scans per needle, 150 epochs, five seeds and all
    /// three architectures.
    pub fn apply_paper_scale(&mut self) {
        self.profile.samples = PAPER_SCALE_SAMPLES;
        let paper = TrainConfig::paper_scale();
        self.train.epochs = paper.epochs;
        self.train.seeds = paper.seeds;
        self.architectures = Variant::ALL.to_vec();
    }

    pub fn needle_seed(&self, index: usize) -> u64 {
        self.needles[index].seed.unwrap_or(self.seed + index as u64)
    }

    pub fn needle_index(&self, id: Option<&str>) -> Result<usize> {
        match id {
            None => Ok(0),
            Some(id) => self
                .needles
                .iter()
                .position(|n| n.id == id)
                .ok_or_else(|| Error::Config(format!("no needle named `{id}` in the config"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.needles.is_empty() {
            return Err(Error::Config("at least one needle is required".into()));
        }
        for (i, n) in self.needles.iter().enumerate() {
            if self.needles[..i].iter().any(|m| m.id == n.id) {
                return Err(Error::Config(format!("duplicate needle id `{}`", n.id)));
            }
            n.model.validate()?;
        }
        if self.architectures.is_empty() || self.representations.is_empty() {
            return Err(Error::Config(
                "architectures and representations must be non-empty".into(),
            ));
        }
        if self.stem_channels == 0 {
            return Err(Error::Config("stem_channels must be > 0".into()));
        }
        self.train.validate()?;
        self.recon.resolve(Some(&self.needles[0].model))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring settings that cannot
    /// change results (output directory and worker count).
    pub fn hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out_dir");
            obj.remove("jobs");
        }
        Ok(sha256_hex(&serde_json::to_vec(&v)?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
