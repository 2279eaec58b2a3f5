//! 1D residual networks for scalar force regression.
//!
//! Every variant shares the same skeleton:
//!
//! ```text
//! conv k7/s2 -> bn -> relu              stem
//! conv k3/s2 -> bn -> relu              strided conv in place of max-pool
//! basic blocks                          conv k3 -> bn -> relu -> conv k3 -> bn, + shortcut, relu
//! global average pool -> linear(1)
//! ```
//!
//! Shortcuts are identity unless the block changes width or stride, in which
//! case a 1x1 strided conv with batch norm is used.
//!
//! `ResNet6` has two residual blocks (`w -> w`, then `w -> 2w` at stride 2),
//! giving six k>1 convolutions with the stem and the pooling conv. `ResNet18`
//! and `ResNet34` use the basic-block layouts (2,2,2,2) and (3,4,6,3) with
//! widths `w, 2w, 4w, 8w`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Mode, ParamId, ParamStore, RunningStats, Tape, Tensor, Var};

pub const DEFAULT_STEM_CHANNELS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    ResNet6,
    ResNet18,
    ResNet34,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::ResNet6, Variant::ResNet18, Variant::ResNet34];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::ResNet6 => "ResNet6",
            Variant::ResNet18 => "ResNet18",
            Variant::ResNet34 => "ResNet34",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace([' ', '-', '_'], "").as_str() {
            "resnet6" => Ok(Variant::ResNet6),
            "resnet18" => Ok(Variant::ResNet18),
            "resnet34" => Ok(Variant::ResNet34),
            _ => Err(Error::Config(format!("unknown architecture variant `{s}`"))),
        }
    }
}

/// One group of basic blocks; the first block applies `stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub channels: usize,
    pub blocks: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub variant: Variant,
    pub input_len: usize,
    pub stem_channels: usize,
}

impl ArchSpec {
    pub fn new(variant: Variant, input_len: usize) -> Self {
        Self {
            variant,
            input_len,
            stem_channels: DEFAULT_STEM_CHANNELS,
        }
    }

    pub fn with_stem_channels(mut self, channels: usize) -> Self {
        self.stem_channels = channels;
        self
    }

    pub fn stages(&self) -> Vec<StageSpec> {
        let w = self.stem_channels;
        let stage = |channels, blocks, stride| StageSpec {
            channels,
            blocks,
            stride,
        };
        match self.variant {
            Variant::ResNet6 => vec![stage(w, 1, 1), stage(2 * w, 1, 2)],
            Variant::ResNet18 => vec![
                stage(w, 2, 1),
                stage(2 * w, 2, 2),
                stage(4 * w, 2, 2),
                stage(8 * w, 2, 2),
            ],
            Variant::ResNet34 => vec![
                stage(w, 3, 1),
                stage(2 * w, 4, 2),
                stage(4 * w, 6, 2),
                stage(8 * w, 3, 2),
            ],
        }
    }

    pub fn block_counts(&self) -> Vec<usize> {
        self.stages().iter().map(|s| s.blocks).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 {
            return Err(Error::Config("stem_channels must be > 0".into()));
        }
        if self.input_len < 8 {
            return Err(Error::Config(format!(
                "input_len {} is too short",
                self.input_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ConvBn {
    weight: ParamId,
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: ConvBn,
    conv2: ConvBn,
    shortcut: Option<ConvBn>,
}

/// A 1D ResNet with its parameters and batch norm running statistics.
#[derive(Debug, Clone)]
pub struct ResNet1d {
    spec: ArchSpec,
    params: ParamStore,
    running: Vec<RunningStats>,
    running_names: Vec<String>,
    stem: ConvBn,
    pool: ConvBn,
    blocks: Vec<BasicBlock>,
    head_weight: ParamId,
    head_bias: ParamId,
}

struct Builder<'r, R: Rng + ?Sized> {
    params: ParamStore,
    running: Vec<RunningStats>,
    running_names: Vec<String>,
    rng: &'r mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn he_normal(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| dist.sample(self.rng)).collect(),
        )
        .expect("shape")
    }

    fn conv_bn(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<ConvBn> {
        let w = self.he_normal(&[c_out, c_in, kernel], c_in * kernel);
        let weight = self.params.register(format!("{name}.weight"), w)?;
        let gamma = self
            .params
            .register(format!("{name}.bn.gamma"), Tensor::full(&[c_out], 1.0))?;
        let beta = self
            .params
            .register(format!("{name}.bn.beta"), Tensor::zeros(&[c_out]))?;
        self.running.push(RunningStats::new(c_out));
        self.running_names.push(format!("{name}.bn"));
        Ok(ConvBn {
            weight,
            gamma,
            beta,
            stats: self.running.len() - 1,
            stride,
            padding: kernel / 2,
        })
    }
}

impl ResNet1d {
    pub fn new<R: Rng + ?Sized>(spec: &ArchSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut b = Builder {
            params: ParamStore::new(),
            running: Vec::new(),
            running_names: Vec::new(),
            rng,
        };
        let w = spec.stem_channels;
        let stem = b.conv_bn("stem", 1, w, 7, 2)?;
        let pool = b.conv_bn("pool", w, w, 3, 2)?;
        let mut blocks = Vec::new();
        let mut c_in = w;
        for (s, stage) in spec.stages().iter().enumerate() {
            for i in 0..stage.blocks {
                let stride = if i == 0 { stage.stride } else { 1 };
                let name = format!("stage{}.block{}", s + 1, i + 1);
                let conv1 = b.conv_bn(&format!("{name}.conv1"), c_in, stage.channels, 3, stride)?;
                let conv2 = b.conv_bn(
                    &format!("{name}.conv2"),
                    stage.channels,
                    stage.channels,
                    3,
                    1,
                )?;
                let shortcut = if stride != 1 || c_in != stage.channels {
                    Some(b.conv_bn(&format!("{name}.shortcut"), c_in, stage.channels, 1, stride)?)
                } else {
                    None
                };
                blocks.push(BasicBlock {
                    conv1,
                    conv2,
                    shortcut,
                });
                c_in = stage.channels;
            }
        }
        let hw = b.he_normal(&[1, c_in], c_in);
        let head_weight = b.params.register("head.weight", hw)?;
        let head_bias = b.params.register("head.bias", Tensor::zeros(&[1]))?;
        Ok(Self {
            spec: spec.clone(),
            params: b.params,
            running: b.running,
            running_names: b.running_names,
            stem,
            pool,
            blocks,
            head_weight,
            head_bias,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn residual_block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Convolutions with kernel > 1: stem, pooling conv and the two per block.
    pub fn conv_layer_count(&self) -> usize {
        2 + 2 * self.blocks.len()
    }

    pub fn shortcut_conv_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.shortcut.is_some()).count()
    }

    pub fn stats_initialized(&self) -> bool {
        self.running.iter().all(RunningStats::is_initialized)
    }

    fn conv_bn(
        &self,
        tape: &mut Tape,
        layer: &ConvBn,
        x: Var,
        mode: Mode,
        relu: bool,
        batch: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let w = tape.param(&self.params, layer.weight);
        let y = tape.conv1d(x, w, None, layer.stride, layer.padding)?;
        let g = tape.param(&self.params, layer.gamma);
        let b = tape.param(&self.params, layer.beta);
        let y = match mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm_train(y, g, b)?;
                batch.push(stats);
                y
            }
            Mode::Eval => tape.batch_norm_eval(y, g, b, &self.running[layer.stats])?,
        };
        Ok(if relu { tape.relu(y) } else { y })
    }

    /// Forward pass on a `[B, 1, input_len]` batch, returning `[B, 1]`
    /// predictions and, in training mode, the batch statistics of every
    /// batch norm layer in order.
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<BatchStats>)> {
        let (_, c, l) = tape.value(input).dims3()?;
        if c != 1 || l != self.spec.input_len {
            return Err(Error::RepresentationMismatch {
                expected: self.spec.input_len,
                actual: l,
            });
        }
        let mut batch = Vec::new();
        let mut x = self.conv_bn(tape, &self.stem, input, mode, true, &mut batch)?;
        x = self.conv_bn(tape, &self.pool, x, mode, true, &mut batch)?;
        for block in &self.blocks {
            let h = self.conv_bn(tape, &block.conv1, x, mode, true, &mut batch)?;
            let h = self.conv_bn(tape, &block.conv2, h, mode, false, &mut batch)?;
            let skip = match &block.shortcut {
                Some(sc) => self.conv_bn(tape, sc, x, mode, false, &mut batch)?,
                None => x,
            };
            let sum = tape.add(h, skip)?;
            x = tape.relu(sum);
        }
        let pooled = tape.global_avg_pool(x)?;
        let w = tape.param(&self.params, self.head_weight);
        let b = tape.param(&self.params, self.head_bias);
        Ok((tape.linear(pooled, w, b)?, batch))
    }

    /// Folds training-mode batch statistics into the running estimates. The
    /// stats must come from [`ResNet1d::forward`] on this model, in order.
    pub fn update_running_stats(&mut self, batch: &[BatchStats]) -> Result<()> {
        if batch.len() != self.running.len() {
            return Err(Error::Contract(format!(
                "expected {} batch norm statistics, got {}",
                self.running.len(),
                batch.len()
            )));
        }
        for (r, b) in self.running.iter_mut().zip(batch) {
            r.update(b);
        }
        Ok(())
    }

    /// Parameters and running statistics as named tensors, in a fixed order.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        for (name, r) in self.running_names.iter().zip(&self.running) {
            if r.is_initialized() {
                let n = r.mean.len();
                out.push((
                    format!("{name}.running_mean"),
                    Tensor::new(vec![n], r.mean.clone()).expect("1d"),
                ));
                out.push((
                    format!("{name}.running_var"),
                    Tensor::new(vec![n], r.var.clone()).expect("1d"),
                ));
            }
        }
        out
    }

    /// Restores values produced by [`ResNet1d::state`]. Every parameter must
    /// be present with a matching shape; absent running statistics stay
    /// uninitialized.
    pub fn load_state(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        let lookup = |name: &str| entries.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        for p in self.params.iter_mut() {
            let t = lookup(&p.name)
                .ok_or_else(|| Error::Contract(format!("checkpoint lacks `{}`", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "`{}`: checkpoint shape {:?}, model {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        for (name, r) in self.running_names.iter().zip(self.running.iter_mut()) {
            let mean = lookup(&format!("{name}.running_mean"));
            let var = lookup(&format!("{name}.running_var"));
            if let (Some(m), Some(v)) = (mean, var) {
                if m.len() != r.mean.len() || v.len() != r.var.len() {
                    return Err(Error::Shape(format!(
                        "`{name}` running stats have the wrong length"
                    )));
                }
                *r = RunningStats::restored(m.data().to_vec(), v.data().to_vec())?;
            }
        }
        Ok(())
    }
}
