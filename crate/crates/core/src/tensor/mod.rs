//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! The op set is closed: conv1d, batch norm, relu, add, global average
//! pooling, linear and MSE, plus elementwise mul and sum used to build test
//! losses. There is no broadcasting; shapes must match exactly.

mod kernels;
mod param;
mod tape;

pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{BatchStats, Gradients, Tape, Var};

use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Shape(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub(crate) fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::Shape(format!(
                "expected rank 2, got {:?}",
                self.shape
            ))),
        }
    }

    pub(crate) fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Shape(format!(
                "expected rank 3, got {:?}",
                self.shape
            ))),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, graph recorded.
    Train,
    /// Running statistics.
    Eval,
}

/// Per-channel running mean and (unbiased) variance of a batch norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    initialized: bool,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            initialized: false,
        }
    }

    /// Stats restored from a checkpoint.
    pub fn restored(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::Shape("running mean/var length mismatch".into()));
        }
        Ok(Self {
            mean,
            var,
            initialized: true,
        })
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn update(&mut self, batch: &BatchStats) {
        for (r, &b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&batch.unbiased_var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        self.initialized = true;
    }
}

/// Batch normalization over `(batch, length)` per channel of a `[B, C, L]`
/// input. Training mode updates `stats`; eval mode reads them.
pub fn batchnorm1d(
    tape: &mut Tape,
    input: Var,
    gamma: Var,
    beta: Var,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<Var> {
    match mode {
        Mode::Train => {
            let (out, batch) = tape.batch_norm_train(input, gamma, beta)?;
            stats.update(&batch);
            Ok(out)
        }
        Mode::Eval => tape.batch_norm_eval(input, gamma, beta, stats),
    }
}
