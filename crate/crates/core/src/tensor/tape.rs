use crate::error::{Error, Result};
use crate::tensor::kernels::{self, ConvGeometry};
use crate::tensor::{ParamId, ParamStore, RunningStats, Tensor, BN_EPSILON};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Per-channel statistics of one training-mode batch norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub unbiased_var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Option<Op>,
    param: Option<ParamId>,
    requires_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// An inference tape ([`Tape::inference`]) evaluates the same ops but keeps
/// no backward records.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of backward-graph records held by the tape.
    pub fn num_records(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_some()).count()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            op: None,
            param,
            requires_grad: requires_grad && self.recording,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false, None)
    }

    /// A free input whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true, None)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.leaf(store.get(id).value.clone(), true, Some(id))
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: requires_grad.then_some(op),
            param: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!(
                "{what}: shapes {sa:?} and {sb:?} differ"
            )));
        }
        Ok(())
    }

    /// Cross-correlation of `[B, C_in, L]` with `[C_out, C_in, K]`, zero
    /// padded on both sides.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (batch, c_in, len) = self.value(input).dims3()?;
        let (c_out, w_in, kernel) = self.value(weight).dims3()?;
        if w_in != c_in {
            return Err(Error::Shape(format!(
                "conv1d: input has {c_in} channels, weight expects {w_in}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidInput("conv1d: stride must be >= 1".into()));
        }
        if len + 2 * padding < kernel {
            return Err(Error::Shape(format!(
                "conv1d: padded length {} shorter than kernel {kernel}",
                len + 2 * padding
            )));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [c_out] {
                return Err(Error::Shape(format!(
                    "conv1d: bias must have shape [{c_out}]"
                )));
            }
        }
        let geom = ConvGeometry {
            batch,
            c_in,
            len,
            c_out,
            kernel,
            stride,
            padding,
            out_len: (len + 2 * padding - kernel) / stride + 1,
        };
        let out = kernels::conv1d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(vec![batch, c_out, geom.out_len], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            value,
            &inputs,
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    fn bn_check(&self, input: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let (b, c, l) = self.value(input).dims3()?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::Shape(format!(
                "batch norm: gamma and beta must have shape [{c}]"
            )));
        }
        Ok((b, c, l))
    }

    fn bn_apply(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var> {
        let (b, c, l) = self.value(input).dims3()?;
        let x = self.value(input).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let rows = x
            .chunks_exact(l)
            .zip(xhat.chunks_exact_mut(l))
            .zip(out.chunks_exact_mut(l));
        for (i, ((xr, hr), or)) in rows.enumerate() {
            let ch = i % c;
            let (m, s, gc, bc) = (mean[ch], inv_std[ch], g[ch], bt[ch]);
            for ((&xv, h), o) in xr.iter().zip(hr.iter_mut()).zip(or.iter_mut()) {
                *h = (xv - m) * s;
                *o = gc * *h + bc;
            }
        }
        let value = Tensor::new(vec![b, c, l], out)?;
        Ok(self.push(
            value,
            &[input, gamma, beta],
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// Normalizes with the batch's own per-channel statistics.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(Var, BatchStats)> {
        let (b, c, l) = self.bn_check(input, gamma, beta)?;
        let n = b * l;
        if b < 2 {
            return Err(Error::Contract(
                "batch norm training needs batch >= 2".into(),
            ));
        }
        let x = self.value(input).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (i, row) in x.chunks_exact(l).enumerate() {
            mean[i % c] += row.iter().sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for (i, row) in x.chunks_exact(l).enumerate() {
            let m = mean[i % c];
            var[i % c] += row.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        let unbiased_var = var.iter().map(|v| v / (n - 1) as f64).collect();
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let out = self.bn_apply(input, gamma, beta, &mean, inv_std, true)?;
        Ok((out, BatchStats { mean, unbiased_var }))
    }

    /// Normalizes with running statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &RunningStats,
    ) -> Result<Var> {
        let (_, c, _) = self.bn_check(input, gamma, beta)?;
        if !stats.is_initialized() {
            return Err(Error::UninitializedStats);
        }
        if stats.mean.len() != c {
            return Err(Error::Shape(format!(
                "running stats have {} channels, input {c}",
                stats.mean.len()
            )));
        }
        let inv_std = stats
            .var
            .iter()
            .map(|v| 1.0 / (v + BN_EPSILON).sqrt())
            .collect();
        let mean = stats.mean.clone();
        self.bn_apply(input, gamma, beta, &mean, inv_std, false)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let v = self.value(input);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&x| x.max(0.0)).collect(),
        )
        .expect("same shape");
        self.push(out, &[input], Op::Relu(input))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = Tensor::new(
            va.shape().to_vec(),
            va.data()
                .iter()
                .zip(vb.data())
                .map(|(x, y)| x + y)
                .collect(),
        )?;
        Ok(self.push(out, &[a, b], Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = Tensor::new(
            va.shape().to_vec(),
            va.data()
                .iter()
                .zip(vb.data())
                .map(|(x, y)| x * y)
                .collect(),
        )?;
        Ok(self.push(out, &[a, b], Op::Mul(a, b)))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(s), &[input], Op::Sum(input))
    }

    /// Mean over the length axis: `[B, C, L] -> [B, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (b, c, l) = self.value(input).dims3()?;
        let out = self
            .value(input)
            .data()
            .chunks_exact(l)
            .map(|row| row.iter().sum::<f64>() / l as f64)
            .collect();
        let value = Tensor::new(vec![b, c], out)?;
        Ok(self.push(value, &[input], Op::GlobalAvgPool(input)))
    }

    /// `[B, F] x [O, F]^T + [O] -> [B, O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (b, f) = self.value(input).dims2()?;
        let (o, wf) = self.value(weight).dims2()?;
        if wf != f {
            return Err(Error::Shape(format!(
                "linear: input has {f} features, weight expects {wf}"
            )));
        }
        if self.value(bias).shape() != [o] {
            return Err(Error::Shape(format!("linear: bias must have shape [{o}]")));
        }
        let mut out = vec![0.0; b * o];
        for row in out.chunks_exact_mut(o) {
            row.copy_from_slice(self.value(bias).data());
        }
        kernels::gemm(
            b,
            f,
            o,
            self.value(input).data(),
            (f, 1),
            self.value(weight).data(),
            (1, f),
            1.0,
            &mut out,
            (o, 1),
        );
        let value = Tensor::new(vec![b, o], out)?;
        Ok(self.push(
            value,
            &[input, weight, bias],
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse")?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        if p.is_empty() {
            return Err(Error::Shape("mse of empty tensors".into()));
        }
        let loss = p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            &[pred, target],
            Op::Mse { pred, target },
        ))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            let Some(g) = grads[i].take() else { continue };
            self.backward_op(op, &node.value, &g, &mut grads)?;
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (i, p)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_op(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match *op {
            Op::Conv1d {
                input,
                weight,
                bias,
                ref geom,
            } => {
                let (dx, dw, db) = kernels::conv1d_backward(
                    geom,
                    self.value(input).data(),
                    self.value(weight).data(),
                    g.data(),
                    self.wants(input),
                );
                if let Some(dx) = dx {
                    acc(input, Tensor::new(self.value(input).shape().to_vec(), dx)?);
                }
                if self.wants(weight) {
                    acc(
                        weight,
                        Tensor::new(self.value(weight).shape().to_vec(), dw)?,
                    );
                }
                if let Some(b) = bias.filter(|b| self.wants(*b)) {
                    acc(b, Tensor::new(vec![geom.c_out], db)?);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                ref xhat,
                ref inv_std,
                batch_stats,
            } => {
                let (b, c, l) = out.dims3()?;
                let gam = self.value(gamma).data();
                let dy = g.data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (i, (dr, hr)) in dy.chunks_exact(l).zip(xhat.chunks_exact(l)).enumerate() {
                    let (mut sg, mut sb) = (0.0, 0.0);
                    for (&d, &h) in dr.iter().zip(hr) {
                        sg += d * h;
                        sb += d;
                    }
                    dgamma[i % c] += sg;
                    dbeta[i % c] += sb;
                }
                if self.wants(input) {
                    let mut dx = vec![0.0; dy.len()];
                    let n = (b * l) as f64;
                    let rows = dx
                        .chunks_exact_mut(l)
                        .zip(dy.chunks_exact(l))
                        .zip(xhat.chunks_exact(l));
                    for (i, ((xr, dr), hr)) in rows.enumerate() {
                        let ch = i % c;
                        let scale = gam[ch] * inv_std[ch];
                        if batch_stats {
                            // dxhat = dy * gamma; its channel sums are dbeta * gamma
                            // and dgamma * gamma
                            let (mb, mg) = (dbeta[ch] / n, dgamma[ch] / n);
                            for ((o, &d), &h) in xr.iter_mut().zip(dr).zip(hr) {
                                *o = scale * (d - mb - h * mg);
                            }
                        } else {
                            for (o, &d) in xr.iter_mut().zip(dr) {
                                *o = scale * d;
                            }
                        }
                    }
                    acc(input, Tensor::new(vec![b, c, l], dx)?);
                }
                if self.wants(gamma) {
                    acc(gamma, Tensor::new(vec![c], dgamma)?);
                }
                if self.wants(beta) {
                    acc(beta, Tensor::new(vec![c], dbeta)?);
                }
            }
            Op::Relu(input) => {
                let dx = out
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&y, &d)| if y > 0.0 { d } else { 0.0 })
                    .collect();
                acc(input, Tensor::new(out.shape().to_vec(), dx)?);
            }
            Op::Add(a, b) => {
                if self.wants(a) {
                    acc(a, g.clone());
                }
                if self.wants(b) {
                    acc(b, g.clone());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                if self.wants(a) {
                    let d = g.data().iter().zip(vb.data()).map(|(d, y)| d * y).collect();
                    acc(a, Tensor::new(va.shape().to_vec(), d)?);
                }
                if self.wants(b) {
                    let d = g.data().iter().zip(va.data()).map(|(d, x)| d * x).collect();
                    acc(b, Tensor::new(vb.shape().to_vec(), d)?);
                }
            }
            Op::Sum(input) => {
                let v = self.value(input);
                acc(input, Tensor::full(v.shape(), g.item()?));
            }
            Op::GlobalAvgPool(input) => {
                let (b, c, l) = self.value(input).dims3()?;
                let mut dx = vec![0.0; b * c * l];
                for (row, &d) in dx.chunks_exact_mut(l).zip(g.data()) {
                    row.fill(d / l as f64);
                }
                acc(input, Tensor::new(vec![b, c, l], dx)?);
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (b, f) = self.value(input).dims2()?;
                let (o, _) = self.value(weight).dims2()?;
                if self.wants(input) {
                    let mut dx = vec![0.0; b * f];
                    kernels::gemm(
                        b,
                        o,
                        f,
                        g.data(),
                        (o, 1),
                        self.value(weight).data(),
                        (f, 1),
                        0.0,
                        &mut dx,
                        (f, 1),
                    );
                    acc(input, Tensor::new(vec![b, f], dx)?);
                }
                if self.wants(weight) {
                    let mut dw = vec![0.0; o * f];
                    kernels::gemm(
                        o,
                        b,
                        f,
                        g.data(),
                        (1, o),
                        self.value(input).data(),
                        (f, 1),
                        0.0,
                        &mut dw,
                        (f, 1),
                    );
                    acc(weight, Tensor::new(vec![o, f], dw)?);
                }
                if self.wants(bias) {
                    let mut db = vec![0.0; o];
                    for row in g.data().chunks_exact(o) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    acc(bias, Tensor::new(vec![o], db)?);
                }
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(pred), self.value(target));
                let scale = 2.0 * g.item()? / p.len() as f64;
                let dp: Vec<f64> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                if self.wants(target) {
                    let dt = dp.iter().map(|v| -v).collect();
                    acc(target, Tensor::new(t.shape().to_vec(), dt)?);
                }
                if self.wants(pred) {
                    acc(pred, Tensor::new(p.shape().to_vec(), dp)?);
                }
            }
        }
        Ok(())
    }
}

/// Leaf gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Adds parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}
