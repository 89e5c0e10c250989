//! Reverse-mode differentiation over a creation-ordered computation record.
//!
//! A [`Graph`] is built fresh for every forward pass. Each op evaluates eagerly,
//! stores its output and whatever it needs for the backward sweep, and returns a
//! [`Var`] handle. Creation order is a valid topological order, so
//! [`Graph::backward`] simply walks the nodes in reverse.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::kernels::{self, ConvGeom, MatMulGeom};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{FdpError, Result};

/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Exponential moving average weight of the newest batch statistics.
pub const BN_MOMENTUM: f64 = 0.1;
/// Lower clamp applied to probabilities before taking the log in cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        /// Geometry of the forward convolution this op is the adjoint of.
        geom: ConvGeom,
    },
    MatMul {
        a: Var,
        b: Var,
        geom: MatMulGeom,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    ChannelBias {
        x: Var,
        b: Var,
        inner: usize,
    },
    Scale {
        x: Var,
        s: T,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Sigmoid {
        x: Var,
    },
    Abs {
        x: Var,
    },
    Softmax {
        x: Var,
        width: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        channels: usize,
        inner: usize,
        /// Normalized input, kept only in train mode.
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
        mean: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
        inner: usize,
    },
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        widths: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    SumAll {
        x: Var,
    },
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
    Mse {
        a: Var,
        b: Var,
    },
    RankLoss {
        scores: Var,
        slope: T,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Pending write of a non-trainable buffer (running statistics), applied after a step.
#[derive(Clone, Debug)]
pub struct BufferUpdate<T> {
    pub id: ParamId,
    pub value: Tensor<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    buffer_updates: Vec<BufferUpdate<T>>,
    mode: Mode,
    dropout: bool,
    rng: ChaCha8Rng,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Self::with_seed(mode, 0)
    }

    /// `seed` drives dropout masks in train mode.
    pub fn with_seed(mode: Mode, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            buffer_updates: Vec::new(),
            mode,
            dropout: mode == Mode::Train,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    /// Disables dropout even in train mode (gradient checks need a fixed function).
    pub fn set_dropout(&mut self, enabled: bool) {
        self.dropout = enabled;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn buffer_updates(&self) -> &[BufferUpdate<T>] {
        &self.buffer_updates
    }

    pub fn take_buffer_updates(&mut self) -> Vec<BufferUpdate<T>> {
        std::mem::take(&mut self.buffer_updates)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(FdpError::NonFinite { op: name.into() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; gradients are not tracked.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone(), store.is_trainable(id));
        self.params.insert(id, v);
        v
    }

    /// Gradient of every trainable parameter used in this graph (zero when unreachable).
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> = self
            .params
            .iter()
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .map(|(&id, &v)| {
                let g = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.shape(v).to_vec()));
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    // ---- linear algebra -------------------------------------------------

    /// 2-D cross-correlation on `N x C x H x W` with a `O x C/groups x k x k` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize, groups: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(FdpError::Shape(format!("conv2d input {xs:?} kernel {ws:?}")));
        }
        if ws[1] * groups != xs[1] {
            return Err(FdpError::Shape(format!(
                "conv2d: kernel {ws:?} with {groups} groups does not match {} input channels",
                xs[1]
            )));
        }
        let geom = ConvGeom::new(
            xs[0],
            xs[1],
            ws[0],
            groups,
            [1, xs[2], xs[3]],
            [1, ws[2], ws[3]],
            [1, stride, stride],
            [0, padding, padding],
        )?;
        let out = kernels::conv_forward(self.value(x).data(), self.value(w).data(), &geom);
        let shape = vec![xs[0], ws[0], geom.output[1], geom.output[2]];
        self.push(Tensor::from_vec(shape, out)?, Op::Conv { x, w, geom }, &[x, w], "conv2d")
    }

    /// 3-D cross-correlation on `N x C x D x H x W` with stride 1.
    pub fn conv3d(&mut self, x: Var, w: Var, padding: [usize; 3]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 5 || ws.len() != 5 || ws[1] != xs[1] {
            return Err(FdpError::Shape(format!("conv3d input {xs:?} kernel {ws:?}")));
        }
        let geom = ConvGeom::new(
            xs[0],
            xs[1],
            ws[0],
            1,
            [xs[2], xs[3], xs[4]],
            [ws[2], ws[3], ws[4]],
            [1, 1, 1],
            padding,
        )?;
        let out = kernels::conv_forward(self.value(x).data(), self.value(w).data(), &geom);
        let [d, h, wd] = geom.output;
        let shape = vec![xs[0], ws[0], d, h, wd];
        self.push(Tensor::from_vec(shape, out)?, Op::Conv { x, w, geom }, &[x, w], "conv3d")
    }

    /// Transposed 2-D convolution; `w` is `C_in x C_out x k x k`, the adjoint of a
    /// `conv2d` that uses the same kernel, stride and padding.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || ws[2] != ws[3] {
            return Err(FdpError::Shape(format!(
                "transposed conv input {xs:?} kernel {ws:?}"
            )));
        }
        if stride == 0 {
            return Err(FdpError::InvalidArgument("stride must be at least 1".into()));
        }
        let k = ws[2];
        let grow = |n: usize| ((n - 1) * stride + k).checked_sub(2 * padding);
        let (oh, ow) = match (grow(xs[2]), grow(xs[3])) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => return Err(FdpError::Shape("transposed conv output would be empty".into())),
        };
        let geom = ConvGeom::new(
            xs[0],
            ws[1],
            ws[0],
            1,
            [1, oh, ow],
            [1, k, k],
            [1, stride, stride],
            [0, padding, padding],
        )?;
        debug_assert_eq!(geom.output, [1, xs[2], xs[3]]);
        let out = kernels::conv_backward_input(self.value(x).data(), self.value(w).data(), &geom);
        let shape = vec![xs[0], ws[1], oh, ow];
        self.push(
            Tensor::from_vec(shape, out)?,
            Op::ConvTranspose { x, w, geom },
            &[x, w],
            "conv_transpose2d",
        )
    }

    /// `op(a) · op(b)` for 2-D or batched 3-D operands; a 2-D `b` broadcasts over the batch.
    pub fn matmul(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let geom = MatMulGeom::infer(self.shape(a), self.shape(b), trans_a, trans_b)?;
        let out = kernels::matmul_forward(self.value(a).data(), self.value(b).data(), &geom);
        let shape = if self.shape(a).len() == 3 {
            vec![geom.batch, geom.m, geom.n]
        } else {
            vec![geom.m, geom.n]
        };
        self.push(Tensor::from_vec(shape, out)?, Op::MatMul { a, b, geom }, &[a, b], "matmul")
    }

    /// Fully-connected layer: `x · wᵀ + b` with `w` stored `out x in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w, false, true)?;
        match b {
            Some(b) => self.add_channel_bias(y, b),
            None => Ok(y),
        }
    }

    // ---- element-wise ---------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        self.push(out, Op::Add { a, b }, &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        self.push(out, Op::Sub { a, b }, &[a, b], "sub")
    }

    /// Adds a per-channel bias along axis 1 (`N x C` or `N x C x ...`).
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() < 2 || bs != [xs[1]] {
            return Err(FdpError::Shape(format!("bias {bs:?} for input {xs:?}")));
        }
        let inner: usize = xs[2..].iter().product();
        let mut out = self.value(x).clone();
        kernels::add_channel_bias(out.data_mut(), self.value(b).data(), inner);
        self.push(out, Op::ChannelBias { x, b, inner }, &[x, b], "bias")
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale { x, s }, &[x], "scale")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu { x }, &[x], "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * slope });
        self.push(out, Op::LeakyRelu { x, slope }, &[x], "leaky_relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.push(out, Op::Sigmoid { x }, &[x], "sigmoid")
    }

    /// Absolute value; the subgradient at 0 is 0.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.abs());
        self.push(out, Op::Abs { x }, &[x], "abs")
    }

    /// Softmax over the trailing axis, computed after subtracting the row maximum.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().ok_or_else(|| FdpError::Empty("softmax axis".into()))?;
        let out = kernels::softmax_rows(self.value(x).data(), width);
        self.push(Tensor::from_vec(shape, out)?, Op::Softmax { x, width }, &[x], "softmax")
    }

    /// Inverted dropout. Identity in eval mode or when dropout is disabled.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(FdpError::InvalidArgument(format!("dropout rate {rate}")));
        }
        if !self.dropout || self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut out = self.value(x).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x, mask }, &[x], "dropout")
    }

    // ---- normalization and pooling -----------------------------------------

    /// Batch normalization over axis 1 of `N x C x ...`.
    ///
    /// Train mode normalizes with batch statistics and queues a running-statistics
    /// update; eval mode applies the stored statistics as a fixed affine map.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        store: &ParamStore<T>,
        running_mean: ParamId,
        running_var: ParamId,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(FdpError::Shape(format!("batch_norm input {xs:?}")));
        }
        let (n, channels) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        for v in [gamma, beta] {
            if self.shape(v) != [channels] {
                return Err(FdpError::Shape(format!(
                    "batch_norm affine {:?} for {channels} channels",
                    self.shape(v)
                )));
            }
        }
        let eps = T::of(BN_EPS);
        let count = n * inner;
        let data = self.value(x).data();
        let train = self.mode == Mode::Train;
        let (mean, var) = if train {
            let mut mean = vec![T::zero(); channels];
            let mut var = vec![T::zero(); channels];
            for (i, chunk) in data.chunks(inner).enumerate() {
                mean[i % channels] += chunk.iter().copied().sum();
            }
            let inv_count = T::of(1.0 / count as f64);
            mean.iter_mut().for_each(|m| *m *= inv_count);
            for (i, chunk) in data.chunks(inner).enumerate() {
                let m = mean[i % channels];
                var[i % channels] += chunk.iter().map(|&v| (v - m) * (v - m)).sum();
            }
            var.iter_mut().for_each(|v| *v *= inv_count);
            (mean, var)
        } else {
            (
                store.get(running_mean).data().to_vec(),
                store.get(running_var).data().to_vec(),
            )
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = vec![T::zero(); data.len()];
        let mut xhat = if train { vec![T::zero(); data.len()] } else { Vec::new() };
        for (i, (src, dst)) in data.chunks(inner).zip(out.chunks_mut(inner)).enumerate() {
            let c = i % channels;
            for (j, (&v, o)) in src.iter().zip(dst.iter_mut()).enumerate() {
                let h = (v - mean[c]) * inv_std[c];
                if train {
                    xhat[i * inner + j] = h;
                }
                *o = h * g[c] + b[c];
            }
        }
        if train {
            let mom = T::of(BN_MOMENTUM);
            let unbias = if count > 1 {
                T::of(count as f64 / (count as f64 - 1.0))
            } else {
                T::one()
            };
            let old_mean = store.get(running_mean).data();
            let old_var = store.get(running_var).data();
            let new_mean: Vec<T> = old_mean
                .iter()
                .zip(&mean)
                .map(|(&o, &m)| (T::one() - mom) * o + mom * m)
                .collect();
            let new_var: Vec<T> = old_var
                .iter()
                .zip(&var)
                .map(|(&o, &v)| (T::one() - mom) * o + mom * v * unbias)
                .collect();
            self.buffer_updates.push(BufferUpdate {
                id: running_mean,
                value: Tensor::from_vec(vec![channels], new_mean)?,
            });
            self.buffer_updates.push(BufferUpdate {
                id: running_var,
                value: Tensor::from_vec(vec![channels], new_var)?,
            });
        }
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            channels,
            inner,
            xhat,
            inv_std,
            train,
            mean,
        };
        self.push(Tensor::from_vec(xs, out)?, op, &[x, gamma, beta], "batch_norm")
    }

    /// Max-pooling over `N x C x H x W`, square window, no padding.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[2] < kernel || xs[3] < kernel || kernel == 0 || stride == 0 {
            return Err(FdpError::Shape(format!("max_pool2d {kernel}/{stride} on {xs:?}")));
        }
        let (out, argmax, oh, ow) = kernels::max_pool2d_forward(
            self.value(x).data(),
            xs[0] * xs[1],
            xs[2],
            xs[3],
            kernel,
            stride,
        );
        let shape = vec![xs[0], xs[1], oh, ow];
        self.push(Tensor::from_vec(shape, out)?, Op::MaxPool { x, argmax }, &[x], "max_pool2d")
    }

    /// Mean over all trailing axes: `N x C x ...` to `N x C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(FdpError::Shape(format!("global_avg_pool on {xs:?}")));
        }
        let inner: usize = xs[2..].iter().product();
        let scale = T::of(1.0 / inner as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(inner)
            .map(|c| c.iter().copied().sum::<T>() * scale)
            .collect();
        self.push(
            Tensor::from_vec(vec![xs[0], xs[1]], out)?,
            Op::GlobalAvgPool { x, inner },
            &[x],
            "global_avg_pool",
        )
    }

    // ---- structural -----------------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| FdpError::Empty("concat".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(FdpError::Shape(format!("concat axis {axis} on {first:?}")));
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(FdpError::Shape(format!("concat {s:?} with {first:?}")));
            }
            widths.push(s[axis] * inner);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total / inner;
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            outer,
            widths,
        };
        self.push(Tensor::from_vec(shape, out)?, op, inputs, "concat")
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push(out, Op::Reshape { x }, &[x], "reshape")
    }

    // ---- reductions and losses ------------------------------------------

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll { x }, &[x], "sum")
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum_all(x)?;
        self.scale(s, T::of(1.0 / n as f64))
    }

    /// Mean over rows of `-ln max(p[label], 1e-12)` for an `N x m` probability matrix.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let ps = self.shape(probs).to_vec();
        if ps.len() != 2 || ps[0] != labels.len() {
            return Err(FdpError::Shape(format!(
                "cross_entropy probs {ps:?} with {} labels",
                labels.len()
            )));
        }
        let m = ps[1];
        let clamp = T::of(LOG_CLAMP);
        let mut total = T::zero();
        for (row, &c) in labels.iter().enumerate() {
            if c >= m {
                return Err(FdpError::InvalidArgument(format!("label {c} >= {m} classes")));
            }
            total -= self.value(probs).data()[row * m + c].max(clamp).ln();
        }
        let loss = total / T::of(labels.len() as f64);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            &[probs],
            "cross_entropy",
        )
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.value(a).zip_map(self.value(b), |p, q| (p - q) * (p - q))?;
        let loss = d.sum() / T::of(d.numel() as f64);
        self.push(Tensor::scalar(loss), Op::Mse { a, b }, &[a, b], "mse")
    }

    /// Chronological rank loss on a `B x t` score matrix: mean over clips of
    /// `Σ_k |slope·k − s_k|`.
    pub fn rank_loss(&mut self, scores: Var, slope: T) -> Result<Var> {
        let ss = self.shape(scores).to_vec();
        if ss.len() != 2 {
            return Err(FdpError::Shape(format!("rank_loss scores {ss:?}")));
        }
        let t = ss[1];
        let mut total = T::zero();
        for (i, &s) in self.value(scores).data().iter().enumerate() {
            let k = T::of((i % t) as f64);
            total += (slope * k - s).abs();
        }
        let loss = total / T::of(ss[0] as f64);
        self.push(Tensor::scalar(loss), Op::RankLoss { scores, slope }, &[scores], "rank_loss")
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(FdpError::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.shape(loss).to_vec()));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn accumulate_vec(&self, grads: &mut [Option<Tensor<T>>], v: Var, data: Vec<T>) -> Result<()> {
        let g = Tensor::from_vec(self.shape(v).to_vec(), data)?;
        self.accumulate(grads, v, g)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, geom } => {
                if self.needs(*x) {
                    let dx = kernels::conv_backward_input(gd, self.value(*w).data(), geom);
                    self.accumulate_vec(grads, *x, dx)?;
                }
                if self.needs(*w) {
                    let dw = kernels::conv_backward_weight(self.value(*x).data(), gd, geom);
                    self.accumulate_vec(grads, *w, dw)?;
                }
            }
            Op::ConvTranspose { x, w, geom } => {
                // Forward was conv-input-gradient of `geom`; its adjoint is the conv itself.
                if self.needs(*x) {
                    let dx = kernels::conv_forward(gd, self.value(*w).data(), geom);
                    self.accumulate_vec(grads, *x, dx)?;
                }
                if self.needs(*w) {
                    let dw = kernels::conv_backward_weight(gd, self.value(*x).data(), geom);
                    self.accumulate_vec(grads, *w, dw)?;
                }
            }
            Op::MatMul { a, b, geom } => {
                let (da, db) = kernels::matmul_backward(
                    self.value(*a).data(),
                    self.value(*b).data(),
                    gd,
                    geom,
                    self.needs(*a),
                    self.needs(*b),
                );
                if let Some(da) = da {
                    self.accumulate_vec(grads, *a, da)?;
                }
                if let Some(db) = db {
                    self.accumulate_vec(grads, *b, db)?;
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.map(|v| -v))?;
            }
            Op::ChannelBias { x, b, inner } => {
                self.accumulate(grads, *x, g.clone())?;
                if self.needs(*b) {
                    let channels = self.shape(*b)[0];
                    let db = kernels::channel_sums(gd, channels, *inner);
                    self.accumulate_vec(grads, *b, db)?;
                }
            }
            Op::Scale { x, s } => {
                let s = *s;
                self.accumulate(grads, *x, g.map(|v| v * s))?;
            }
            Op::Relu { x } => {
                let dx = g.zip_map(self.value(*x), |d, v| if v > T::zero() { d } else { T::zero() })?;
                self.accumulate(grads, *x, dx)?;
            }
            Op::LeakyRelu { x, slope } => {
                let slope = *slope;
                let dx = g.zip_map(self.value(*x), |d, v| if v > T::zero() { d } else { d * slope })?;
                self.accumulate(grads, *x, dx)?;
            }
            Op::Sigmoid { x } => {
                let dx = g.zip_map(&node.value, |d, y| d * y * (T::one() - y))?;
                self.accumulate(grads, *x, dx)?;
            }
            Op::Abs { x } => {
                let dx = g.zip_map(self.value(*x), |d, v| {
                    if v > T::zero() {
                        d
                    } else if v < T::zero() {
                        -d
                    } else {
                        T::zero()
                    }
                })?;
                self.accumulate(grads, *x, dx)?;
            }
            Op::Softmax { x, width } => {
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for ((yr, dr), out) in y.chunks(*width).zip(gd.chunks(*width)).zip(dx.chunks_mut(*width)) {
                    let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yv), &dv) in out.iter_mut().zip(yr).zip(dr) {
                        *o = yv * (dv - dot);
                    }
                }
                self.accumulate_vec(grads, *x, dx)?;
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                channels,
                inner,
                xhat,
                inv_std,
                train,
                mean,
            } => {
                let (channels, inner) = (*channels, *inner);
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); channels];
                let mut dbeta = vec![T::zero(); channels];
                let xd = self.value(*x).data();
                for (i, chunk) in gd.chunks(inner).enumerate() {
                    let c = i % channels;
                    for (j, &d) in chunk.iter().enumerate() {
                        let h = if *train {
                            xhat[i * inner + j]
                        } else {
                            (xd[i * inner + j] - mean[c]) * inv_std[c]
                        };
                        dgamma[c] += d * h;
                        dbeta[c] += d;
                    }
                }
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); gd.len()];
                    if *train {
                        let count = T::of((gd.len() / channels) as f64);
                        for (i, (chunk, out)) in gd.chunks(inner).zip(dx.chunks_mut(inner)).enumerate() {
                            let c = i % channels;
                            let k = gam[c] * inv_std[c] / count;
                            for (j, (&d, o)) in chunk.iter().zip(out.iter_mut()).enumerate() {
                                let h = xhat[i * inner + j];
                                *o = k * (count * d - dbeta[c] - h * dgamma[c]);
                            }
                        }
                    } else {
                        for (i, (chunk, out)) in gd.chunks(inner).zip(dx.chunks_mut(inner)).enumerate() {
                            let c = i % channels;
                            let k = gam[c] * inv_std[c];
                            for (&d, o) in chunk.iter().zip(out.iter_mut()) {
                                *o = d * k;
                            }
                        }
                    }
                    self.accumulate_vec(grads, *x, dx)?;
                }
                self.accumulate_vec(grads, *gamma, dgamma)?;
                self.accumulate_vec(grads, *beta, dbeta)?;
            }
            Op::Dropout { x, mask } => {
                let dx: Vec<T> = gd.iter().zip(mask).map(|(&d, &m)| d * m).collect();
                self.accumulate_vec(grads, *x, dx)?;
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (&d, &i) in gd.iter().zip(argmax) {
                    dx[i] += d;
                }
                self.accumulate_vec(grads, *x, dx)?;
            }
            Op::GlobalAvgPool { x, inner } => {
                let scale = T::of(1.0 / *inner as f64);
                let mut dx = Vec::with_capacity(gd.len() * inner);
                for &d in gd {
                    dx.extend(std::iter::repeat(d * scale).take(*inner));
                }
                self.accumulate_vec(grads, *x, dx)?;
            }
            Op::Concat { inputs, outer, widths } => {
                let total: usize = widths.iter().sum();
                let mut start = 0;
                for (&v, &w) in inputs.iter().zip(widths) {
                    if self.needs(v) {
                        let mut dv = Vec::with_capacity(outer * w);
                        for o in 0..*outer {
                            dv.extend_from_slice(&gd[o * total + start..o * total + start + w]);
                        }
                        self.accumulate_vec(grads, v, dv)?;
                    }
                    start += w;
                }
            }
            Op::Reshape { x } => {
                self.accumulate_vec(grads, *x, gd.to_vec())?;
            }
            Op::SumAll { x } => {
                let n = self.value(*x).numel();
                self.accumulate_vec(grads, *x, vec![gd[0]; n])?;
            }
            Op::CrossEntropy { probs, labels } => {
                let m = self.shape(*probs)[1];
                let p = self.value(*probs).data();
                let clamp = T::of(LOG_CLAMP);
                let scale = gd[0] / T::of(labels.len() as f64);
                let mut dp = vec![T::zero(); p.len()];
                for (row, &c) in labels.iter().enumerate() {
                    let pc = p[row * m + c];
                    if pc > clamp {
                        dp[row * m + c] = -scale / pc;
                    }
                }
                self.accumulate_vec(grads, *probs, dp)?;
            }
            Op::Mse { a, b } => {
                let n = self.value(*a).numel();
                let k = T::of(2.0 / n as f64) * gd[0];
                let da = self.value(*a).zip_map(self.value(*b), |p, q| k * (p - q))?;
                if self.needs(*b) {
                    self.accumulate(grads, *b, da.map(|v| -v))?;
                }
                self.accumulate(grads, *a, da)?;
            }
            Op::RankLoss { scores, slope } => {
                let ss = self.shape(*scores);
                let (clips, t) = (ss[0], ss[1]);
                let scale = gd[0] / T::of(clips as f64);
                let ds: Vec<T> = self
                    .value(*scores)
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| {
                        let r = s - *slope * T::of((i % t) as f64);
                        if r > T::zero() {
                            scale
                        } else if r < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate_vec(grads, *scores, ds)?;
            }
        }
        Ok(())
    }
}
