use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{matmul, ParamId, ParamStore, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Element-wise non-linearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        })
    }
}

/// Parameters and buffers of one batch-normalisation layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormRefs {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    /// Fraction of the running statistic kept at each update.
    pub momentum: f64,
    pub epsilon: f64,
}

/// Log-probability floor used by the cross-entropy losses (`ln 1e-12`).
const PROB_FLOOR: f64 = 1e-12;

enum Op<T: Scalar> {
    Constant,
    Leaf,
    Param,
    Add(Var, Var),
    Mul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        /// Unfolded input patches; `None` for pointwise convolutions, which
        /// read the input directly.
        cols: Option<Vec<T>>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    GlobalAvgPool {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Reshape {
        x: Var,
    },
    TimeStep {
        x: Var,
        t: usize,
    },
    StackTime {
        parts: Vec<Var>,
    },
    Softmax {
        z: Var,
    },
    CrossEntropy {
        p: Var,
        q: Vec<T>,
    },
    SoftmaxCrossEntropy {
        z: Var,
        probs: Vec<T>,
        q: Vec<T>,
    },
    Mse {
        x: Var,
        target: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Sum {
        x: Var,
    },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    t_in: usize,
    c_in: usize,
    t_out: usize,
    kernels: usize,
    size: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn pointwise(&self) -> bool {
        self.size == 1 && self.stride == 1 && self.pad == 0
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation and replays it in reverse to obtain
/// gradients.
///
/// Values are appended in execution order, so every node's inputs precede it.
/// A tape is used for one forward/backward pass and then dropped.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    training: bool,
    params: HashMap<ParamId, Var>,
    buffer_updates: Vec<(ParamId, Vec<T>)>,
    track_kinks: bool,
    kink_signature: u64,
    raw_moments: bool,
}

impl<T: Scalar> Tape<T> {
    /// A tape in training mode (batch statistics, active dropout) or
    /// inference mode.
    pub fn new(training: bool) -> Self {
        Self {
            nodes: Vec::new(),
            training,
            params: HashMap::new(),
            buffer_updates: Vec::new(),
            track_kinks: false,
            kink_signature: 0xcbf2_9ce4_8422_2325,
            raw_moments: false,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Makes training-mode batch norms report the batch mean and unbiased
    /// variance themselves as buffer updates, without momentum blending.
    pub fn raw_batch_moments(&mut self, on: bool) {
        self.raw_moments = on;
    }

    /// Enables recording of which side of each ReLU kink and max-pool argmax
    /// the forward pass landed on; see [`Tape::kink_signature`].
    pub fn track_kinks(&mut self, on: bool) {
        self.track_kinks = on;
    }

    /// Hash of all ReLU activity masks and max-pool winners seen so far.
    /// Two passes with equal signatures lie on the same linear piece.
    pub fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    fn mix_kink(&mut self, bits: impl Iterator<Item = u64>) {
        if !self.track_kinks {
            return;
        }
        let mut h = self.kink_signature;
        for b in bits {
            h ^= b;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.kink_signature = h;
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last [`Tape::backward`] loss with respect to a leaf or
    /// parameter.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// A value that receives no gradient. Non-finite inputs are rejected.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        t.check_finite("constant")?;
        Ok(self.push(t, Op::Constant, false))
    }

    /// A free input that receives a gradient.
    pub fn leaf(&mut self, mut t: Tensor<T>) -> Result<Var> {
        t.check_finite("leaf")?;
        t.set_requires_grad(true);
        Ok(self.push(t, Op::Leaf, true))
    }

    /// Records parameter `id` (once per tape; repeated requests share a node).
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let entry = store.entry(id);
        let mut t = entry.tensor.clone();
        t.set_requires_grad(entry.trainable);
        let v = self.push(t, Op::Param, entry.trainable);
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| *x + *y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "mul: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| *x * *y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// `y = x · wᵀ + b` over the last axis of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tw.rank() != 2 {
            return Err(Error::shape(format!("linear: weight shape {:?}", tw.shape())));
        }
        let (out_dim, in_dim) = (tw.shape()[0], tw.shape()[1]);
        if tx.last_dim() != in_dim {
            return Err(Error::shape(format!(
                "linear: input {:?} does not end in {in_dim}",
                tx.shape()
            )));
        }
        let rows = tx.rows();
        let mut y = vec![T::zero(); rows * out_dim];
        matmul(tx.data(), false, tw.data(), true, &mut y, rows, in_dim, out_dim, false);
        if let Some(b) = b {
            let tb = self.value(b);
            if tb.numel() != out_dim {
                return Err(Error::shape(format!(
                    "linear: bias length {} != {out_dim}",
                    tb.numel()
                )));
            }
            add_row_bias(&mut y, tb.data());
        }
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = out_dim;
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        let out = Tensor::new(&shape, y)?;
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    /// One-dimensional convolution over time.
    ///
    /// `x` is `[N, T, C]` (or `[T, C]`), `w` is `[K, s, C]`; the input is
    /// zero-padded by `pad` steps on both ends. The output is `[N, T', K]`
    /// with `T' = (T + 2·pad − s) / stride + 1`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let tx = self.value(x);
        let tw = self.value(w);
        tx.check_finite("conv1d input")?;
        if stride == 0 {
            return Err(Error::Config("conv1d: stride must be >= 1".into()));
        }
        if tw.rank() != 3 {
            return Err(Error::shape(format!("conv1d: kernel shape {:?}", tw.shape())));
        }
        let (batch, t_in, c_in, batched) = match tx.shape() {
            [t, c] => (1, *t, *c, false),
            [n, t, c] => (*n, *t, *c, true),
            s => return Err(Error::shape(format!("conv1d: input shape {s:?}"))),
        };
        let (kernels, size, kc) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if kc != c_in {
            return Err(Error::shape(format!(
                "conv1d: kernel expects {kc} channels, input has {c_in}"
            )));
        }
        if t_in + 2 * pad < size {
            return Err(Error::shape(format!(
                "conv1d: window {size} longer than padded input {}",
                t_in + 2 * pad
            )));
        }
        let t_out = (t_in + 2 * pad - size) / stride + 1;
        let geom = ConvGeom {
            batch,
            t_in,
            c_in,
            t_out,
            kernels,
            size,
            stride,
            pad,
        };
        let rows = batch * t_out;
        let width = size * c_in;
        let cols = if geom.pointwise() {
            None
        } else {
            Some(im2col(tx.data(), &geom))
        };
        let patches = cols.as_deref().unwrap_or(tx.data());
        let mut y = vec![T::zero(); rows * kernels];
        matmul(patches, false, tw.data(), true, &mut y, rows, width, kernels, false);
        if let Some(b) = b {
            let tb = self.value(b);
            if tb.numel() != kernels {
                return Err(Error::shape(format!(
                    "conv1d: bias length {} != {kernels}",
                    tb.numel()
                )));
            }
            add_row_bias(&mut y, tb.data());
        }
        let shape = if batched {
            vec![batch, t_out, kernels]
        } else {
            vec![t_out, kernels]
        };
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        let out = Tensor::new(&shape, y)?;
        Ok(self.push(
            out,
            Op::Conv1d {
                x,
                w,
                b,
                geom,
                cols,
            },
            ng,
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let tx = self.value(x);
        let data: Vec<T> = match kind {
            Activation::Relu => tx.data().iter().map(|&v| v.max(T::zero())).collect(),
            Activation::Sigmoid => tx.data().iter().map(|&v| sigmoid(v)).collect(),
            Activation::Tanh => tx.data().iter().map(|&v| v.tanh()).collect(),
        };
        let out = Tensor::new(tx.shape(), data)?;
        if kind == Activation::Relu && self.track_kinks {
            let bits: Vec<u64> = self.value(x).data().iter().map(|&v| (v > T::zero()) as u64).collect();
            self.mix_kink(bits.into_iter());
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::Act { x, kind }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    /// Per-channel max over windows of `width` steps advanced by `stride`.
    /// Ties resolve to the earliest position.
    pub fn maxpool1d(&mut self, x: Var, width: usize, stride: usize) -> Result<Var> {
        let tx = self.value(x);
        if width == 0 || stride == 0 {
            return Err(Error::Config("maxpool1d: width and stride must be >= 1".into()));
        }
        let (batch, t_in, c, batched) = match tx.shape() {
            [t, c] => (1, *t, *c, false),
            [n, t, c] => (*n, *t, *c, true),
            s => return Err(Error::shape(format!("maxpool1d: input shape {s:?}"))),
        };
        if width > t_in {
            return Err(Error::shape(format!(
                "maxpool1d: width {width} exceeds length {t_in}"
            )));
        }
        let t_out = (t_in - width) / stride + 1;
        let src = tx.data();
        let mut y = Vec::with_capacity(batch * t_out * c);
        let mut argmax = Vec::with_capacity(batch * t_out * c);
        for n in 0..batch {
            for t in 0..t_out {
                for ch in 0..c {
                    let mut best = (n * t_in + t * stride) * c + ch;
                    for i in 1..width {
                        let idx = (n * t_in + t * stride + i) * c + ch;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    y.push(src[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let shape = if batched {
            vec![batch, t_out, c]
        } else {
            vec![t_out, c]
        };
        let out = Tensor::new(&shape, y)?;
        if self.track_kinks {
            let bits: Vec<u64> = argmax.iter().map(|&a| a as u64).collect();
            self.mix_kink(bits.into_iter());
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::MaxPool { x, argmax }, ng))
    }

    /// Mean over the time axis: `[N, T, C] -> [N, C]`, `[T, C] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (batch, t, c, batched) = match tx.shape() {
            [t, c] => (1, *t, *c, false),
            [n, t, c] => (*n, *t, *c, true),
            s => return Err(Error::shape(format!("global_avg_pool: input shape {s:?}"))),
        };
        let src = tx.data();
        let mut y = vec![T::zero(); batch * c];
        for n in 0..batch {
            let mut acc = vec![0.0f64; c];
            for step in 0..t {
                let row = &src[(n * t + step) * c..(n * t + step + 1) * c];
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v.f64();
                }
            }
            for (dst, a) in y[n * c..(n + 1) * c].iter_mut().zip(acc) {
                *dst = T::of(a / t as f64);
            }
        }
        let shape = if batched { vec![batch, c] } else { vec![c] };
        let out = Tensor::new(&shape, y)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::GlobalAvgPool { x }, ng))
    }

    /// Per-channel normalisation over every axis but the last.
    ///
    /// In training mode the batch moments are used and the running moments
    /// are scheduled for update (see [`Tape::take_buffer_updates`]); in
    /// inference mode the running moments are used.
    pub fn batchnorm(&mut self, store: &ParamStore<T>, x: Var, bn: &BatchNormRefs) -> Result<Var> {
        if !(bn.epsilon > 0.0) {
            return Err(Error::Config("batchnorm: epsilon must be > 0".into()));
        }
        let gamma = self.param(store, bn.gamma);
        let beta = self.param(store, bn.beta);
        let tx = self.value(x);
        let c = tx.last_dim();
        let m = tx.rows();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        if g.len() != c || bt.len() != c {
            return Err(Error::shape(format!(
                "batchnorm: {} channels, affine has {}",
                c,
                g.len()
            )));
        }
        let src = tx.data();
        let (mean, var): (Vec<f64>, Vec<f64>) = if self.training {
            if m < 2 {
                return Err(Error::shape(
                    "batchnorm: training mode needs at least 2 values per channel",
                ));
            }
            let mut sum = vec![0.0f64; c];
            for row in src.chunks_exact(c) {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v.f64();
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / m as f64).collect();
            let mut sq = vec![0.0f64; c];
            for row in src.chunks_exact(c) {
                for ((s, v), mu) in sq.iter_mut().zip(row).zip(&mean) {
                    let d = v.f64() - mu;
                    *s += d * d;
                }
            }
            let var: Vec<f64> = sq.iter().map(|s| s / m as f64).collect();
            (mean, var)
        } else {
            let rm = store.get(bn.running_mean).data();
            let rv = store.get(bn.running_var).data();
            (
                rm.iter().map(|v| v.f64()).collect(),
                rv.iter().map(|v| v.f64()).collect(),
            )
        };
        let inv_std: Vec<T> = var
            .iter()
            .map(|v| T::of(1.0 / (v.max(0.0) + bn.epsilon).sqrt()))
            .collect();
        let mean_t: Vec<T> = mean.iter().map(|&v| T::of(v)).collect();
        let mut xhat = vec![T::zero(); src.len()];
        let mut y = vec![T::zero(); src.len()];
        for ((row, xr), yr) in src
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c))
            .zip(y.chunks_exact_mut(c))
        {
            for j in 0..c {
                let h = (row[j] - mean_t[j]) * inv_std[j];
                xr[j] = h;
                yr[j] = g[j] * h + bt[j];
            }
        }
        let out = Tensor::new(tx.shape(), y)?;
        if self.training {
            let mom = if self.raw_moments { 0.0 } else { bn.momentum };
            let rm = store.get(bn.running_mean).data();
            let rv = store.get(bn.running_var).data();
            let unbias = if m > 1 { m as f64 / (m as f64 - 1.0) } else { 1.0 };
            let new_mean = rm
                .iter()
                .zip(&mean)
                .map(|(r, b)| T::of(mom * r.f64() + (1.0 - mom) * b))
                .collect();
            let new_var = rv
                .iter()
                .zip(&var)
                .map(|(r, b)| T::of(mom * r.f64() + (1.0 - mom) * b * unbias))
                .collect();
            self.buffer_updates.push((bn.running_mean, new_mean));
            self.buffer_updates.push((bn.running_var, new_var));
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let batch_stats = self.training;
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            ng,
        ))
    }

    /// Running-statistic updates produced by training-mode batch norms, in
    /// execution order.
    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Vec<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape(format!("concat: {sa:?} vs {sb:?}")));
        }
        let (wa, wb) = (ta.last_dim(), tb.last_dim());
        let rows = if wa > 0 { ta.rows() } else { tb.rows() };
        let mut y = Vec::with_capacity(ta.numel() + tb.numel());
        for r in 0..rows {
            y.extend_from_slice(&ta.data()[r * wa..(r + 1) * wa]);
            y.extend_from_slice(&tb.data()[r * wb..(r + 1) * wb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().expect("rank >= 1") = wa + wb;
        let out = Tensor::new(&shape, y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat { a, b }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let mut out = out;
        out.set_requires_grad(false);
        let ng = self.needs(x);
        Ok(self.push(out, Op::Reshape { x }, ng))
    }

    /// Slice `x[:, t, :]` of a `[N, T, C]` tensor.
    pub fn time_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let tx = self.value(x);
        let [n, steps, c] = *tx.shape() else {
            return Err(Error::shape(format!("time_step: input shape {:?}", tx.shape())));
        };
        if t >= steps {
            return Err(Error::shape(format!("time_step: {t} out of {steps}")));
        }
        let mut y = Vec::with_capacity(n * c);
        for b in 0..n {
            let off = (b * steps + t) * c;
            y.extend_from_slice(&tx.data()[off..off + c]);
        }
        let out = Tensor::new(&[n, c], y)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::TimeStep { x, t }, ng))
    }

    /// Stacks `[N, C]` slices into `[N, T, C]`.
    pub fn stack_time(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("stack_time: no parts"))?;
        let shape = self.value(*first).shape().to_vec();
        let [n, c] = shape[..] else {
            return Err(Error::shape(format!("stack_time: part shape {shape:?}")));
        };
        if parts.iter().any(|p| self.value(*p).shape() != shape.as_slice()) {
            return Err(Error::shape("stack_time: parts differ in shape"));
        }
        let steps = parts.len();
        let mut y = vec![T::zero(); n * steps * c];
        for (t, p) in parts.iter().enumerate() {
            let src = self.value(*p).data();
            for b in 0..n {
                let off = (b * steps + t) * c;
                y[off..off + c].copy_from_slice(&src[b * c..(b + 1) * c]);
            }
        }
        let out = Tensor::new(&[n, steps, c], y)?;
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(
            out,
            Op::StackTime {
                parts: parts.to_vec(),
            },
            ng,
        ))
    }

    /// Row-wise soft-max over the last axis, with max subtraction.
    pub fn softmax(&mut self, z: Var) -> Result<Var> {
        let tz = self.value(z);
        let k = tz.last_dim();
        if k == 0 {
            return Err(Error::shape("softmax: empty class axis"));
        }
        let y = softmax_rows(tz.data(), k);
        let out = Tensor::new(tz.shape(), y)?;
        let ng = self.needs(z);
        Ok(self.push(out, Op::Softmax { z }, ng))
    }

    /// `−(1/N) Σₙ Σₖ q log p`, with `p` floored at 1e-12.
    pub fn cross_entropy(&mut self, p: Var, q: &Tensor<T>) -> Result<Var> {
        let tp = self.value(p);
        if tp.shape() != q.shape() {
            return Err(Error::shape(format!(
                "cross_entropy: {:?} vs {:?}",
                tp.shape(),
                q.shape()
            )));
        }
        let n = tp.rows().max(1);
        let loss: f64 = tp
            .data()
            .iter()
            .zip(q.data())
            .map(|(pv, qv)| -qv.f64() * pv.f64().max(PROB_FLOOR).ln())
            .sum::<f64>()
            / n as f64;
        let out = Tensor::scalar(T::of(loss));
        out.check_finite("cross_entropy")?;
        let ng = self.needs(p);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                p,
                q: q.data().to_vec(),
            },
            ng,
        ))
    }

    /// Soft-max followed by cross-entropy against `q`, with the combined
    /// gradient `(p − q)/N` on the logits.
    pub fn softmax_cross_entropy(&mut self, z: Var, q: &Tensor<T>) -> Result<Var> {
        let tz = self.value(z);
        if tz.shape() != q.shape() {
            return Err(Error::shape(format!(
                "softmax_cross_entropy: {:?} vs {:?}",
                tz.shape(),
                q.shape()
            )));
        }
        let k = tz.last_dim();
        let n = tz.rows().max(1);
        let mut loss = 0.0f64;
        let mut probs = Vec::with_capacity(tz.numel());
        for (zr, qr) in tz.data().chunks_exact(k).zip(q.data().chunks_exact(k)) {
            let max = zr.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
            let lse = zr.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
            for (zv, qv) in zr.iter().zip(qr) {
                let logp = (zv.f64() - max - lse).max(PROB_FLOOR.ln());
                loss -= qv.f64() * logp;
                probs.push(T::of((zv.f64() - max - lse).exp()));
            }
        }
        let out = Tensor::scalar(T::of(loss / n as f64));
        out.check_finite("softmax_cross_entropy")?;
        let ng = self.needs(z);
        Ok(self.push(
            out,
            Op::SoftmaxCrossEntropy {
                z,
                probs,
                q: q.data().to_vec(),
            },
            ng,
        ))
    }

    /// Mean of squared differences to a fixed target.
    pub fn mse(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape() != target.shape() {
            return Err(Error::shape(format!(
                "mse: {:?} vs {:?}",
                tx.shape(),
                target.shape()
            )));
        }
        let n = tx.numel().max(1);
        let loss = tx
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| {
                let d = a.f64() - b.f64();
                d * d
            })
            .sum::<f64>()
            / n as f64;
        let out = Tensor::scalar(T::of(loss));
        out.check_finite("mse")?;
        let ng = self.needs(x);
        Ok(self.push(
            out,
            Op::Mse {
                x,
                target: target.data().to_vec(),
            },
            ng,
        ))
    }

    /// Inverted dropout. In inference mode, or with `rate == 0`, returns `x`
    /// itself.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let tx = self.value(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..tx.numel())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    scale
                }
            })
            .collect();
        let y = tx.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect();
        let out = Tensor::new(tx.shape(), y)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Dropout { x, mask }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().map(|v| v.f64()).sum();
        let ng = self.needs(x);
        Ok(self.push(Tensor::scalar(T::of(s)), Op::Sum { x }, ng))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// across fan-out and are stored on every leaf and trainable parameter.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Internal(format!("loss {loss:?} is not on this tape")));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward: loss must be scalar, got {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop(i, &g, &mut grads)?;
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param) {
                self.nodes[i].value.set_grad(g);
            }
        }
        Ok(())
    }

    /// Gradients of all trainable parameters touched by the last backward
    /// pass, ordered by parameter id.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<T>)> {
        let mut out: Vec<(ParamId, Vec<T>)> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grad(v).map(|g| (id, g.to_vec())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = self.slot(grads, *v) {
                        axpy(d, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    let other = self.value(*b).data();
                    for ((dv, gv), o) in d.iter_mut().zip(g).zip(other) {
                        *dv = *dv + *gv * *o;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    let other = self.value(*a).data();
                    for ((dv, gv), o) in d.iter_mut().zip(g).zip(other) {
                        *dv = *dv + *gv * *o;
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let tx = self.value(*x);
                let tw = self.value(*w);
                let (out_dim, in_dim) = (tw.shape()[0], tw.shape()[1]);
                let rows = tx.rows();
                if let Some(d) = self.slot(grads, *x) {
                    matmul(g, false, tw.data(), false, d, rows, out_dim, in_dim, true);
                }
                if let Some(d) = self.slot(grads, *w) {
                    matmul(g, true, tx.data(), false, d, out_dim, rows, in_dim, true);
                }
                if let Some(b) = b {
                    if let Some(d) = self.slot(grads, *b) {
                        column_sums_into(d, g);
                    }
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let tw = self.value(*w);
                let rows = geom.batch * geom.t_out;
                let width = geom.size * geom.c_in;
                if let Some(d) = self.slot(grads, *w) {
                    let patches = cols.as_deref().unwrap_or(self.value(*x).data());
                    matmul(g, true, patches, false, d, geom.kernels, rows, width, true);
                }
                if let Some(b) = b {
                    if let Some(d) = self.slot(grads, *b) {
                        column_sums_into(d, g);
                    }
                }
                if let Some(d) = self.slot(grads, *x) {
                    if geom.pointwise() {
                        matmul(g, false, tw.data(), false, d, rows, geom.kernels, width, true);
                    } else {
                        let mut dcols = vec![T::zero(); rows * width];
                        matmul(g, false, tw.data(), false, &mut dcols, rows, geom.kernels, width, false);
                        col2im_into(d, &dcols, geom);
                    }
                }
            }
            Op::Act { x, kind } => {
                if let Some(d) = self.slot(grads, *x) {
                    let y = node.value.data();
                    match kind {
                        Activation::Relu => {
                            for ((dv, gv), yv) in d.iter_mut().zip(g).zip(y) {
                                if *yv > T::zero() {
                                    *dv = *dv + *gv;
                                }
                            }
                        }
                        Activation::Sigmoid => {
                            for ((dv, gv), yv) in d.iter_mut().zip(g).zip(y) {
                                *dv = *dv + *gv * *yv * (T::one() - *yv);
                            }
                        }
                        Activation::Tanh => {
                            for ((dv, gv), yv) in d.iter_mut().zip(g).zip(y) {
                                *dv = *dv + *gv * (T::one() - *yv * *yv);
                            }
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(d) = self.slot(grads, *x) {
                    for (gv, &a) in g.iter().zip(argmax) {
                        d[a as usize] = d[a as usize] + *gv;
                    }
                }
            }
            Op::GlobalAvgPool { x } => {
                if let Some(d) = self.slot(grads, *x) {
                    let tx = self.value(*x);
                    let (c, t) = (tx.last_dim(), tx.shape()[tx.rank() - 2]);
                    let scale = T::of(1.0 / t as f64);
                    for (row_i, row) in d.chunks_exact_mut(c).enumerate() {
                        let n = row_i / t;
                        let gr = &g[n * c..(n + 1) * c];
                        for (dv, gv) in row.iter_mut().zip(gr) {
                            *dv = *dv + *gv * scale;
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let m = xhat.len() / c;
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        sum_g[j] += gr[j].f64();
                        sum_gx[j] += gr[j].f64() * hr[j].f64();
                    }
                }
                if let Some(d) = self.slot(grads, *gamma) {
                    for (dv, s) in d.iter_mut().zip(&sum_gx) {
                        *dv = *dv + T::of(*s);
                    }
                }
                if let Some(d) = self.slot(grads, *beta) {
                    for (dv, s) in d.iter_mut().zip(&sum_g) {
                        *dv = *dv + T::of(*s);
                    }
                }
                if let Some(d) = self.slot(grads, *x) {
                    let gm = self.value(*gamma).data();
                    if *batch_stats {
                        let inv_m = 1.0 / m as f64;
                        let mean_g: Vec<T> = sum_g.iter().map(|s| T::of(s * inv_m)).collect();
                        let mean_gx: Vec<T> = sum_gx.iter().map(|s| T::of(s * inv_m)).collect();
                        for ((dr, gr), hr) in d
                            .chunks_exact_mut(c)
                            .zip(g.chunks_exact(c))
                            .zip(xhat.chunks_exact(c))
                        {
                            for j in 0..c {
                                let v = gm[j] * inv_std[j] * (gr[j] - mean_g[j] - hr[j] * mean_gx[j]);
                                dr[j] = dr[j] + v;
                            }
                        }
                    } else {
                        for (dr, gr) in d.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                            for j in 0..c {
                                dr[j] = dr[j] + gm[j] * inv_std[j] * gr[j];
                            }
                        }
                    }
                }
            }
            Op::Concat { a, b } => {
                let wa = self.value(*a).last_dim();
                let wb = self.value(*b).last_dim();
                let w = wa + wb;
                let rows = g.len().checked_div(w).unwrap_or(0);
                if let Some(d) = self.slot(grads, *a) {
                    for r in 0..rows {
                        axpy(&mut d[r * wa..(r + 1) * wa], &g[r * w..r * w + wa]);
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for r in 0..rows {
                        axpy(&mut d[r * wb..(r + 1) * wb], &g[r * w + wa..(r + 1) * w]);
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(d) = self.slot(grads, *x) {
                    axpy(d, g);
                }
            }
            Op::TimeStep { x, t } => {
                if let Some(d) = self.slot(grads, *x) {
                    let tx = self.value(*x);
                    let (n, steps, c) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                    for b in 0..n {
                        let off = (b * steps + t) * c;
                        axpy(&mut d[off..off + c], &g[b * c..(b + 1) * c]);
                    }
                }
            }
            Op::StackTime { parts } => {
                let steps = parts.len();
                let shape = node.value.shape();
                let (n, c) = (shape[0], shape[2]);
                for (t, p) in parts.iter().enumerate() {
                    if let Some(d) = self.slot(grads, *p) {
                        for b in 0..n {
                            let off = (b * steps + t) * c;
                            axpy(&mut d[b * c..(b + 1) * c], &g[off..off + c]);
                        }
                    }
                }
            }
            Op::Softmax { z } => {
                if let Some(d) = self.slot(grads, *z) {
                    let k = node.value.last_dim();
                    for ((dr, gr), pr) in d
                        .chunks_exact_mut(k)
                        .zip(g.chunks_exact(k))
                        .zip(node.value.data().chunks_exact(k))
                    {
                        let dot: f64 = gr.iter().zip(pr).map(|(a, b)| a.f64() * b.f64()).sum();
                        let dot = T::of(dot);
                        for j in 0..k {
                            dr[j] = dr[j] + pr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy { p, q } => {
                if let Some(d) = self.slot(grads, *p) {
                    let tp = self.value(*p);
                    let n = tp.rows().max(1) as f64;
                    let scale = g[0].f64() / n;
                    for ((dv, pv), qv) in d.iter_mut().zip(tp.data()).zip(q) {
                        if pv.f64() > PROB_FLOOR {
                            *dv = *dv - T::of(scale * qv.f64() / pv.f64());
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy { z, probs, q } => {
                if let Some(d) = self.slot(grads, *z) {
                    let n = self.value(*z).rows().max(1);
                    let scale = T::of(g[0].f64() / n as f64);
                    for ((dv, pv), qv) in d.iter_mut().zip(probs).zip(q) {
                        *dv = *dv + scale * (*pv - *qv);
                    }
                }
            }
            Op::Mse { x, target } => {
                if let Some(d) = self.slot(grads, *x) {
                    let tx = self.value(*x);
                    let scale = T::of(2.0 * g[0].f64() / tx.numel().max(1) as f64);
                    for ((dv, a), b) in d.iter_mut().zip(tx.data()).zip(target) {
                        *dv = *dv + scale * (*a - *b);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((dv, gv), m) in d.iter_mut().zip(g).zip(mask) {
                        *dv = *dv + *gv * *m;
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(d) = self.slot(grads, *x) {
                    for dv in d.iter_mut() {
                        *dv = *dv + g[0];
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient accumulator for `v`, or `None` when `v` needs no gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn axpy<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

fn add_row_bias<T: Scalar>(y: &mut [T], bias: &[T]) {
    for row in y.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = *v + *b;
        }
    }
}

fn column_sums_into<T: Scalar>(dst: &mut [T], g: &[T]) {
    let c = dst.len();
    let mut acc = vec![0.0f64; c];
    for row in g.chunks_exact(c) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v.f64();
        }
    }
    for (d, a) in dst.iter_mut().zip(acc) {
        *d = *d + T::of(a);
    }
}

pub(crate) fn softmax_rows<T: Scalar>(z: &[T], k: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(z.len());
    for row in z.chunks_exact(k) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        y.extend(exps.iter().map(|e| T::of(e / total)));
    }
    y
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let width = g.size * g.c_in;
    let mut cols = vec![T::zero(); g.batch * g.t_out * width];
    for n in 0..g.batch {
        for t in 0..g.t_out {
            let row = &mut cols[(n * g.t_out + t) * width..(n * g.t_out + t + 1) * width];
            for i in 0..g.size {
                let src_t = (t * g.stride + i) as isize - g.pad as isize;
                if src_t < 0 || src_t as usize >= g.t_in {
                    continue;
                }
                let off = (n * g.t_in + src_t as usize) * g.c_in;
                row[i * g.c_in..(i + 1) * g.c_in].copy_from_slice(&x[off..off + g.c_in]);
            }
        }
    }
    cols
}

fn col2im_into<T: Scalar>(dx: &mut [T], dcols: &[T], g: &ConvGeom) {
    let width = g.size * g.c_in;
    for n in 0..g.batch {
        for t in 0..g.t_out {
            let row = &dcols[(n * g.t_out + t) * width..(n * g.t_out + t + 1) * width];
            for i in 0..g.size {
                let src_t = (t * g.stride + i) as isize - g.pad as isize;
                if src_t < 0 || src_t as usize >= g.t_in {
                    continue;
                }
                let off = (n * g.t_in + src_t as usize) * g.c_in;
                axpy(&mut dx[off..off + g.c_in], &row[i * g.c_in..(i + 1) * g.c_in]);
            }
        }
    }
}
