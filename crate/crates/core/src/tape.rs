//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! Ops are recorded in execution order; node inputs always precede their
//! outputs, so one reverse sweep visits every node exactly once. Values
//! live in the tape arena; parameter gradients are copied out into the
//! owning [`ParamSet`](crate::param::ParamSet) after the sweep, where they
//! accumulate until the caller zeroes them.
//!
//! Tapes are reusable: [`Tape::reset`] recycles every buffer into an
//! internal pool, so a training loop touches steady-state memory instead
//! of paying allocation and page-fault cost per step.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims};
use crate::param::ParamSet;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Forward-pass mode for layers whose behaviour differs between training
/// and evaluation (batch norm, dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Exponential-moving-average statistics of one batch-norm layer.
/// `count` is the number of training batches folded in; eval mode before
/// the first update is a state error.
#[derive(Debug, Clone)]
pub struct BnRunning<S: Scalar> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
    pub count: u64,
}

impl<S: Scalar> BnRunning<S> {
    pub fn new(channels: usize) -> Self {
        BnRunning {
            mean: vec![S::ZERO; channels],
            var: vec![S::ONE; channels],
            count: 0,
        }
    }
}

/// Batch-norm defaults: the variance clamp and the EMA momentum.
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

/// Recycled buffer store. `get` always returns a zeroed buffer of the
/// requested length.
#[derive(Debug)]
struct BufPool<S: Scalar> {
    free: Vec<Vec<S>>,
}

impl<S: Scalar> Default for BufPool<S> {
    fn default() -> Self {
        BufPool { free: Vec::new() }
    }
}

impl<S: Scalar> BufPool<S> {
    /// A buffer of exactly `len` elements with unspecified (but
    /// initialized) contents. Callers must overwrite every element. In a
    /// steady-state loop the same lengths recur, so this is free of both
    /// allocation and memset cost.
    fn get(&mut self, len: usize) -> Vec<S> {
        if let Some(i) = self.free.iter().position(|b| b.len() == len) {
            return self.free.swap_remove(i);
        }
        // fall back to best capacity fit, paying one zero-fill
        let mut best: Option<(usize, usize)> = None;
        for (i, b) in self.free.iter().enumerate() {
            if b.capacity() >= len && best.map_or(true, |(_, c)| b.capacity() < c) {
                best = Some((i, b.capacity()));
            }
        }
        match best {
            Some((i, _)) => {
                let mut b = self.free.swap_remove(i);
                b.clear();
                b.resize(len, S::ZERO);
                b
            }
            None => vec![S::ZERO; len],
        }
    }

    /// A zero-filled buffer of `len` elements, for accumulation targets.
    fn get_zeroed(&mut self, len: usize) -> Vec<S> {
        let mut b = self.get(len);
        b.fill(S::ZERO);
        b
    }

    fn put(&mut self, buf: Vec<S>) {
        if buf.capacity() > 0 {
            self.free.push(buf);
        }
    }
}

enum Op<S: Scalar> {
    Leaf,
    Param {
        slot: usize,
    },
    Conv2d {
        x: ValueId,
        w: ValueId,
        b: ValueId,
        dims: ConvDims,
    },
    Affine {
        x: ValueId,
        w: ValueId,
        b: ValueId,
    },
    Relu {
        x: ValueId,
    },
    Sigmoid {
        x: ValueId,
    },
    Concat {
        a: ValueId,
        b: ValueId,
        axis: usize,
    },
    BatchNorm {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        saved_mean: Vec<S>,
        saved_var: Vec<S>,
        eps: S,
        /// Train mode differentiates through the batch statistics; eval
        /// mode treats the running statistics as constants.
        stats_from_batch: bool,
    },
    Dropout {
        x: ValueId,
        mask: Vec<S>,
    },
    SpatialSoftmax {
        h: ValueId,
        temperature: S,
    },
    ExpectedPoints {
        z: ValueId,
    },
    MapPoints {
        raw: ValueId,
        rows: usize,
        cols: usize,
    },
    Reshape {
        x: ValueId,
    },
    SliceRows {
        x: ValueId,
        start: usize,
    },
    Add {
        a: ValueId,
        b: ValueId,
    },
    Mul {
        a: ValueId,
        b: ValueId,
    },
    Scale {
        x: ValueId,
        c: S,
    },
    SumAll {
        x: ValueId,
    },
    TaskLoss {
        pred: ValueId,
        target: Vec<S>,
        rows: usize,
    },
    BceLoss {
        logits: ValueId,
        labels: Vec<u8>,
    },
}

struct Node<S: Scalar> {
    shape: Vec<usize>,
    value: Vec<S>,
    needs_grad: bool,
    op: Op<S>,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    pool: BufPool<S>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            pool: BufPool::default(),
        }
    }

    /// Recycle every node and gradient buffer for the next forward pass.
    pub fn reset(&mut self) {
        for node in self.nodes.drain(..) {
            self.pool.put(node.value);
        }
        for g in self.grads.drain(..).flatten() {
            self.pool.put(g);
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<S>, needs_grad: bool, op: Op<S>) -> ValueId {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            needs_grad,
            op,
        });
        self.grads.push(None);
        ValueId(self.nodes.len() - 1)
    }

    /// Push an op output after verifying every element is finite; NaN/Inf
    /// anywhere in the graph is an error state, caught at the op that
    /// produced it.
    fn push_checked(
        &mut self,
        what: &str,
        shape: Vec<usize>,
        value: Vec<S>,
        needs_grad: bool,
        op: Op<S>,
    ) -> Result<ValueId> {
        for (i, v) in value.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "{what}: non-finite output {v} at flat index {i}"
                )));
            }
        }
        Ok(self.push(shape, value, needs_grad, op))
    }

    fn copied(&mut self, data: &[S]) -> Vec<S> {
        let mut buf = self.pool.get(data.len());
        buf.copy_from_slice(data);
        buf
    }

    /// Constant input; gradients do not flow into it.
    pub fn input(&mut self, t: &Tensor<S>) -> ValueId {
        let buf = self.copied(t.data());
        self.push(t.shape().to_vec(), buf, false, Op::Leaf)
    }

    /// Leaf that receives a gradient; used by the gradient checker.
    pub fn input_grad(&mut self, t: &Tensor<S>) -> ValueId {
        let buf = self.copied(t.data());
        self.push(t.shape().to_vec(), buf, true, Op::Leaf)
    }

    /// Snapshot a parameter onto the tape. After `backward`, call
    /// [`Tape::accumulate_param_grads`] to add the contribution back into
    /// the parameter's gradient buffer. A slot may be registered any
    /// number of times per tape; contributions sum.
    pub fn param(&mut self, params: &ParamSet<S>, slot: usize) -> ValueId {
        let p = params.get(slot);
        let buf = self.copied(p.value.data());
        self.push(p.value.shape().to_vec(), buf, true, Op::Param { slot })
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: ValueId) -> &[S] {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: ValueId) -> S {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    /// Gradient of a node if one flowed to it during `backward`.
    pub fn grad(&self, id: ValueId) -> Option<&[S]> {
        self.grads[id.0].as_deref()
    }

    pub fn value_tensor(&self, id: ValueId) -> Tensor<S> {
        Tensor::from_vec(&self.nodes[id.0].shape, self.nodes[id.0].value.clone())
            .expect("tape node shape/value consistent")
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ---- ops ------------------------------------------------------------

    pub fn conv2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: usize,
        pad: usize,
    ) -> Result<ValueId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || bs != [ws[0]] || xs[1] != ws[1] {
            return Err(Error::Config(format!(
                "conv2d shape mismatch: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        let dims = ConvDims {
            n: xs[0],
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ws[0],
            k: ws[2],
            stride,
            pad,
        };
        if dims.k > dims.h + 2 * pad || dims.k > dims.w + 2 * pad {
            return Err(Error::Config(format!(
                "conv2d kernel {} exceeds padded input: input {xs:?}, weight {ws:?}, pad {pad}",
                dims.k
            )));
        }
        let mut cols = self.pool.get(dims.kk() * dims.chunk_width::<S>());
        let mut y_perm = self.pool.get(dims.c_out * dims.chunk_width::<S>());
        let mut y = self.pool.get(dims.n * dims.c_out * dims.n_cols());
        let finite = kernels::conv2d_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
            dims,
            &mut cols,
            &mut y_perm,
            &mut y,
        );
        self.pool.put(cols);
        self.pool.put(y_perm);
        if !finite {
            return Err(Error::Numeric("conv2d: non-finite output".into()));
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            vec![dims.n, dims.c_out, dims.h_out(), dims.w_out()],
            y,
            needs,
            Op::Conv2d { x, w, b, dims },
        ))
    }

    pub fn affine(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(Error::Config(format!(
                "affine dimension mismatch: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let (n, d_in, d_out) = (xs[0], xs[1], ws[0]);
        let mut y = self.pool.get(n * d_out);
        kernels::affine_forward(
            &self.nodes[x.0].value,
            n,
            d_in,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
            d_out,
            &mut y,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push_checked("affine", vec![n, d_out], y, needs, Op::Affine { x, w, b })
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let mut y = self.pool.get(self.nodes[x.0].value.len());
        for (o, v) in y.iter_mut().zip(self.nodes[x.0].value.iter()) {
            *o = v.maxs(S::ZERO);
        }
        let needs = self.needs(x);
        self.push(self.shape(x).to_vec(), y, needs, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let mut y = self.pool.get(self.nodes[x.0].value.len());
        for (o, v) in y.iter_mut().zip(self.nodes[x.0].value.iter()) {
            *o = kernels::sigmoid(*v);
        }
        let needs = self.needs(x);
        self.push(self.shape(x).to_vec(), y, needs, Op::Sigmoid { x })
    }

    pub fn concat(&mut self, a: ValueId, b: ValueId, axis: usize) -> Result<ValueId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let rank_ok = sa.len() == sb.len() && axis < sa.len();
        let dims_ok = rank_ok
            && sa
                .iter()
                .zip(sb.iter())
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !dims_ok {
            return Err(Error::Config(format!(
                "concat dimension mismatch on axis {axis}: {sa:?} vs {sb:?}"
            )));
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let (la, lb) = (sa[axis] * inner, sb[axis] * inner);
        let mut out_shape = sa.clone();
        out_shape[axis] = sa[axis] + sb[axis];
        let mut y = self.pool.get(outer * (la + lb));
        {
            let va = &self.nodes[a.0].value;
            let vb = &self.nodes[b.0].value;
            for o in 0..outer {
                y[o * (la + lb)..o * (la + lb) + la].copy_from_slice(&va[o * la..(o + 1) * la]);
                y[o * (la + lb) + la..(o + 1) * (la + lb)]
                    .copy_from_slice(&vb[o * lb..(o + 1) * lb]);
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out_shape, y, needs, Op::Concat { a, b, axis }))
    }

    /// Batch normalization over [N,C,H,W]. Train mode normalizes by batch
    /// statistics (biased variance over N*H*W) and folds them into the
    /// running averages; eval mode uses the running statistics. Both modes
    /// are differentiable; train mode differentiates through the batch
    /// statistics.
    pub fn batch_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running: &mut BnRunning<S>,
        mode: Mode,
    ) -> Result<ValueId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::Config(format!(
                "batch_norm expects [N,C,H,W] input, got {xs:?}"
            )));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Config(format!(
                "batch_norm gamma/beta must be [{c}], got {:?}/{:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let m = n * h * w;
        let eps = S::from_f64(BN_EPS);
        let (mean, var) = match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(Error::Config(format!(
                        "batch_norm train mode needs N*H*W >= 2 per channel, got {m}"
                    )));
                }
                let xv = &self.nodes[x.0].value;
                let mut mean = vec![S::ZERO; c];
                let mut var = vec![S::ZERO; c];
                let minv = S::ONE / S::from_f64(m as f64);
                // one fused pass: per-channel sum and sum of squares
                for ch in 0..c {
                    let mut sums = [S::ZERO; 4];
                    let mut sqs = [S::ZERO; 4];
                    for s in 0..n {
                        let base = (s * c + ch) * h * w;
                        let plane = &xv[base..base + h * w];
                        let mut i = 0;
                        while i + 4 <= plane.len() {
                            sums[0] += plane[i];
                            sums[1] += plane[i + 1];
                            sums[2] += plane[i + 2];
                            sums[3] += plane[i + 3];
                            sqs[0] += plane[i] * plane[i];
                            sqs[1] += plane[i + 1] * plane[i + 1];
                            sqs[2] += plane[i + 2] * plane[i + 2];
                            sqs[3] += plane[i + 3] * plane[i + 3];
                            i += 4;
                        }
                        while i < plane.len() {
                            sums[0] += plane[i];
                            sqs[0] += plane[i] * plane[i];
                            i += 1;
                        }
                    }
                    let mu = (sums[0] + sums[1] + sums[2] + sums[3]) * minv;
                    let ex2 = (sqs[0] + sqs[1] + sqs[2] + sqs[3]) * minv;
                    mean[ch] = mu;
                    var[ch] = (ex2 - mu * mu).maxs(S::ZERO);
                }
                // EMA update of the running statistics.
                let mom = S::from_f64(BN_MOMENTUM);
                if running.count == 0 {
                    running.mean.copy_from_slice(&mean);
                    running.var.copy_from_slice(&var);
                } else {
                    for ch in 0..c {
                        running.mean[ch] = mom * running.mean[ch] + (S::ONE - mom) * mean[ch];
                        running.var[ch] = mom * running.var[ch] + (S::ONE - mom) * var[ch];
                    }
                }
                running.count += 1;
                (mean, var)
            }
            Mode::Eval => {
                if running.count == 0 {
                    return Err(Error::State(
                        "batch_norm eval mode before any running statistics were recorded".into(),
                    ));
                }
                (running.mean.clone(), running.var.clone())
            }
        };
        let mut y = self.pool.get(self.nodes[x.0].value.len());
        let mut finite = true;
        {
            let xv = &self.nodes[x.0].value;
            let gv = &self.nodes[gamma.0].value;
            let bv = &self.nodes[beta.0].value;
            for ch in 0..c {
                let inv_s = S::ONE / (var[ch] + eps).sqrt();
                let (g, bb, mu) = (gv[ch], bv[ch], mean[ch]);
                for s in 0..n {
                    let base = (s * c + ch) * h * w;
                    for (o, v) in y[base..base + h * w].iter_mut().zip(&xv[base..base + h * w]) {
                        let out = g * (*v - mu) * inv_s + bb;
                        finite &= out.is_finite();
                        *o = out;
                    }
                }
            }
        }
        if !finite {
            return Err(Error::Numeric("batch_norm: non-finite output".into()));
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            xs,
            y,
            needs,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved_mean: mean,
                saved_var: var,
                eps,
                stats_from_batch: mode == Mode::Train,
            },
        ))
    }

    /// Inverted dropout: train mode zeroes each element with probability p
    /// and scales survivors by 1/(1-p); eval mode (and p == 0) is exactly
    /// the identity and returns the input node unchanged.
    pub fn dropout(&mut self, x: ValueId, p: f64, mode: Mode, rng: &mut Rng) -> Result<ValueId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability must satisfy 0 <= p < 1, got {p}"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = S::from_f64(1.0 / (1.0 - p));
        let len = self.nodes[x.0].value.len();
        let mut mask = self.pool.get(len);
        for m in mask.iter_mut() {
            *m = if rng.bernoulli(p) { S::ZERO } else { keep_scale };
        }
        let mut y = self.pool.get(len);
        for ((o, v), m) in y
            .iter_mut()
            .zip(self.nodes[x.0].value.iter())
            .zip(mask.iter())
        {
            *o = *v * *m;
        }
        let needs = self.needs(x);
        Ok(self.push(self.shape(x).to_vec(), y, needs, Op::Dropout { x, mask }))
    }

    /// Per-channel softmax over the spatial positions of [N,C,H,W].
    /// Non-finite inputs are rejected with the offending (n,c,i,j).
    pub fn spatial_softmax(&mut self, h: ValueId, temperature: S) -> Result<ValueId> {
        let hs = self.shape(h).to_vec();
        if hs.len() != 4 {
            return Err(Error::Config(format!(
                "spatial_softmax expects [N,C,H,W] input, got {hs:?}"
            )));
        }
        if !(temperature > S::ZERO) {
            return Err(Error::Config(format!(
                "spatial_softmax temperature must be > 0, got {temperature}"
            )));
        }
        let (n, c, hh, ww) = (hs[0], hs[1], hs[2], hs[3]);
        for (idx, v) in self.nodes[h.0].value.iter().enumerate() {
            if !v.is_finite() {
                let j = idx % ww;
                let i = (idx / ww) % hh;
                let ch = (idx / (ww * hh)) % c;
                let s = idx / (ww * hh * c);
                return Err(Error::Numeric(format!(
                    "spatial_softmax: non-finite activation {v} at (n={s}, c={ch}, i={i}, j={j})"
                )));
            }
        }
        let mut z = self.pool.get(self.nodes[h.0].value.len());
        kernels::spatial_softmax_forward(
            &self.nodes[h.0].value,
            n,
            c,
            hh * ww,
            temperature,
            &mut z,
        );
        let needs = self.needs(h);
        // input was scanned above; exp/normalize of finite inputs with a
        // positive sum cannot produce non-finite weights
        Ok(self.push(hs, z, needs, Op::SpatialSoftmax { h, temperature }))
    }

    /// Expected (row, col) position per channel under a spatial
    /// distribution, in raw grid-index units. Output [N, 2C], interleaved
    /// (row_1, col_1, row_2, col_2, ...).
    pub fn expected_points(&mut self, z: ValueId) -> Result<ValueId> {
        let zs = self.shape(z).to_vec();
        if zs.len() != 4 {
            return Err(Error::Config(format!(
                "expected_points expects [N,C,H,W] input, got {zs:?}"
            )));
        }
        let (n, c, h, w) = (zs[0], zs[1], zs[2], zs[3]);
        let mut out = self.pool.get(n * 2 * c);
        {
            let zv = &self.nodes[z.0].value;
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * h * w;
                    let mut er = S::ZERO;
                    let mut ec = S::ZERO;
                    for i in 0..h {
                        let mut row_sum = S::ZERO;
                        for j in 0..w {
                            let zz = zv[base + i * w + j];
                            row_sum += zz;
                            ec += S::from_f64(j as f64) * zz;
                        }
                        er += S::from_f64(i as f64) * row_sum;
                    }
                    out[s * 2 * c + 2 * ch] = er;
                    out[s * 2 * c + 2 * ch + 1] = ec;
                }
            }
        }
        let needs = self.needs(z);
        self.push_checked(
            "expected_points",
            vec![n, 2 * c],
            out,
            needs,
            Op::ExpectedPoints { z },
        )
    }

    /// Affine map of raw grid coordinates onto [-1, 1] per axis:
    /// x -> 2x/(L-1) - 1 for axis length L >= 2, exactly 0 when L == 1.
    pub fn map_points(&mut self, raw: ValueId, rows: usize, cols: usize) -> Result<ValueId> {
        let rs = self.shape(raw).to_vec();
        if rs.len() != 2 || rs[1] % 2 != 0 {
            return Err(Error::Config(format!(
                "map_points expects [N, 2C] raw coordinates, got {rs:?}"
            )));
        }
        let mut out = self.pool.get(self.nodes[raw.0].value.len());
        for (idx, (o, v)) in out
            .iter_mut()
            .zip(self.nodes[raw.0].value.iter())
            .enumerate()
        {
            let len = if idx % 2 == 0 { rows } else { cols };
            *o = if len <= 1 {
                S::ZERO
            } else {
                S::from_f64(2.0) * *v / S::from_f64((len - 1) as f64) - S::ONE
            };
        }
        let needs = self.needs(raw);
        self.push_checked("map_points", rs, out, needs, Op::MapPoints { raw, rows, cols })
    }

    /// Contiguous row range of a [N, ...] tensor as its own node.
    pub fn slice_rows(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || start + len > xs[0] {
            return Err(Error::Config(format!(
                "slice_rows {start}..{} out of bounds for shape {xs:?}",
                start + len
            )));
        }
        let inner: usize = xs[1..].iter().product();
        let mut out_shape = xs.clone();
        out_shape[0] = len;
        let mut y = self.pool.get(len * inner);
        y.copy_from_slice(&self.nodes[x.0].value[start * inner..(start + len) * inner]);
        let needs = self.needs(x);
        Ok(self.push(out_shape, y, needs, Op::SliceRows { x, start }))
    }

    pub fn reshape(&mut self, x: ValueId, shape: &[usize]) -> Result<ValueId> {
        if numel(shape) != self.nodes[x.0].value.len() {
            return Err(Error::Config(format!(
                "reshape from {:?} to {shape:?} changes element count",
                self.shape(x)
            )));
        }
        let y = self.copied(&self.nodes[x.0].value.clone());
        let needs = self.needs(x);
        Ok(self.push(shape.to_vec(), y, needs, Op::Reshape { x }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Config(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut y = self.pool.get(self.nodes[a.0].value.len());
        for ((o, x), v) in y
            .iter_mut()
            .zip(self.nodes[a.0].value.iter())
            .zip(self.nodes[b.0].value.iter())
        {
            *o = *x + *v;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push_checked("add", self.shape(a).to_vec(), y, needs, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Config(format!(
                "mul shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut y = self.pool.get(self.nodes[a.0].value.len());
        for ((o, x), v) in y
            .iter_mut()
            .zip(self.nodes[a.0].value.iter())
            .zip(self.nodes[b.0].value.iter())
        {
            *o = *x * *v;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push_checked("mul", self.shape(a).to_vec(), y, needs, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: ValueId, c: S) -> ValueId {
        let mut y = self.pool.get(self.nodes[x.0].value.len());
        for (o, v) in y.iter_mut().zip(self.nodes[x.0].value.iter()) {
            *o = *v * c;
        }
        let needs = self.needs(x);
        self.push(self.shape(x).to_vec(), y, needs, Op::Scale { x, c })
    }

    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let mut acc = S::ZERO;
        for v in &self.nodes[x.0].value {
            acc += *v;
        }
        let needs = self.needs(x);
        self.push(Vec::new(), vec![acc], needs, Op::SumAll { x })
    }

    /// Mean over rows of the squared Euclidean distance between predicted
    /// and target action rows.
    pub fn task_loss(&mut self, pred: ValueId, target: &Tensor<S>) -> Result<ValueId> {
        let ps = self.shape(pred).to_vec();
        if ps != target.shape() {
            return Err(Error::Usage(format!(
                "task_loss shape mismatch: predictions {ps:?} vs targets {:?}",
                target.shape()
            )));
        }
        if ps.is_empty() || ps[0] == 0 {
            return Err(Error::Usage("task_loss needs at least one sample".into()));
        }
        let rows = ps[0];
        let mut acc = S::ZERO;
        for (p, t) in self.nodes[pred.0].value.iter().zip(target.data().iter()) {
            let d = *p - *t;
            acc += d * d;
        }
        let v = acc / S::from_f64(rows as f64);
        let needs = self.needs(pred);
        self.push_checked(
            "task_loss",
            Vec::new(),
            vec![v],
            needs,
            Op::TaskLoss {
                pred,
                target: target.data().to_vec(),
                rows,
            },
        )
    }

    /// Mean binary cross-entropy of logits against {0,1} labels, computed
    /// in the log-sum-exp stable form.
    pub fn bce_loss(&mut self, logits: ValueId, labels: &[u8]) -> Result<ValueId> {
        let n = self.nodes[logits.0].value.len();
        if n == 0 || n != labels.len() {
            return Err(Error::Usage(format!(
                "bce_loss needs matching nonempty logits/labels, got {n} logits and {} labels",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|y| **y > 1) {
            return Err(Error::Usage(format!("bce_loss label {bad} outside {{0,1}}")));
        }
        let mut acc = S::ZERO;
        for (l, y) in self.nodes[logits.0].value.iter().zip(labels.iter()) {
            let l = *l;
            let y = S::from_f64(*y as f64);
            // max(l,0) - l*y + ln(1 + exp(-|l|))
            acc += l.maxs(S::ZERO) - l * y + (S::ONE + (-l.abs()).exp()).ln();
        }
        let v = acc / S::from_f64(n as f64);
        let needs = self.needs(logits);
        self.push_checked(
            "bce_loss",
            Vec::new(),
            vec![v],
            needs,
            Op::BceLoss {
                logits,
                labels: labels.to_vec(),
            },
        )
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradients land on every node that
    /// `needs_grad`; nodes not reached by the loss keep `None` (a zero
    /// contribution).
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if self.grads[loss.0].is_none() {
            let mut seed = self.pool.get(1);
            seed[0] = S::ONE;
            self.grads[loss.0] = Some(seed);
        }
        let mut pool = std::mem::take(&mut self.pool);
        let mut result = Ok(());
        for id in (0..self.nodes.len()).rev() {
            if self.grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let (nodes_before, nodes_rest) = self.nodes.split_at(id);
            let node = &nodes_rest[0];
            let (gin, gout_slice) = self.grads.split_at_mut(id);
            let dy = gout_slice[0].as_deref().expect("grad present");
            if let Err(e) = backward_op(node, nodes_before, gin, dy, &mut pool) {
                result = Err(e);
                break;
            }
        }
        self.pool = pool;
        result?;
        // Backward outputs must stay finite too.
        for (id, g) in self.grads.iter().enumerate() {
            if let Some(g) = g {
                for v in g {
                    if !v.is_finite() {
                        return Err(Error::Numeric(format!(
                            "backward: non-finite gradient {v} on node {id}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Add each parameter node's gradient into the owning parameter's
    /// gradient buffer. Parameters not reached by the loss contribute
    /// nothing. Call after `backward`.
    pub fn accumulate_param_grads(&self, params: &mut ParamSet<S>) {
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param { slot } = node.op {
                if let Some(g) = &self.grads[id] {
                    let p = params.get_mut(slot);
                    let dst = p
                        .value
                        .grad_mut()
                        .expect("parameters always carry a gradient buffer");
                    for (d, s) in dst.iter_mut().zip(g.iter()) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

fn slot<'g, S: Scalar>(
    gin: &'g mut [Option<Vec<S>>],
    pool: &mut BufPool<S>,
    vid: ValueId,
    len: usize,
) -> &'g mut [S] {
    let g = &mut gin[vid.0];
    if g.is_none() {
        *g = Some(pool.get_zeroed(len));
    }
    g.as_deref_mut().unwrap()
}

/// Like `slot`, but a freshly created buffer is NOT zeroed; the caller
/// must fully overwrite it when `fresh` comes back true (the common case
/// of a node with a single consumer).
fn slot_fresh<'g, S: Scalar>(
    gin: &'g mut [Option<Vec<S>>],
    pool: &mut BufPool<S>,
    vid: ValueId,
    len: usize,
) -> (&'g mut [S], bool) {
    let g = &mut gin[vid.0];
    let fresh = g.is_none();
    if fresh {
        *g = Some(pool.get(len));
    }
    (g.as_deref_mut().unwrap(), fresh)
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += *s;
    }
}

/// VJP of one node. `nodes` holds everything before the node (its inputs
/// live there), `gin` the gradient slots for those nodes, `dy` the
/// upstream gradient.
fn backward_op<S: Scalar>(
    node: &Node<S>,
    nodes: &[Node<S>],
    gin: &mut [Option<Vec<S>>],
    dy: &[S],
    pool: &mut BufPool<S>,
) -> Result<()> {
    let needs = |vid: ValueId| nodes[vid.0].needs_grad;
    let val = |vid: ValueId| nodes[vid.0].value.as_slice();
    let shp = |vid: ValueId| nodes[vid.0].shape.as_slice();

    match &node.op {
        Op::Leaf | Op::Param { .. } => {}
        Op::Conv2d { x, w, b, dims } => {
            let want_dx = needs(*x);
            if want_dx {
                slot(gin, pool, *x, val(*x).len());
            }
            slot(gin, pool, *w, val(*w).len());
            slot(gin, pool, *b, val(*b).len());
            let cw = dims.chunk_width::<S>();
            let mut cols = pool.get(dims.kk() * cw);
            let mut dy_perm = pool.get(dims.c_out * cw);
            let mut dcols = pool.get(if want_dx { dims.kk() * cw } else { 0 });
            let [gx, gw, gb] = gin
                .get_disjoint_mut([x.0, w.0, b.0])
                .expect("conv inputs are distinct nodes");
            kernels::conv2d_backward(
                val(*x),
                val(*w),
                *dims,
                dy,
                if want_dx { gx.as_deref_mut() } else { None },
                gw.as_deref_mut().unwrap(),
                gb.as_deref_mut().unwrap(),
                &mut cols,
                &mut dy_perm,
                &mut dcols,
            );
            pool.put(cols);
            pool.put(dy_perm);
            pool.put(dcols);
        }
        Op::Affine { x, w, b } => {
            let xs = shp(*x);
            let ws = shp(*w);
            let (n, d_in, d_out) = (xs[0], xs[1], ws[0]);
            let want_dx = needs(*x);
            if want_dx {
                slot(gin, pool, *x, val(*x).len());
            }
            slot(gin, pool, *w, val(*w).len());
            slot(gin, pool, *b, val(*b).len());
            let [gx, gw, gb] = gin
                .get_disjoint_mut([x.0, w.0, b.0])
                .expect("affine inputs are distinct nodes");
            kernels::affine_backward(
                val(*x),
                n,
                d_in,
                val(*w),
                d_out,
                dy,
                if want_dx { gx.as_deref_mut() } else { None },
                gw.as_deref_mut().unwrap(),
                gb.as_deref_mut().unwrap(),
            );
        }
        Op::Relu { x } => {
            if needs(*x) {
                let xv = val(*x);
                let (g, fresh) = slot_fresh(gin, pool, *x, xv.len());
                if fresh {
                    for ((gi, d), v) in g.iter_mut().zip(dy.iter()).zip(xv.iter()) {
                        *gi = if *v > S::ZERO { *d } else { S::ZERO };
                    }
                } else {
                    for ((gi, d), v) in g.iter_mut().zip(dy.iter()).zip(xv.iter()) {
                        if *v > S::ZERO {
                            *gi += *d;
                        }
                    }
                }
            }
        }
        Op::Sigmoid { x } => {
            if needs(*x) {
                let g = slot(gin, pool, *x, node.value.len());
                for ((gi, d), s) in g.iter_mut().zip(dy.iter()).zip(node.value.iter()) {
                    *gi += *d * *s * (S::ONE - *s);
                }
            }
        }
        Op::Concat { a, b, axis } => {
            let sa = shp(*a).to_vec();
            let sb = shp(*b).to_vec();
            let outer: usize = sa[..*axis].iter().product();
            let inner: usize = sa[*axis + 1..].iter().product();
            let (la, lb) = (sa[*axis] * inner, sb[*axis] * inner);
            if needs(*a) {
                let ga = slot(gin, pool, *a, outer * la);
                for o in 0..outer {
                    for t in 0..la {
                        ga[o * la + t] += dy[o * (la + lb) + t];
                    }
                }
            }
            if needs(*b) {
                let gb = slot(gin, pool, *b, outer * lb);
                for o in 0..outer {
                    for t in 0..lb {
                        gb[o * lb + t] += dy[o * (la + lb) + la + t];
                    }
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            saved_mean,
            saved_var,
            eps,
            stats_from_batch,
        } => {
            let xs = shp(*x).to_vec();
            let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
            let m = n * h * w;
            let minv = S::ONE / S::from_f64(m as f64);
            let xv = val(*x);
            let gv = val(*gamma);
            let x_len = xv.len();
            let want_dx = needs(*x);
            {
                let dg = slot(gin, pool, *gamma, c);
                for ch in 0..c {
                    let inv_s = S::ONE / (saved_var[ch] + *eps).sqrt();
                    let mu = saved_mean[ch];
                    let mut acc = S::ZERO;
                    for s in 0..n {
                        let base = (s * c + ch) * h * w;
                        for t in 0..h * w {
                            acc += dy[base + t] * (xv[base + t] - mu) * inv_s;
                        }
                    }
                    dg[ch] += acc;
                }
            }
            {
                let db = slot(gin, pool, *beta, c);
                for ch in 0..c {
                    let mut acc = S::ZERO;
                    for s in 0..n {
                        let base = (s * c + ch) * h * w;
                        for t in 0..h * w {
                            acc += dy[base + t];
                        }
                    }
                    db[ch] += acc;
                }
            }
            if want_dx {
                let (dx, fresh) = slot_fresh(gin, pool, *x, x_len);
                for ch in 0..c {
                    let inv_s = S::ONE / (saved_var[ch] + *eps).sqrt();
                    let mu = saved_mean[ch];
                    let g = gv[ch];
                    if !*stats_from_batch {
                        // running statistics are constants here
                        for s in 0..n {
                            let base = (s * c + ch) * h * w;
                            for t in 0..h * w {
                                let v = dy[base + t] * g * inv_s;
                                if fresh {
                                    dx[base + t] = v;
                                } else {
                                    dx[base + t] += v;
                                }
                            }
                        }
                        continue;
                    }
                    // Reduce the two channel sums needed by the
                    // differentiation through the batch statistics.
                    let mut sum_dxhat = [S::ZERO; 4];
                    let mut sum_dxhat_xc = [S::ZERO; 4];
                    for s in 0..n {
                        let base = (s * c + ch) * h * w;
                        let dys = &dy[base..base + h * w];
                        let xvs = &xv[base..base + h * w];
                        let mut t = 0;
                        while t + 4 <= dys.len() {
                            for l in 0..4 {
                                let dxhat = dys[t + l] * g;
                                sum_dxhat[l] += dxhat;
                                sum_dxhat_xc[l] += dxhat * (xvs[t + l] - mu);
                            }
                            t += 4;
                        }
                        while t < dys.len() {
                            let dxhat = dys[t] * g;
                            sum_dxhat[0] += dxhat;
                            sum_dxhat_xc[0] += dxhat * (xvs[t] - mu);
                            t += 1;
                        }
                    }
                    let sum_dxhat = sum_dxhat[0] + sum_dxhat[1] + sum_dxhat[2] + sum_dxhat[3];
                    let sum_dxhat_xc =
                        sum_dxhat_xc[0] + sum_dxhat_xc[1] + sum_dxhat_xc[2] + sum_dxhat_xc[3];
                    let dvar = sum_dxhat_xc * S::from_f64(-0.5) * inv_s * inv_s * inv_s;
                    let dmean = -sum_dxhat * inv_s;
                    for s in 0..n {
                        let base = (s * c + ch) * h * w;
                        for t in 0..h * w {
                            let dxhat = dy[base + t] * g;
                            let xc = xv[base + t] - mu;
                            let v = dxhat * inv_s
                                + dvar * S::from_f64(2.0) * xc * minv
                                + dmean * minv;
                            if fresh {
                                dx[base + t] = v;
                            } else {
                                dx[base + t] += v;
                            }
                        }
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if needs(*x) {
                let g = slot(gin, pool, *x, mask.len());
                for ((gi, d), m) in g.iter_mut().zip(dy.iter()).zip(mask.iter()) {
                    *gi += *d * *m;
                }
            }
        }
        Op::SpatialSoftmax { h, temperature } => {
            if needs(*h) {
                let hs = shp(*h).to_vec();
                let (n, c, hh, ww) = (hs[0], hs[1], hs[2], hs[3]);
                let (g, fresh) = slot_fresh(gin, pool, *h, n * c * hh * ww);
                kernels::spatial_softmax_backward(
                    &node.value,
                    n,
                    c,
                    hh * ww,
                    *temperature,
                    dy,
                    g,
                    !fresh,
                );
            }
        }
        Op::ExpectedPoints { z } => {
            if needs(*z) {
                let zs = shp(*z).to_vec();
                let (n, c, h, w) = (zs[0], zs[1], zs[2], zs[3]);
                let (g, fresh) = slot_fresh(gin, pool, *z, n * c * h * w);
                for s in 0..n {
                    for ch in 0..c {
                        let dr = dy[s * 2 * c + 2 * ch];
                        let dc = dy[s * 2 * c + 2 * ch + 1];
                        let base = (s * c + ch) * h * w;
                        for i in 0..h {
                            let row = S::from_f64(i as f64) * dr;
                            for j in 0..w {
                                let v = row + dc * S::from_f64(j as f64);
                                if fresh {
                                    g[base + i * w + j] = v;
                                } else {
                                    g[base + i * w + j] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::MapPoints { raw, rows, cols } => {
            if needs(*raw) {
                let len = node.value.len();
                let g = slot(gin, pool, *raw, len);
                for (idx, (gi, d)) in g.iter_mut().zip(dy.iter()).enumerate() {
                    let l = if idx % 2 == 0 { *rows } else { *cols };
                    if l > 1 {
                        *gi += *d * S::from_f64(2.0 / (l - 1) as f64);
                    }
                }
            }
        }
        Op::Reshape { x } => {
            if needs(*x) {
                let g = slot(gin, pool, *x, dy.len());
                add_into(g, dy);
            }
        }
        Op::SliceRows { x, start } => {
            if needs(*x) {
                let xs = shp(*x);
                let inner: usize = xs[1..].iter().product();
                let len = val(*x).len();
                let g = slot(gin, pool, *x, len);
                add_into(&mut g[*start * inner..*start * inner + dy.len()], dy);
            }
        }
        Op::Add { a, b } => {
            for vid in [a, b] {
                if needs(*vid) {
                    let g = slot(gin, pool, *vid, dy.len());
                    add_into(g, dy);
                }
            }
        }
        Op::Mul { a, b } => {
            if needs(*a) {
                let bv = val(*b);
                let dy_len = dy.len();
                let g = slot(gin, pool, *a, dy_len);
                for ((gi, d), v) in g.iter_mut().zip(dy.iter()).zip(bv.iter()) {
                    *gi += *d * *v;
                }
            }
            if needs(*b) {
                let av = val(*a);
                let g = slot(gin, pool, *b, dy.len());
                for ((gi, d), v) in g.iter_mut().zip(dy.iter()).zip(av.iter()) {
                    *gi += *d * *v;
                }
            }
        }
        Op::Scale { x, c } => {
            if needs(*x) {
                let g = slot(gin, pool, *x, dy.len());
                for (gi, d) in g.iter_mut().zip(dy.iter()) {
                    *gi += *d * *c;
                }
            }
        }
        Op::SumAll { x } => {
            if needs(*x) {
                let len = val(*x).len();
                let g = slot(gin, pool, *x, len);
                let d = dy[0];
                for gi in g.iter_mut() {
                    *gi += d;
                }
            }
        }
        Op::TaskLoss { pred, target, rows } => {
            if needs(*pred) {
                let pv = val(*pred);
                let g = slot(gin, pool, *pred, pv.len());
                let scale = dy[0] * S::from_f64(2.0 / *rows as f64);
                for ((gi, p), t) in g.iter_mut().zip(pv.iter()).zip(target.iter()) {
                    *gi += scale * (*p - *t);
                }
            }
        }
        Op::BceLoss { logits, labels } => {
            if needs(*logits) {
                let lv = val(*logits);
                let g = slot(gin, pool, *logits, lv.len());
                let scale = dy[0] / S::from_f64(labels.len() as f64);
                for ((gi, l), y) in g.iter_mut().zip(lv.iter()).zip(labels.iter()) {
                    *gi += scale * (kernels::sigmoid(*l) - S::from_f64(*y as f64));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t<S: Scalar>(shape: &[usize], data: &[f64]) -> Tensor<S> {
        Tensor::from_vec(shape, data.iter().map(|v| S::from_f64(*v)).collect()).unwrap()
    }

    #[test]
    fn square_loss_gradient_is_2x() {
        // loss = x^2 at x = 3 -> grad 6
        let mut tape = Tape::<f64>::new();
        let x = tape.input_grad(&t(&[1], &[3.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn relu_sum_gradient_is_indicator() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input_grad(&t(&[2], &[-1.0, 2.0]));
        let r = tape.relu(x);
        let loss = tape.sum_all(r);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0]);
        assert_eq!(tape.value(r), &[0.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input_grad(&t(&[2], &[1.0, 2.0]));
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn grads_accumulate_across_backward_calls() {
        let mut params = ParamSet::<f64>::new();
        let slot = params.add("trunk/w", t(&[1], &[2.0])).unwrap();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let w = tape.param(&params, slot);
            let sq = tape.mul(w, w).unwrap();
            let loss = tape.sum_all(sq);
            tape.backward(loss).unwrap();
            tape.accumulate_param_grads(&mut params);
        }
        // two backward passes of d(w^2)/dw = 4 each
        assert_eq!(params.get(slot).value.grad().unwrap(), &[8.0]);
    }

    #[test]
    fn unreached_parameters_get_zero_contribution() {
        let mut params = ParamSet::<f64>::new();
        let used = params.add("trunk/a", t(&[1], &[2.0])).unwrap();
        let unused = params.add("classifier/b", t(&[1], &[5.0])).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&params, used);
        let loss = tape.sum_all(w);
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut params);
        assert_eq!(params.get(used).value.grad().unwrap(), &[1.0]);
        assert_eq!(params.get(unused).value.grad().unwrap(), &[0.0]);
    }

    #[test]
    fn reset_reuses_buffers_and_preserves_results() {
        let mut tape = Tape::<f32>::new();
        let mut out = Vec::new();
        for round in 0..3 {
            tape.reset();
            let x = tape.input_grad(&t(&[4], &[0.5 + round as f64, -1.0, 2.0, 0.25]));
            let sq = tape.mul(x, x).unwrap();
            let loss = tape.sum_all(sq);
            tape.backward(loss).unwrap();
            out.push((tape.scalar_value(loss), tape.grad(x).unwrap().to_vec()));
        }
        // same computation on a fresh tape gives the same bits
        for (round, (loss, grad)) in out.iter().enumerate() {
            let mut fresh = Tape::<f32>::new();
            let x = fresh.input_grad(&t(&[4], &[0.5 + round as f64, -1.0, 2.0, 0.25]));
            let sq = fresh.mul(x, x).unwrap();
            let l = fresh.sum_all(sq);
            fresh.backward(l).unwrap();
            assert_eq!(*loss, fresh.scalar_value(l));
            assert_eq!(grad, fresh.grad(x).unwrap());
        }
    }

    #[test]
    fn linearity_of_backward() {
        // grad(a*l1 + b*l2) == a*grad(l1) + b*grad(l2), 64-bit, 1e-10.
        let x0 = t::<f64>(&[4], &[0.3, -0.7, 1.2, 0.05]);
        let (a, b) = (1.7, -0.6);
        let grad_of = |mode: u8| -> Vec<f64> {
            let mut tape = Tape::<f64>::new();
            let x = tape.input_grad(&x0);
            let sq = tape.mul(x, x).unwrap();
            let l1 = tape.sum_all(sq);
            let r = tape.relu(x);
            let l2 = tape.sum_all(r);
            let loss = match mode {
                0 => tape.scale(l1, 1.0),
                1 => tape.scale(l2, 1.0),
                _ => {
                    let sa = tape.scale(l1, a);
                    let sb = tape.scale(l2, b);
                    tape.add(sa, sb).unwrap()
                }
            };
            tape.backward(loss).unwrap();
            tape.grad(x).unwrap().to_vec()
        };
        let g1 = grad_of(0);
        let g2 = grad_of(1);
        let g = grad_of(2);
        for i in 0..4 {
            assert!((g[i] - (a * g1[i] + b * g2[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn concat_examples() {
        let mut tape = Tape::<f32>::new();
        let a = tape.input(&t(&[2], &[1.0, 2.0]));
        let b = tape.input(&t(&[1], &[3.0]));
        let c = tape.concat(a, b, 0).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0]);
        let bad = tape.concat(a, b, 1);
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn concat_axis1_backward_splits() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input_grad(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.input_grad(&t(&[2, 1], &[5.0, 6.0]));
        let c = tape.concat(a, b, 1).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let s = tape.sum_all(c);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0; 4]);
        assert_eq!(tape.grad(b).unwrap(), &[1.0; 2]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&t(&[1], &[0.0]));
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s), &[0.5]);
    }

    #[test]
    fn batch_norm_train_standardizes_per_channel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&t(&[1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0]));
        let gamma = tape.input(&t(&[2], &[1.0, 1.0]));
        let beta = tape.input(&t(&[2], &[0.0, 0.0]));
        let mut running = BnRunning::new(2);
        let y = tape
            .batch_norm(x, gamma, beta, &mut running, Mode::Train)
            .unwrap();
        let v = tape.value(y);
        for ch in 0..2 {
            let vals = &v[ch * 4..(ch + 1) * 4];
            let mean: f64 = vals.iter().sum::<f64>() / 4.0;
            let var: f64 = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            // variance slightly below 1 because of the eps clamp
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
        assert_eq!(running.count, 1);
    }

    #[test]
    fn batch_norm_gamma_zero_yields_beta() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&t(&[1, 1, 2, 2], &[5.0, -3.0, 2.0, 0.5]));
        let gamma = tape.input(&t(&[1], &[0.0]));
        let beta = tape.input(&t(&[1], &[0.25]));
        let mut running = BnRunning::new(1);
        let y = tape
            .batch_norm(x, gamma, beta, &mut running, Mode::Train)
            .unwrap();
        for v in tape.value(y) {
            assert_eq!(*v, 0.25);
        }
    }

    #[test]
    fn batch_norm_constant_channel_clamped_by_eps() {
        // Constant channel: variance 0, eps keeps the output finite and
        // equal to beta (the normalized value is exactly 0).
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&t(&[1, 1, 2, 2], &[3.0, 3.0, 3.0, 3.0]));
        let gamma = tape.input(&t(&[1], &[1.5]));
        let beta = tape.input(&t(&[1], &[-0.5]));
        let mut running = BnRunning::new(1);
        let y = tape
            .batch_norm(x, gamma, beta, &mut running, Mode::Train)
            .unwrap();
        for v in tape.value(y) {
            // gamma * (x - mean)/sqrt(0 + eps) + beta with x == mean
            assert_eq!(*v, -0.5);
            assert!(v.is_finite());
        }
    }

    #[test]
    fn batch_norm_eval_without_stats_is_state_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let gamma = tape.input(&t(&[1], &[1.0]));
        let beta = tape.input(&t(&[1], &[0.0]));
        let mut running = BnRunning::new(1);
        let err = tape
            .batch_norm(x, gamma, beta, &mut running, Mode::Eval)
            .unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = Rng::new(1);
        let x0 = t::<f64>(&[4], &[1.0, -2.0, 3.0, 4.0]);
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&x0);
        let same_p0 = tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(same_p0, x);
        let same_eval = tape.dropout(x, 0.7, Mode::Eval, &mut rng).unwrap();
        assert_eq!(same_eval, x);
        assert!(matches!(
            tape.dropout(x, 1.0, Mode::Train, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_monte_carlo_mean_preserved() {
        // E[dropout(x)] == x; averaging 10^4 draws puts the sample mean
        // within 3 standard errors of x.
        let x0 = t::<f64>(&[2], &[1.0, -2.0]);
        let p = 0.5;
        let draws = 10_000usize;
        let mut rng = Rng::new(99);
        let mut acc = [0.0f64; 2];
        let mut tape = Tape::<f64>::new();
        for _ in 0..draws {
            tape.reset();
            let x = tape.input(&x0);
            let d = tape.dropout(x, p, Mode::Train, &mut rng).unwrap();
            let v = tape.value(d);
            acc[0] += v[0];
            acc[1] += v[1];
        }
        for (i, want) in [1.0f64, -2.0].iter().enumerate() {
            let mean = acc[i] / draws as f64;
            // per-draw std of x*mask/(1-p) is |x| at p = 0.5
            let se = want.abs() / (draws as f64).sqrt();
            assert!(
                (mean - want).abs() < 3.0 * se,
                "mean {mean} vs {want} (se {se})"
            );
        }
    }

    #[test]
    fn task_loss_examples() {
        let mut tape = Tape::<f64>::new();
        let same = tape.input(&t(&[1, 2], &[3.0, 4.0]));
        let l0 = tape.task_loss(same, &t(&[1, 2], &[3.0, 4.0])).unwrap();
        assert_eq!(tape.scalar_value(l0), 0.0);

        let pred = tape.input(&t(&[1, 2], &[0.0, 0.0]));
        let l1 = tape.task_loss(pred, &t(&[1, 2], &[3.0, 4.0])).unwrap();
        assert_eq!(tape.scalar_value(l1), 25.0); // squared Euclidean

        // two rows with per-row squared distances 2 and 4 -> mean 3
        let p2 = tape.input(&t(&[2, 2], &[0.0, 0.0, 0.0, 0.0]));
        let l2 = tape
            .task_loss(p2, &t(&[2, 2], &[1.0, 1.0, 2.0, 0.0]))
            .unwrap();
        assert_eq!(tape.scalar_value(l2), 3.0);
    }

    #[test]
    fn bce_loss_examples() {
        let mut tape = Tape::<f64>::new();
        let l0 = tape.input(&t(&[1], &[0.0]));
        let v0 = tape.bce_loss(l0, &[1]).unwrap();
        assert!((tape.scalar_value(v0) - core::f64::consts::LN_2).abs() < 1e-12);

        let l1 = tape.input(&t(&[1], &[20.0]));
        let v1 = tape.bce_loss(l1, &[1]).unwrap();
        let got = tape.scalar_value(v1);
        assert!(got.is_finite() && got < 1e-8, "{got}");

        let l2 = tape.input(&t(&[2], &[0.0, 0.0]));
        let v2 = tape.bce_loss(l2, &[1, 0]).unwrap();
        assert!((tape.scalar_value(v2) - core::f64::consts::LN_2).abs() < 1e-12);

        let bad = tape.bce_loss(l2, &[1, 2]);
        assert!(matches!(bad, Err(Error::Usage(_))));
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(&Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.input(&Tensor::zeros(&[3, 1, 3, 3])); // wrong in-channels
        let b = tape.input(&Tensor::zeros(&[3]));
        let err = tape.conv2d(x, w, b, 1, 0).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("[1, 2, 4, 4]") && msg.contains("[3, 1, 3, 3]"),
            "{msg}"
        );
    }

    #[test]
    fn forward_is_deterministic_bitwise() {
        let run = || -> Vec<f32> {
            let mut rng = Rng::new(7);
            let x0 = Tensor::from_vec(
                &[1, 2, 5, 5],
                (0..50).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
            )
            .unwrap();
            let w0 = Tensor::from_vec(
                &[3, 2, 3, 3],
                (0..54).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
            )
            .unwrap();
            let mut tape = Tape::<f32>::new();
            let x = tape.input(&x0);
            let w = tape.input(&w0);
            let b = tape.input(&Tensor::zeros(&[3]));
            let y = tape.conv2d(x, w, b, 2, 1).unwrap();
            let r = tape.relu(y);
            tape.value(r).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn spatial_softmax_names_bad_index() {
        let mut tape = Tape::<f32>::new();
        let mut data = vec![0.0f32; 2 * 3 * 2 * 2];
        data[1 * 3 * 4 + 2 * 4 + 1 * 2 + 1] = f32::NAN; // n=1,c=2,i=1,j=1
        let h = tape.push(vec![2, 3, 2, 2], data, false, Op::Leaf);
        let err = tape.spatial_softmax(h, 1.0).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("n=1") && msg.contains("c=2") && msg.contains("i=1") && msg.contains("j=1"),
            "{msg}"
        );
    }
}
