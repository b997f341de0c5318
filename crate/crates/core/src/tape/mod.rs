//! Reverse-mode automatic differentiation over rank-4 tensors.
//!
//! A [`Tape`] records operations in topological order; each node owns its
//! output tensor and a backward rule. [`Tape::backward`] walks the record
//! once in reverse, accumulating cotangents. Parameters are registered by
//! name so the optimizer can fetch their gradients afterwards.
//!
//! One training step owns one tape (single writer). Forward builders are
//! pure given their inputs, so read-only inference may share a model
//! across threads by giving each its own tape.

mod check;
mod conv;
mod elem;
mod fftops;
mod loss;
mod norm;
mod resample;

pub use check::{finite_diff_check, GradCheckResult};

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Axis, CoreError, CoreResult};
use crate::fft::half_width;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(u32);

impl NodeId {
    #[inline]
    fn ix(self) -> usize {
        self.0 as usize
    }
}

/// Whether batch statistics are computed (Train) or running statistics are
/// used (Eval). Train mode mutates the running buffers passed to
/// `batch_norm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<T>,
        inv_std: Vec<T>,
        /// true when mean/inv_std were computed from `x` (train mode).
        batch_stats: bool,
    },
    Relu {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    /// Channel gate: `[N,C,1,1]` broadcast-multiplied against `[N,C,H,W]`.
    MulGate {
        gate: NodeId,
        x: NodeId,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    ConcatChannels {
        a: NodeId,
        b: NodeId,
    },
    NarrowChannels {
        x: NodeId,
        start: usize,
    },
    SumAll {
        x: NodeId,
    },
    Scale {
        x: NodeId,
        k: T,
    },
    UpsampleNearest2 {
        x: NodeId,
    },
    PixelShuffle2 {
        x: NodeId,
    },
    SoftmaxChannels {
        x: NodeId,
    },
    CarafeReassemble {
        x: NodeId,
        kernels: NodeId,
        k_up: usize,
    },
    Rfft2 {
        x: NodeId,
    },
    Irfft2 {
        z: NodeId,
        source_width: usize,
    },
    FocalLossSum {
        logits: NodeId,
        targets: Vec<i8>,
        alpha: f64,
        gamma: f64,
    },
    SmoothL1Sum {
        pred: NodeId,
        targets: Vec<T>,
        mask: Vec<bool>,
        beta: f64,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, NodeId)>,
    param_names: BTreeSet<String>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            param_names: BTreeSet::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        value.debug_check_finite("tape op output");
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        id
    }

    #[inline]
    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.ix()].requires_grad
    }

    #[inline]
    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.ix()].value
    }

    /// Gradient of a node, populated by `backward`.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.ix()].value.grad.as_deref()
    }

    /// Registered (name, node) pairs in registration order.
    pub fn param_nodes(&self) -> &[(String, NodeId)] {
        &self.params
    }

    pub fn param_grad(&self, name: &str) -> Option<&[T]> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, id)| self.grad(*id))
    }

    /// A constant input; no gradient flows into it.
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A named differentiable input. Registering the same name again with
    /// the same values returns the existing node, so modules shared across
    /// pyramid levels accumulate gradients through one node; a name reused
    /// with different data is a collision and is rejected.
    pub fn param(&mut self, name: &str, value: &Tensor<T>) -> CoreResult<NodeId> {
        if !self.param_names.insert(name.to_string()) {
            let (_, id) = self
                .params
                .iter()
                .find(|(n, _)| n == name)
                .expect("name set and list agree");
            let existing = &self.nodes[id.ix()].value;
            if existing.shape() != value.shape() || existing.data() != value.data() {
                return Err(CoreError::DuplicateParam {
                    name: name.to_string(),
                });
            }
            return Ok(*id);
        }
        let id = self.push(value.clone(), Op::Leaf, true);
        self.params.push((name.to_string(), id));
        Ok(id)
    }

    // ── forward builders ────────────────────────────────────────────

    /// 2-D convolution (cross-correlation), zero padding, square odd
    /// kernel, shared across the batch.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> CoreResult<NodeId> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if ws[2] != ws[3] {
            return Err(CoreError::InvalidArg {
                op: "conv2d",
                what: alloc::format!("kernel must be square, got {}x{}", ws[2], ws[3]),
            });
        }
        let k = ws[2];
        if k % 2 == 0 {
            return Err(CoreError::InvalidArg {
                op: "conv2d",
                what: alloc::format!("kernel size must be odd, got {k}"),
            });
        }
        if stride == 0 {
            return Err(CoreError::InvalidArg {
                op: "conv2d",
                what: "stride must be >= 1".into(),
            });
        }
        if ws[1] != xs[1] {
            return Err(CoreError::DimMismatch {
                op: "conv2d",
                axis: Axis::Channel,
                expected: xs[1],
                got: ws[1],
            });
        }
        if xs[2] + 2 * pad < k {
            return Err(CoreError::DimMismatch {
                op: "conv2d",
                axis: Axis::Height,
                expected: k,
                got: xs[2] + 2 * pad,
            });
        }
        if xs[3] + 2 * pad < k {
            return Err(CoreError::DimMismatch {
                op: "conv2d",
                axis: Axis::Width,
                expected: k,
                got: xs[3] + 2 * pad,
            });
        }
        if let Some(bid) = b {
            let bs = self.value(bid).shape();
            if bs != [1, ws[0], 1, 1] {
                return Err(CoreError::DimMismatch {
                    op: "conv2d",
                    axis: Axis::Channel,
                    expected: ws[0],
                    got: bs[1],
                });
            }
        }
        let out = conv::forward(
            self.value(x),
            self.value(w),
            b.map(|bid| self.value(bid)),
            stride,
            pad,
        );
        let rg = self.rg(x) || self.rg(w) || b.map(|bid| self.rg(bid)).unwrap_or(false);
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    /// Per-channel batch normalization over (N, H, W).
    ///
    /// Train mode computes batch statistics and, when `running` is given,
    /// folds them into the running buffers (`[1,C,1,1]` tensors) with the
    /// usual unbiased-variance convention. Eval mode requires `running`.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: Option<(&mut Tensor<T>, &mut Tensor<T>)>,
        momentum: T,
        eps: T,
        mode: Mode,
    ) -> CoreResult<NodeId> {
        let xs = self.value(x).shape();
        let c = xs[1];
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            let s = self.value(id).shape();
            if s != [1, c, 1, 1] {
                let _ = name;
                return Err(CoreError::DimMismatch {
                    op: "batch_norm",
                    axis: Axis::Channel,
                    expected: c,
                    got: s[1],
                });
            }
        }
        if eps <= T::ZERO {
            return Err(CoreError::InvalidArg {
                op: "batch_norm",
                what: "eps must be positive".into(),
            });
        }
        let (out, mean, inv_std, batch_stats) = norm::forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running,
            momentum,
            eps,
            mode,
        )?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    /// max(x, 0). The subgradient at exactly 0 is 1, so blocks whose
    /// pre-activations start at exactly zero (the zero-initialized
    /// spectral unit) can move off that point.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(T::ZERO));
        let rg = self.rg(x);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(crate::scalar::sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid { x }, rg)
    }

    /// Elementwise sum; shapes must match exactly (no broadcasting).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> CoreResult<NodeId> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            let axis = [Axis::Batch, Axis::Channel, Axis::Height, Axis::Width]
                .into_iter()
                .zip(sa.iter().zip(sb.iter()))
                .find(|(_, (x, y))| x != y)
                .map(|(ax, _)| ax)
                .unwrap_or(Axis::Batch);
            return Err(CoreError::DimMismatch {
                op: "add",
                axis,
                expected: sa[0].max(sb[0]),
                got: 0,
            }
            .normalize_add(sa, sb, axis));
        }
        let out = elem::add(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Channel-attention broadcast multiply: `gate [N,C,1,1] * x [N,C,H,W]`.
    /// Any other broadcast pattern is rejected.
    pub fn mul_gate(&mut self, gate: NodeId, x: NodeId) -> CoreResult<NodeId> {
        let gs = self.value(gate).shape();
        let xs = self.value(x).shape();
        if gs[2] != 1 || gs[3] != 1 || gs[0] != xs[0] || gs[1] != xs[1] {
            return Err(CoreError::BroadcastUnsupported { lhs: gs, rhs: xs });
        }
        let out = elem::mul_gate(self.value(gate), self.value(x));
        let rg = self.rg(gate) || self.rg(x);
        Ok(self.push(out, Op::MulGate { gate, x }, rg))
    }

    /// Mean over the spatial plane: `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> CoreResult<NodeId> {
        let xs = self.value(x).shape();
        if xs[2] * xs[3] == 0 {
            return Err(CoreError::EmptySpatial {
                op: "global_avg_pool",
            });
        }
        let out = elem::global_avg_pool(self.value(x));
        let rg = self.rg(x);
        Ok(self.push(out, Op::GlobalAvgPool { x }, rg))
    }

    /// Join along the channel axis; N, H, W must agree.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> CoreResult<NodeId> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        for (axis, i) in [(Axis::Batch, 0), (Axis::Height, 2), (Axis::Width, 3)] {
            if sa[i] != sb[i] {
                return Err(CoreError::DimMismatch {
                    op: "concat_channels",
                    axis,
                    expected: sa[i],
                    got: sb[i],
                });
            }
        }
        let out = elem::concat_channels(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatChannels { a, b }, rg))
    }

    /// Channels `[start, start+len)` of `x`.
    pub fn narrow_channels(&mut self, x: NodeId, start: usize, len: usize) -> CoreResult<NodeId> {
        let xs = self.value(x).shape();
        if len == 0 || start + len > xs[1] {
            return Err(CoreError::InvalidArg {
                op: "narrow_channels",
                what: alloc::format!(
                    "range [{start}, {}) out of {} channels",
                    start + len,
                    xs[1]
                ),
            });
        }
        let out = elem::narrow_channels(self.value(x), start, len);
        let rg = self.rg(x);
        Ok(self.push(out, Op::NarrowChannels { x, start }, rg))
    }

    /// Split at channel `at`, returning the `[0, at)` and `[at, C)` halves.
    /// `split(concat(a, b), a.c())` round-trips bit-exactly.
    pub fn split_channels(&mut self, x: NodeId, at: usize) -> CoreResult<(NodeId, NodeId)> {
        let c = self.value(x).shape()[1];
        if at == 0 || at >= c {
            return Err(CoreError::InvalidArg {
                op: "split_channels",
                what: alloc::format!("split point {at} outside (0, {c})"),
            });
        }
        let lo = self.narrow_channels(x, 0, at)?;
        let hi = self.narrow_channels(x, at, c - at)?;
        Ok((lo, hi))
    }

    /// Sum of all elements, as a `[1,1,1,1]` scalar node.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, rg)
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: NodeId, k: T) -> NodeId {
        let out = self.value(x).map(|v| v * k);
        let rg = self.rg(x);
        self.push(out, Op::Scale { x, k }, rg)
    }

    /// Nearest-neighbor 2x spatial upsampling.
    pub fn upsample_nearest2(&mut self, x: NodeId) -> NodeId {
        let out = resample::upsample_nearest2(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::UpsampleNearest2 { x }, rg)
    }

    /// `[N, 4C, H, W] -> [N, C, 2H, 2W]`; input channel `c*4 + dy*2 + dx`
    /// lands at output `(c, 2y+dy, 2x+dx)`.
    pub fn pixel_shuffle2(&mut self, x: NodeId) -> CoreResult<NodeId> {
        let xs = self.value(x).shape();
        if xs[1] % 4 != 0 {
            return Err(CoreError::DimMismatch {
                op: "pixel_shuffle2",
                axis: Axis::Channel,
                expected: 4,
                got: xs[1],
            });
        }
        let out = resample::pixel_shuffle2(self.value(x));
        let rg = self.rg(x);
        Ok(self.push(out, Op::PixelShuffle2 { x }, rg))
    }

    /// Softmax across the channel axis at every (n, y, x) location.
    pub fn softmax_channels(&mut self, x: NodeId) -> NodeId {
        let out = resample::softmax_channels(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::SoftmaxChannels { x }, rg)
    }

    /// Content-aware reassembly: every output value of the 2x-upsampled map
    /// is a `k_up x k_up` weighted sum of inputs around its source location,
    /// with per-location weights from `kernels [N, k_up^2, 2H, 2W]`.
    pub fn carafe_reassemble(
        &mut self,
        x: NodeId,
        kernels: NodeId,
        k_up: usize,
    ) -> CoreResult<NodeId> {
        let xs = self.value(x).shape();
        let ks = self.value(kernels).shape();
        if k_up % 2 == 0 {
            return Err(CoreError::InvalidArg {
                op: "carafe_reassemble",
                what: "k_up must be odd".into(),
            });
        }
        if ks != [xs[0], k_up * k_up, xs[2] * 2, xs[3] * 2] {
            return Err(CoreError::DimMismatch {
                op: "carafe_reassemble",
                axis: Axis::Channel,
                expected: k_up * k_up,
                got: ks[1],
            });
        }
        let out = resample::carafe_reassemble(self.value(x), self.value(kernels), k_up);
        let rg = self.rg(x) || self.rg(kernels);
        Ok(self.push(out, Op::CarafeReassemble { x, kernels, k_up }, rg))
    }

    /// Real 2-D FFT of every (n, c) slice, stacked channel-wise:
    /// `[N, C, H, W] -> [N, 2C, H, floor(W/2)+1]` with real parts in
    /// channels `0..C` and imaginary parts in `C..2C`.
    pub fn rfft2(&mut self, x: NodeId) -> CoreResult<NodeId> {
        let xs = self.value(x).shape();
        if xs[2] == 0 {
            return Err(CoreError::UnsupportedFftSize {
                axis: Axis::Height,
                size: 0,
            });
        }
        if xs[3] == 0 {
            return Err(CoreError::UnsupportedFftSize {
                axis: Axis::Width,
                size: 0,
            });
        }
        let out = fftops::rfft2_stacked(self.value(x));
        let rg = self.rg(x);
        Ok(self.push(out, Op::Rfft2 { x }, rg))
    }

    /// Inverse of [`Tape::rfft2`]: `[N, 2C, H, Wf] -> [N, C, H, source_width]`.
    pub fn irfft2(&mut self, z: NodeId, source_width: usize) -> CoreResult<NodeId> {
        let zs = self.value(z).shape();
        if zs[1] % 2 != 0 {
            return Err(CoreError::DimMismatch {
                op: "irfft2",
                axis: Axis::Channel,
                expected: 2,
                got: zs[1],
            });
        }
        if half_width(source_width) != zs[3] {
            return Err(CoreError::InconsistentSourceWidth {
                source_width,
                stored: zs[3],
            });
        }
        let out = fftops::irfft2_stacked(self.value(z), source_width);
        let rg = self.rg(z);
        Ok(self.push(out, Op::Irfft2 { z, source_width }, rg))
    }

    /// Sum of sigmoid focal losses over all entries whose target is not
    /// ignore (-1). Targets use the same flat layout as `logits`.
    pub fn focal_loss_sum(
        &mut self,
        logits: NodeId,
        targets: Vec<i8>,
        alpha: f64,
        gamma: f64,
    ) -> CoreResult<NodeId> {
        if targets.len() != self.value(logits).numel() {
            return Err(CoreError::ElementCount {
                expected: self.value(logits).numel(),
                got: targets.len(),
            });
        }
        let s = loss::focal_forward(self.value(logits), &targets, alpha, gamma);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(s),
            Op::FocalLossSum {
                logits,
                targets,
                alpha,
                gamma,
            },
            rg,
        ))
    }

    /// Sum of smooth-L1 losses over masked entries.
    pub fn smooth_l1_sum(
        &mut self,
        pred: NodeId,
        targets: Vec<T>,
        mask: Vec<bool>,
        beta: f64,
    ) -> CoreResult<NodeId> {
        let n = self.value(pred).numel();
        if targets.len() != n || mask.len() != n {
            return Err(CoreError::ElementCount {
                expected: n,
                got: targets.len(),
            });
        }
        let s = loss::smooth_l1_forward(self.value(pred), &targets, &mask, beta);
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(s),
            Op::SmoothL1Sum {
                pred,
                targets,
                mask,
                beta,
            },
            rg,
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Populate gradients for every node reachable from the scalar `loss`.
    /// Registered parameters that are unreachable get zero gradients.
    pub fn backward(&mut self, loss: NodeId) -> CoreResult<()> {
        if !self.value(loss).is_scalar() {
            return Err(CoreError::NonScalarLoss {
                shape: self.value(loss).shape(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.ix()] = Some(vec![T::ONE]);

        for i in (0..=loss.ix()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.grad = Some(g);
        }

        // zero-fill unreached parameters
        for (_, id) in &self.params {
            let node = &mut self.nodes[id.ix()];
            if node.value.grad.is_none() {
                node.value.grad = Some(vec![T::ZERO; node.value.numel()]);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        // helper: lazily-allocated accumulation buffer for an input node,
        // skipped entirely when no gradient is required there
        macro_rules! sink {
            ($id:expr) => {{
                let id: NodeId = $id;
                if self.nodes[id.ix()].requires_grad {
                    Some(
                        grads[id.ix()]
                            .get_or_insert_with(|| vec![T::ZERO; self.nodes[id.ix()].value.numel()]),
                    )
                } else {
                    None
                }
            }};
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let (need_x, need_w, need_b) = (
                    self.rg(*x),
                    self.rg(*w),
                    b.map(|bb| self.rg(bb)).unwrap_or(false),
                );
                let (dx, dw, db) = conv::backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    need_x,
                    need_w,
                    need_b,
                );
                if let (Some(dx), Some(s)) = (dx, sink!(*x)) {
                    elem::axpy(s, &dx);
                }
                if let (Some(dw), Some(s)) = (dw, sink!(*w)) {
                    elem::axpy(s, &dw);
                }
                if let (Some(db), Some(bid)) = (db, *b) {
                    if let Some(s) = sink!(bid) {
                        elem::axpy(s, &db);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let (dx, dgamma, dbeta) = norm::backward(
                    self.value(*x),
                    self.value(*gamma),
                    g,
                    mean,
                    inv_std,
                    *batch_stats,
                );
                if let Some(s) = sink!(*x) {
                    elem::axpy(s, &dx);
                }
                if let Some(s) = sink!(*gamma) {
                    elem::axpy(s, &dgamma);
                }
                if let Some(s) = sink!(*beta) {
                    elem::axpy(s, &dbeta);
                }
            }
            Op::Relu { x } => {
                if let Some(s) = sink!(*x) {
                    for (si, (&gi, &xi)) in s.iter_mut().zip(g.iter().zip(self.value(*x).data())) {
                        if xi >= T::ZERO {
                            *si += gi;
                        }
                    }
                }
            }
            Op::Sigmoid { x } => {
                let out = self.nodes[i].value.data();
                if let Some(s) = sink!(*x) {
                    for (si, (&gi, &oi)) in s.iter_mut().zip(g.iter().zip(out)) {
                        *si += gi * oi * (T::ONE - oi);
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(s) = sink!(*a) {
                    elem::axpy(s, g);
                }
                if let Some(s) = sink!(*b) {
                    elem::axpy(s, g);
                }
            }
            Op::MulGate { gate, x } => {
                let (dgate, dx) = elem::mul_gate_backward(
                    self.value(*gate),
                    self.value(*x),
                    g,
                    self.rg(*gate),
                    self.rg(*x),
                );
                if let (Some(d), Some(s)) = (dgate, sink!(*gate)) {
                    elem::axpy(s, &d);
                }
                if let (Some(d), Some(s)) = (dx, sink!(*x)) {
                    elem::axpy(s, &d);
                }
            }
            Op::GlobalAvgPool { x } => {
                if let Some(s) = sink!(*x) {
                    elem::global_avg_pool_backward(self.value(*x).shape(), g, s);
                }
            }
            Op::ConcatChannels { a, b } => {
                let ca = self.value(*a).shape()[1];
                let shape_out = self.nodes[i].value.shape();
                if let Some(s) = sink!(*a) {
                    elem::concat_backward_part(shape_out, g, 0, ca, s);
                }
                if let Some(s) = sink!(*b) {
                    elem::concat_backward_part(shape_out, g, ca, shape_out[1] - ca, s);
                }
            }
            Op::NarrowChannels { x, start } => {
                if let Some(s) = sink!(*x) {
                    elem::narrow_backward(
                        self.value(*x).shape(),
                        self.nodes[i].value.shape()[1],
                        *start,
                        g,
                        s,
                    );
                }
            }
            Op::SumAll { x } => {
                if let Some(s) = sink!(*x) {
                    let gv = g[0];
                    for si in s.iter_mut() {
                        *si += gv;
                    }
                }
            }
            Op::Scale { x, k } => {
                if let Some(s) = sink!(*x) {
                    for (si, &gi) in s.iter_mut().zip(g.iter()) {
                        *si += gi * *k;
                    }
                }
            }
            Op::UpsampleNearest2 { x } => {
                if let Some(s) = sink!(*x) {
                    resample::upsample_nearest2_backward(self.value(*x).shape(), g, s);
                }
            }
            Op::PixelShuffle2 { x } => {
                if let Some(s) = sink!(*x) {
                    resample::pixel_shuffle2_backward(self.value(*x).shape(), g, s);
                }
            }
            Op::SoftmaxChannels { x } => {
                if let Some(s) = sink!(*x) {
                    resample::softmax_channels_backward(&self.nodes[i].value, g, s);
                }
            }
            Op::CarafeReassemble { x, kernels, k_up } => {
                let (dx, dk) = resample::carafe_backward(
                    self.value(*x),
                    self.value(*kernels),
                    g,
                    *k_up,
                    self.rg(*x),
                    self.rg(*kernels),
                );
                if let (Some(d), Some(s)) = (dx, sink!(*x)) {
                    elem::axpy(s, &d);
                }
                if let (Some(d), Some(s)) = (dk, sink!(*kernels)) {
                    elem::axpy(s, &d);
                }
            }
            Op::Rfft2 { x } => {
                if let Some(s) = sink!(*x) {
                    fftops::rfft2_backward(self.value(*x).shape(), g, s);
                }
            }
            Op::Irfft2 { z, source_width } => {
                if let Some(s) = sink!(*z) {
                    fftops::irfft2_backward(self.value(*z).shape(), *source_width, g, s);
                }
            }
            Op::FocalLossSum {
                logits,
                targets,
                alpha,
                gamma,
            } => {
                if let Some(s) = sink!(*logits) {
                    loss::focal_backward(self.value(*logits), targets, *alpha, *gamma, g[0], s);
                }
            }
            Op::SmoothL1Sum {
                pred,
                targets,
                mask,
                beta,
            } => {
                if let Some(s) = sink!(*pred) {
                    loss::smooth_l1_backward(self.value(*pred), targets, mask, *beta, g[0], s);
                }
            }
        }
    }
}

impl CoreError {
    fn normalize_add(self, sa: [usize; 4], sb: [usize; 4], axis: Axis) -> CoreError {
        let i = match axis {
            Axis::Batch => 0,
            Axis::Channel => 1,
            Axis::Height => 2,
            Axis::Width => 3,
        };
        CoreError::DimMismatch {
            op: "add",
            axis,
            expected: sa[i],
            got: sb[i],
        }
    }
}
