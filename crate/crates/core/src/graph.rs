//! Reverse-mode differentiation over a flat op tape.
//!
//! Ops execute eagerly: inserting a node computes its values, so the tape is
//! the forward pass. `backward` seeds the scalar loss with 1 and walks the
//! tape once in reverse, accumulating adjoints into every node; leaves the
//! loss never reaches keep zero gradients. A graph is single-use: backward
//! consumes it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math;
use crate::smoothing::{self, RbfConfig};
use crate::spectral;
use crate::tensor::{broadcast_shapes, numel, Tensor};

/// Arguments above this are clamped before exponentiation. e^80 ~ 5.5e34
/// keeps downstream products far from f64 overflow.
pub const MAX_EXP_ARG: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Softplus,
    Exp,
    Cos,
}

#[derive(Debug, Clone)]
struct MatmulDims {
    lhs: NodeId,
    rhs: NodeId,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    lhs_batched: bool,
    rhs_batched: bool,
}

#[derive(Debug, Clone)]
struct ScanArgs {
    a_bar: NodeId,
    b_bar: NodeId,
    x: NodeId,
    c: NodeId,
    /// Hidden states h_t for every step, [B, L, V, N]; backward replays them.
    states: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Recip(NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Exp(NodeId),
    Cos(NodeId),
    Silu(NodeId),
    Softplus(NodeId),
    Matmul(MatmulDims),
    Reshape(NodeId),
    TransposeLast2(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumAxis { x: NodeId, axis: usize },
    MeanAxis { x: NodeId, axis: usize },
    RbfSmooth { x: NodeId, cfg: RbfConfig },
    SpectralFilter { x: NodeId, w_re: NodeId, w_im: NodeId },
    RfftUnpack { x: NodeId },
    Scan(ScanArgs),
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    trainable: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Strides for walking `shape` along an `out_shape` traversal, zero on
/// broadcast axes; shapes right-aligned.
fn bc_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let native = crate::tensor::strides_for(shape);
    let mut s = vec![0usize; rank];
    for ax in 0..shape.len() {
        if shape[ax] != 1 {
            s[offset + ax] = native[ax];
        }
    }
    s
}

/// Elementwise broadcast walk calling `f(out_index, a_offset, b_offset)`.
fn broadcast_walk(
    a_shape: &[usize],
    b_shape: &[usize],
    out_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out_shape);
    let sa = bc_strides(a_shape, out_shape);
    let sb = bc_strides(b_shape, out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let (mut ao, mut bo) = (0usize, 0usize);
    for o in 0..total {
        f(o, ao, bo);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ao += sa[ax];
            bo += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
            ao -= sa[ax] * out_shape[ax];
            bo -= sb[ax] * out_shape[ax];
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Rough footprint of the tape's buffers, for memory reporting.
    pub fn approx_bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| {
                let extra = match &n.op {
                    Op::Scan(s) => s.states.len(),
                    _ => 0,
                };
                (n.values.len() + n.grad.len() + extra) * core::mem::size_of::<f64>()
            })
            .sum()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<f64>) -> NodeId {
        debug_assert_eq!(values.len(), numel(&shape));
        self.nodes.push(Node {
            op,
            shape,
            values,
            grad: Vec::new(),
            trainable: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: &Tensor, trainable: bool) -> NodeId {
        let id = self.push(Op::Leaf, t.shape.clone(), t.values.clone());
        self.nodes[id.0].trainable = trainable;
        id
    }

    pub fn constant(&mut self, values: Vec<f64>, shape: &[usize]) -> Result<NodeId> {
        if values.len() != numel(shape) {
            return Err(CoreError::InvalidArgument {
                op: "Graph::constant",
                message: format!("{} values cannot fill shape {shape:?}", values.len()),
            });
        }
        Ok(self.push(Op::Leaf, shape.to_vec(), values))
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(Op::Leaf, Vec::new(), vec![v])
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn to_tensor(&self, id: NodeId) -> Tensor {
        Tensor {
            shape: self.nodes[id.0].shape.clone(),
            values: self.nodes[id.0].values.clone(),
            grad: None,
        }
    }

    /// Gradient buffer of a node; `None` before backward has run.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        let g = &self.nodes[id.0].grad;
        if g.is_empty() && !self.nodes[id.0].values.is_empty() {
            None
        } else {
            Some(g)
        }
    }

    pub fn grad_tensor(&self, id: NodeId) -> Option<Tensor> {
        self.grad(id).map(|g| Tensor {
            shape: self.nodes[id.0].shape.clone(),
            values: g.to_vec(),
            grad: None,
        })
    }

    // ---- elementwise ----

    fn ew_binary(
        &mut self,
        opname: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        let (ash, bsh) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let out_shape = broadcast_shapes(ash, bsh).ok_or_else(|| CoreError::ShapeMismatch {
            op: opname,
            lhs: ash.clone(),
            rhs: bsh.clone(),
        })?;
        let mut out = vec![0.0; numel(&out_shape)];
        let (av, bv) = (&self.nodes[a.0].values, &self.nodes[b.0].values);
        if ash == &out_shape && bsh == &out_shape {
            for (o, (x, y)) in out.iter_mut().zip(av.iter().zip(bv.iter())) {
                *o = f(*x, *y);
            }
        } else {
            broadcast_walk(ash, bsh, &out_shape, |o, ao, bo| {
                out[o] = f(av[ao], bv[bo]);
            });
        }
        Ok((out_shape, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (shape, vals) = self.ew_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), shape, vals))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (shape, vals) = self.ew_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), shape, vals))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (shape, vals) = self.ew_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), shape, vals))
    }

    /// Elementwise reciprocal. The caller guarantees nonzero inputs; the
    /// model only inverts strictly negative transition rates.
    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let vals: Vec<f64> = self.nodes[a.0].values.iter().map(|x| 1.0 / x).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Recip(a), shape, vals)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let vals: Vec<f64> = self.nodes[a.0].values.iter().map(|x| c * x).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Scale(a, c), shape, vals)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let vals: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x + c).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Offset(a), shape, vals)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let mut clamped = 0usize;
        let vals: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| {
                if x > MAX_EXP_ARG {
                    clamped += 1;
                    math::exp(MAX_EXP_ARG)
                } else {
                    math::exp(x)
                }
            })
            .collect();
        if clamped > 0 {
            log::warn!("exp: clamped {clamped} arguments at {MAX_EXP_ARG}");
        }
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Exp(a), shape, vals)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let vals: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| math::cos(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Cos(a), shape, vals)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let vals: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| math::silu(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Silu(a), shape, vals)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let vals: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| math::softplus(x))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Softplus(a), shape, vals)
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> NodeId {
        match kind {
            Activation::Silu => self.silu(x),
            Activation::Softplus => self.softplus(x),
            Activation::Exp => self.exp(x),
            Activation::Cos => self.cos(x),
        }
    }

    // ---- matmul ----

    /// Matrix product over the two trailing axes. Leading axes are batch
    /// dims; either operand may omit them entirely and is then shared
    /// across the other's batch.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ash = self.nodes[a.0].shape.clone();
        let bsh = self.nodes[b.0].shape.clone();
        let mismatch = || CoreError::ShapeMismatch {
            op: "matmul",
            lhs: ash.clone(),
            rhs: bsh.clone(),
        };
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (k2, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        let abatch = &ash[..ash.len() - 2];
        let bbatch = &bsh[..bsh.len() - 2];
        if k != k2 || (!abatch.is_empty() && !bbatch.is_empty() && abatch != bbatch) {
            return Err(mismatch());
        }
        let batch_dims = if abatch.is_empty() { bbatch } else { abatch };
        let batch = numel(batch_dims);
        let dims = MatmulDims {
            lhs: a,
            rhs: b,
            batch,
            m,
            k,
            n,
            lhs_batched: !abatch.is_empty(),
            rhs_batched: !bbatch.is_empty(),
        };
        let mut out = vec![0.0; batch * m * n];
        {
            let av = &self.nodes[a.0].values;
            let bv = &self.nodes[b.0].values;
            for bi in 0..batch {
                let ao = if dims.lhs_batched { bi * m * k } else { 0 };
                let bo = if dims.rhs_batched { bi * k * n } else { 0 };
                let oo = bi * m * n;
                for i in 0..m {
                    for p in 0..k {
                        let alpha = av[ao + i * k + p];
                        let brow = &bv[bo + p * n..bo + (p + 1) * n];
                        let orow = &mut out[oo + i * n..oo + (i + 1) * n];
                        for j in 0..n {
                            orow[j] += alpha * brow[j];
                        }
                    }
                }
            }
        }
        let mut out_shape = batch_dims.to_vec();
        out_shape.push(m);
        out_shape.push(n);
        Ok(self.push(Op::Matmul(dims), out_shape, out))
    }

    // ---- shape ops ----

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if numel(shape) != self.nodes[a.0].values.len() {
            return Err(CoreError::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let vals = self.nodes[a.0].values.clone();
        Ok(self.push(Op::Reshape(a), shape.to_vec(), vals))
    }

    pub fn transpose_last2(&mut self, a: NodeId) -> Result<NodeId> {
        let ash = self.nodes[a.0].shape.clone();
        if ash.len() < 2 {
            return Err(CoreError::InvalidArgument {
                op: "transpose_last2",
                message: format!("needs rank >= 2, got shape {ash:?}"),
            });
        }
        let (r, c) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let outer = numel(&ash[..ash.len() - 2]);
        let av = &self.nodes[a.0].values;
        let mut out = vec![0.0; av.len()];
        for o in 0..outer {
            let base = o * r * c;
            for i in 0..r {
                for j in 0..c {
                    out[base + j * r + i] = av[base + i * c + j];
                }
            }
        }
        let mut shape = ash;
        let len = shape.len();
        shape.swap(len - 2, len - 1);
        Ok(self.push(Op::TransposeLast2(a), shape, out))
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].values.iter().sum();
        self.push(Op::SumAll(a), Vec::new(), vec![s])
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let len = self.nodes[a.0].values.len().max(1);
        let s: f64 = self.nodes[a.0].values.iter().sum::<f64>() / len as f64;
        self.push(Op::MeanAll(a), Vec::new(), vec![s])
    }

    fn axis_reduce(&self, a: NodeId, axis: usize, mean: bool) -> Result<(Vec<usize>, Vec<f64>)> {
        let ash = &self.nodes[a.0].shape;
        if axis >= ash.len() {
            return Err(CoreError::InvalidArgument {
                op: "axis_reduce",
                message: format!("axis {axis} out of range for shape {ash:?}"),
            });
        }
        let outer = numel(&ash[..axis]);
        let mid = ash[axis];
        let inner = numel(&ash[axis + 1..]);
        let mut out = vec![0.0; outer * inner];
        let av = &self.nodes[a.0].values;
        for o in 0..outer {
            for m in 0..mid {
                let src = (o * mid + m) * inner;
                let dst = o * inner;
                for i in 0..inner {
                    out[dst + i] += av[src + i];
                }
            }
        }
        if mean {
            let inv = 1.0 / mid.max(1) as f64;
            for v in out.iter_mut() {
                *v *= inv;
            }
        }
        let mut shape = ash.clone();
        shape.remove(axis);
        Ok((shape, out))
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let (shape, vals) = self.axis_reduce(a, axis, false)?;
        Ok(self.push(Op::SumAxis { x: a, axis }, shape, vals))
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let (shape, vals) = self.axis_reduce(a, axis, true)?;
        Ok(self.push(Op::MeanAxis { x: a, axis }, shape, vals))
    }

    // ---- domain kernels ----

    /// Gaussian smoothing along the middle axis of [B, L, V].
    pub fn rbf_smooth(&mut self, x: NodeId, cfg: &RbfConfig) -> Result<NodeId> {
        let t = self.to_tensor(x);
        let out = smoothing::rbf_smooth(&t, cfg)?;
        Ok(self.push(
            Op::RbfSmooth {
                x,
                cfg: cfg.clone(),
            },
            out.shape,
            out.values,
        ))
    }

    /// Frequency-domain reweighting of each last-axis lane by a learnable
    /// half-spectrum filter (`w_re`, `w_im`, shaped [bins] or [rows, bins]).
    pub fn spectral_filter(&mut self, x: NodeId, w_re: NodeId, w_im: NodeId) -> Result<NodeId> {
        if self.nodes[w_re.0].shape != self.nodes[w_im.0].shape {
            return Err(CoreError::ShapeMismatch {
                op: "spectral_filter",
                lhs: self.nodes[w_re.0].shape.clone(),
                rhs: self.nodes[w_im.0].shape.clone(),
            });
        }
        let filter = spectral::SpectralFilter {
            re: self.to_tensor(w_re),
            im: self.to_tensor(w_im),
        };
        let t = self.to_tensor(x);
        let out = spectral::kernel_integral(&t, &filter)?;
        Ok(self.push(Op::SpectralFilter { x, w_re, w_im }, out.shape, out.values))
    }

    /// Real transform of each last-axis lane, padded to the next power of
    /// two; emits the nonredundant bins as [..., 2 * bins] with the real
    /// parts first, then the imaginary parts.
    pub fn rfft_unpack(&mut self, x: NodeId) -> Result<NodeId> {
        let ash = self.nodes[x.0].shape.clone();
        let l = match ash.last() {
            Some(&l) if l > 0 => l,
            _ => {
                return Err(CoreError::InvalidArgument {
                    op: "rfft_unpack",
                    message: format!("need a nonempty last axis, got shape {ash:?}"),
                })
            }
        };
        let p = spectral::padded_len(l);
        let bins = spectral::n_bins(p);
        let lanes = self.nodes[x.0].values.len() / l;
        let mut out = vec![0.0; lanes * 2 * bins];
        let mut sr = vec![0.0; p];
        let mut si = vec![0.0; p];
        let mut fr = vec![0.0; bins];
        let mut fi = vec![0.0; bins];
        {
            let av = &self.nodes[x.0].values;
            for lane in 0..lanes {
                spectral::rfft_lane(
                    &av[lane * l..(lane + 1) * l],
                    p,
                    &mut sr,
                    &mut si,
                    &mut fr,
                    &mut fi,
                );
                let dst = lane * 2 * bins;
                out[dst..dst + bins].copy_from_slice(&fr);
                out[dst + bins..dst + 2 * bins].copy_from_slice(&fi);
            }
        }
        let mut shape = ash;
        *shape.last_mut().unwrap() = 2 * bins;
        Ok(self.push(Op::RfftUnpack { x }, shape, out))
    }

    /// Diagonal selective scan: h_t = a_bar_t * h_(t-1) + b_bar_t * x_t,
    /// out_t[v] = sum_n h_t[v, n] * c_t[n]. Shapes: a_bar, b_bar [B,L,V,N],
    /// x [B,L,V], c [B,L,N]; output [B,L,V].
    pub fn scan(&mut self, a_bar: NodeId, b_bar: NodeId, x: NodeId, c: NodeId) -> Result<NodeId> {
        self.scan_impl(a_bar, b_bar, x, c, None)
    }

    /// Same recurrence processed in fixed-size time chunks. The arithmetic
    /// per lane is identical, so results match `scan` bit for bit; only the
    /// traversal order (and thus cache behavior) differs.
    pub fn scan_chunked(
        &mut self,
        a_bar: NodeId,
        b_bar: NodeId,
        x: NodeId,
        c: NodeId,
        chunk: usize,
    ) -> Result<NodeId> {
        if chunk == 0 {
            return Err(CoreError::InvalidArgument {
                op: "scan_chunked",
                message: format!("chunk must be positive, got {chunk}"),
            });
        }
        self.scan_impl(a_bar, b_bar, x, c, Some(chunk))
    }

    fn scan_impl(
        &mut self,
        a_bar: NodeId,
        b_bar: NodeId,
        x: NodeId,
        c: NodeId,
        chunk: Option<usize>,
    ) -> Result<NodeId> {
        let ash = self.nodes[a_bar.0].shape.clone();
        let mismatch = |rhs: &[usize]| CoreError::ShapeMismatch {
            op: "selective_scan",
            lhs: ash.clone(),
            rhs: rhs.to_vec(),
        };
        if ash.len() != 4 {
            return Err(mismatch(&self.nodes[a_bar.0].shape));
        }
        let (b, l, v, n) = (ash[0], ash[1], ash[2], ash[3]);
        if self.nodes[b_bar.0].shape != ash {
            return Err(mismatch(&self.nodes[b_bar.0].shape.clone()));
        }
        if self.nodes[x.0].shape != [b, l, v] {
            return Err(mismatch(&self.nodes[x.0].shape.clone()));
        }
        if self.nodes[c.0].shape != [b, l, n] {
            return Err(mismatch(&self.nodes[c.0].shape.clone()));
        }
        let mut states = vec![0.0; b * l * v * n];
        let mut out = vec![0.0; b * l * v];
        {
            let av = &self.nodes[a_bar.0].values;
            let bv = &self.nodes[b_bar.0].values;
            let xv = &self.nodes[x.0].values;
            let cv = &self.nodes[c.0].values;
            let step = chunk.unwrap_or(l.max(1));
            let mut t0 = 0;
            while t0 < l {
                let t1 = (t0 + step).min(l);
                for bi in 0..b {
                    for t in t0..t1 {
                        let base = ((bi * l + t) * v) * n;
                        let prev = if t == 0 {
                            usize::MAX
                        } else {
                            ((bi * l + (t - 1)) * v) * n
                        };
                        let crow = (bi * l + t) * n;
                        for vi in 0..v {
                            let xval = xv[(bi * l + t) * v + vi];
                            let row = base + vi * n;
                            let mut acc = 0.0;
                            for ni in 0..n {
                                let h_prev = if t == 0 { 0.0 } else { states[prev + vi * n + ni] };
                                let h = av[row + ni] * h_prev + bv[row + ni] * xval;
                                states[row + ni] = h;
                                acc += h * cv[crow + ni];
                            }
                            out[(bi * l + t) * v + vi] = acc;
                        }
                    }
                }
                t0 = t1;
            }
        }
        Ok(self.push(
            Op::Scan(ScanArgs {
                a_bar,
                b_bar,
                x,
                c,
                states,
            }),
            vec![b, l, v],
            out,
        ))
    }

    // ---- backward ----

    fn add_grad(&mut self, id: NodeId, contrib: &[f64]) {
        let g = &mut self.nodes[id.0].grad;
        debug_assert_eq!(g.len(), contrib.len());
        for (a, b) in g.iter_mut().zip(contrib.iter()) {
            *a += b;
        }
    }

    /// Accumulates `g` (shaped `g_shape`) into the gradient of `id`, summing
    /// over broadcast axes.
    fn add_grad_reduced(&mut self, id: NodeId, g: &[f64], g_shape: &[usize]) {
        let target_shape = self.nodes[id.0].shape.clone();
        if target_shape == g_shape {
            self.add_grad(id, g);
            return;
        }
        let strides = bc_strides(&target_shape, g_shape);
        let rank = g_shape.len();
        let grad = &mut self.nodes[id.0].grad;
        let mut idx = vec![0usize; rank];
        let mut to = 0usize;
        for (o, val) in g.iter().enumerate() {
            let _ = o;
            grad[to] += val;
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                to += strides[ax];
                if idx[ax] < g_shape[ax] {
                    break;
                }
                idx[ax] = 0;
                to -= strides[ax] * g_shape[ax];
            }
        }
    }

    /// Reverse sweep from a scalar loss. Consumes the graph: a second call
    /// fails with `GraphConsumed`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.consumed {
            return Err(CoreError::GraphConsumed);
        }
        if self.nodes[loss.0].values.len() != 1 {
            return Err(CoreError::NonScalarLoss {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        self.consumed = true;
        for node in self.nodes.iter_mut() {
            node.grad = vec![0.0; node.values.len()];
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let g = core::mem::take(&mut self.nodes[i].grad);
            let g_shape = self.nodes[i].shape.clone();
            match &op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.add_grad_reduced(*a, &g, &g_shape);
                    self.add_grad_reduced(*b, &g, &g_shape);
                }
                Op::Sub(a, b) => {
                    self.add_grad_reduced(*a, &g, &g_shape);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    self.add_grad_reduced(*b, &neg, &g_shape);
                }
                Op::Mul(a, b) => {
                    let ash = self.nodes[a.0].shape.clone();
                    let bsh = self.nodes[b.0].shape.clone();
                    let mut da = vec![0.0; numel(&ash)];
                    let mut db = vec![0.0; numel(&bsh)];
                    {
                        let av = &self.nodes[a.0].values;
                        let bv = &self.nodes[b.0].values;
                        broadcast_walk(&ash, &bsh, &g_shape, |o, ao, bo| {
                            da[ao] += g[o] * bv[bo];
                            db[bo] += g[o] * av[ao];
                        });
                    }
                    self.add_grad(*a, &da);
                    self.add_grad(*b, &db);
                }
                Op::Recip(a) => {
                    let da: Vec<f64> = self.nodes[i]
                        .values
                        .iter()
                        .zip(g.iter())
                        .map(|(y, go)| -go * y * y)
                        .collect();
                    self.add_grad(*a, &da);
                }
                Op::Scale(a, c) => {
                    let da: Vec<f64> = g.iter().map(|go| c * go).collect();
                    self.add_grad(*a, &da);
                }
                Op::Offset(a) => {
                    self.add_grad(*a, &g);
                }
                Op::Exp(a) => {
                    // d/dx exp(min(x, MAX)) is 0 beyond the clamp.
                    let da: Vec<f64> = self.nodes[a.0]
                        .values
                        .iter()
                        .zip(self.nodes[i].values.iter().zip(g.iter()))
                        .map(|(x, (y, go))| if *x > MAX_EXP_ARG { 0.0 } else { go * y })
                        .collect();
                    self.add_grad(*a, &da);
                }
                Op::Cos(a) => {
                    let da: Vec<f64> = self.nodes[a.0]
                        .values
                        .iter()
                        .zip(g.iter())
                        .map(|(x, go)| -go * math::sin(*x))
                        .collect();
                    self.add_grad(*a, &da);
                }
                Op::Silu(a) => {
                    let da: Vec<f64> = self.nodes[a.0]
                        .values
                        .iter()
                        .zip(g.iter())
                        .map(|(x, go)| {
                            let s = math::sigmoid(*x);
                            go * (s + x * s * (1.0 - s))
                        })
                        .collect();
                    self.add_grad(*a, &da);
                }
                Op::Softplus(a) => {
                    let da: Vec<f64> = self.nodes[a.0]
                        .values
                        .iter()
                        .zip(g.iter())
                        .map(|(x, go)| go * math::sigmoid(*x))
                        .collect();
                    self.add_grad(*a, &da);
                }
                Op::Matmul(d) => {
                    let mut dl = vec![0.0; self.nodes[d.lhs.0].values.len()];
                    let mut dr = vec![0.0; self.nodes[d.rhs.0].values.len()];
                    {
                        let lv = &self.nodes[d.lhs.0].values;
                        let rv = &self.nodes[d.rhs.0].values;
                        let (m, k, n) = (d.m, d.k, d.n);
                        for bi in 0..d.batch {
                            let lo = if d.lhs_batched { bi * m * k } else { 0 };
                            let ro = if d.rhs_batched { bi * k * n } else { 0 };
                            let go = bi * m * n;
                            // dL[i,p] += sum_j g[i,j] R[p,j]
                            for i2 in 0..m {
                                for p in 0..k {
                                    let mut acc = 0.0;
                                    let grow = &g[go + i2 * n..go + (i2 + 1) * n];
                                    let rrow = &rv[ro + p * n..ro + (p + 1) * n];
                                    for j in 0..n {
                                        acc += grow[j] * rrow[j];
                                    }
                                    dl[lo + i2 * k + p] += acc;
                                }
                            }
                            // dR[p,j] += sum_i L[i,p] g[i,j]
                            for i2 in 0..m {
                                for p in 0..k {
                                    let alpha = lv[lo + i2 * k + p];
                                    let grow = &g[go + i2 * n..go + (i2 + 1) * n];
                                    let drow = &mut dr[ro + p * n..ro + (p + 1) * n];
                                    for j in 0..n {
                                        drow[j] += alpha * grow[j];
                                    }
                                }
                            }
                        }
                    }
                    self.add_grad(d.lhs, &dl);
                    self.add_grad(d.rhs, &dr);
                }
                Op::Reshape(a) => {
                    self.add_grad(*a, &g);
                }
                Op::TransposeLast2(a) => {
                    let ash = self.nodes[a.0].shape.clone();
                    let (r, c) = (ash[ash.len() - 2], ash[ash.len() - 1]);
                    let outer = numel(&ash[..ash.len() - 2]);
                    let mut da = vec![0.0; self.nodes[a.0].values.len()];
                    for o in 0..outer {
                        let base = o * r * c;
                        for i2 in 0..r {
                            for j in 0..c {
                                da[base + i2 * c + j] = g[base + j * r + i2];
                            }
                        }
                    }
                    self.add_grad(*a, &da);
                }
                Op::SumAll(a) => {
                    let da = vec![g[0]; self.nodes[a.0].values.len()];
                    self.add_grad(*a, &da);
                }
                Op::MeanAll(a) => {
                    let len = self.nodes[a.0].values.len().max(1);
                    let da = vec![g[0] / len as f64; self.nodes[a.0].values.len()];
                    self.add_grad(*a, &da);
                }
                Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
                    let mean = matches!(op, Op::MeanAxis { .. });
                    let ash = self.nodes[x.0].shape.clone();
                    let outer = numel(&ash[..*axis]);
                    let mid = ash[*axis];
                    let inner = numel(&ash[*axis + 1..]);
                    let scale = if mean { 1.0 / mid.max(1) as f64 } else { 1.0 };
                    let mut da = vec![0.0; self.nodes[x.0].values.len()];
                    for o in 0..outer {
                        for m2 in 0..mid {
                            let dst = (o * mid + m2) * inner;
                            let src = o * inner;
                            for i2 in 0..inner {
                                da[dst + i2] = g[src + i2] * scale;
                            }
                        }
                    }
                    self.add_grad(*x, &da);
                }
                Op::RbfSmooth { x, cfg } => {
                    let ash = self.nodes[x.0].shape.clone();
                    let (b, l, v) = (ash[0], ash[1], ash[2]);
                    let (kernel, norms) = smoothing::kernel_and_norms(cfg, l);
                    let r = cfg.radius as isize;
                    let mut da = vec![0.0; self.nodes[x.0].values.len()];
                    for bi in 0..b {
                        for t in 0..l {
                            let src = bi * l * v + t * v;
                            for (w, dd) in kernel.iter().zip(-r..=r) {
                                let s = t as isize + dd;
                                if s >= 0 && (s as usize) < l {
                                    let dst = bi * l * v + (s as usize) * v;
                                    let scale = w / norms[t];
                                    for vi in 0..v {
                                        da[dst + vi] += g[src + vi] * scale;
                                    }
                                }
                            }
                        }
                    }
                    self.add_grad(*x, &da);
                }
                Op::SpectralFilter { x, w_re, w_im } => {
                    self.spectral_filter_backward(*x, *w_re, *w_im, &g);
                }
                Op::RfftUnpack { x } => {
                    let ash = self.nodes[x.0].shape.clone();
                    let l = *ash.last().unwrap();
                    let p = spectral::padded_len(l);
                    let bins = spectral::n_bins(p);
                    let lanes = self.nodes[x.0].values.len() / l;
                    let mut da = vec![0.0; self.nodes[x.0].values.len()];
                    let mut sr = vec![0.0; p];
                    let mut si = vec![0.0; p];
                    for lane in 0..lanes {
                        let gs = lane * 2 * bins;
                        spectral::rfft_adjoint_lane(
                            &g[gs..gs + bins],
                            &g[gs + bins..gs + 2 * bins],
                            p,
                            &mut sr,
                            &mut si,
                            &mut da[lane * l..(lane + 1) * l],
                        );
                    }
                    self.add_grad(*x, &da);
                }
                Op::Scan(s) => {
                    self.scan_backward(s, &g);
                }
            }
            self.nodes[i].op = op;
            self.nodes[i].grad = g;
        }
        Ok(())
    }

    fn spectral_filter_backward(&mut self, x: NodeId, w_re: NodeId, w_im: NodeId, g: &[f64]) {
        let xsh = self.nodes[x.0].shape.clone();
        let l = *xsh.last().unwrap();
        let p = spectral::padded_len(l);
        let bins = spectral::n_bins(p);
        let rows = if self.nodes[w_re.0].shape.len() == 2 {
            self.nodes[w_re.0].shape[0]
        } else {
            1
        };
        let lanes = self.nodes[x.0].values.len() / l;
        let mut dx = vec![0.0; self.nodes[x.0].values.len()];
        let mut dre = vec![0.0; self.nodes[w_re.0].values.len()];
        let mut dim = vec![0.0; self.nodes[w_im.0].values.len()];
        {
            let xv = &self.nodes[x.0].values;
            let wr = &self.nodes[w_re.0].values;
            let wi = &self.nodes[w_im.0].values;
            let mut sr = vec![0.0; p];
            let mut si = vec![0.0; p];
            let mut x_re = vec![0.0; bins];
            let mut x_im = vec![0.0; bins];
            let mut g_re = vec![0.0; bins];
            let mut g_im = vec![0.0; bins];
            for lane in 0..lanes {
                let row = if rows > 1 { lane % rows } else { 0 };
                let glane = &g[lane * l..(lane + 1) * l];
                // Input adjoint: the same filtering pipeline with the
                // conjugated weights.
                spectral::filter_lane(
                    glane,
                    &wr[row * bins..(row + 1) * bins],
                    &wi[row * bins..(row + 1) * bins],
                    p,
                    true,
                    &mut sr,
                    &mut si,
                    &mut dx[lane * l..(lane + 1) * l],
                );
                // Weight adjoint: with X = transform(x), G_k the conjugated
                // transform of the output adjoint, bin k of the weight grad
                // is (2/P) X_k G_k for paired bins and (1/P) X_k G_k for the
                // self-conjugate ones.
                spectral::rfft_lane(
                    &xv[lane * l..(lane + 1) * l],
                    p,
                    &mut sr,
                    &mut si,
                    &mut x_re,
                    &mut x_im,
                );
                spectral::rfft_lane(glane, p, &mut sr, &mut si, &mut g_re, &mut g_im);
                for k in 0..bins {
                    let (gr, gi) = (g_re[k], -g_im[k]);
                    let re_xg = x_re[k] * gr - x_im[k] * gi;
                    let im_xg = x_re[k] * gi + x_im[k] * gr;
                    if spectral::is_self_conjugate(k, p) {
                        dre[row * bins + k] += re_xg / p as f64;
                    } else {
                        dre[row * bins + k] += 2.0 * re_xg / p as f64;
                        dim[row * bins + k] += -2.0 * im_xg / p as f64;
                    }
                }
            }
        }
        self.add_grad(x, &dx);
        self.add_grad(w_re, &dre);
        self.add_grad(w_im, &dim);
    }

    fn scan_backward(&mut self, s: &ScanArgs, g: &[f64]) {
        let ash = self.nodes[s.a_bar.0].shape.clone();
        let (b, l, v, n) = (ash[0], ash[1], ash[2], ash[3]);
        let mut da = vec![0.0; b * l * v * n];
        let mut db = vec![0.0; b * l * v * n];
        let mut dx = vec![0.0; b * l * v];
        let mut dc = vec![0.0; b * l * n];
        {
            let av = &self.nodes[s.a_bar.0].values;
            let bv = &self.nodes[s.b_bar.0].values;
            let xv = &self.nodes[s.x.0].values;
            let cv = &self.nodes[s.c.0].values;
            // lam[b, v, n] carries dJ/dh_t while t sweeps backward.
            let mut lam = vec![0.0; b * v * n];
            for t in (0..l).rev() {
                for bi in 0..b {
                    let crow = (bi * l + t) * n;
                    for vi in 0..v {
                        let go = g[(bi * l + t) * v + vi];
                        let row = ((bi * l + t) * v + vi) * n;
                        let lrow = (bi * v + vi) * n;
                        let xval = xv[(bi * l + t) * v + vi];
                        let mut dxv = 0.0;
                        for ni in 0..n {
                            // Readout: out = sum_n h c, so h picks up g*c and
                            // c picks up g*h (summed over variates).
                            dc[crow + ni] += go * s.states[row + ni];
                            let lam_t = lam[lrow + ni] + go * cv[crow + ni];
                            let h_prev = if t == 0 {
                                0.0
                            } else {
                                s.states[((bi * l + (t - 1)) * v + vi) * n + ni]
                            };
                            da[row + ni] = lam_t * h_prev;
                            db[row + ni] = lam_t * xval;
                            dxv += lam_t * bv[row + ni];
                            lam[lrow + ni] = lam_t * av[row + ni];
                        }
                        dx[(bi * l + t) * v + vi] = dxv;
                    }
                }
            }
        }
        self.add_grad(s.a_bar, &da);
        self.add_grad(s.b_bar, &db);
        self.add_grad(s.x, &dx);
        self.add_grad(s.c, &dc);
    }
}

/// Central-difference check of reverse-mode gradients: the max over
/// coordinates of |analytic - numeric| / max(1, |analytic|). `f` must build
/// a scalar from the supplied leaf; everything else it uses is captured.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(CoreError::InvalidArgument {
            op: "grad_check",
            message: format!("step must be positive and finite, got {step}"),
        });
    }
    let eval = |probe: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let id = g.leaf(probe, false);
        let loss = f(&mut g, id)?;
        if g.values(loss).len() != 1 {
            return Err(CoreError::NonScalarLoss {
                shape: g.shape(loss).to_vec(),
            });
        }
        let v = g.values(loss)[0];
        if !v.is_finite() {
            return Err(CoreError::NonFinite {
                op: "grad_check",
                what: "loss",
            });
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let id = g.leaf(x, true);
    let loss = f(&mut g, id)?;
    if g.values(loss).len() != 1 {
        return Err(CoreError::NonScalarLoss {
            shape: g.shape(loss).to_vec(),
        });
    }
    g.backward(loss)?;
    let analytic = g.grad(id).expect("backward ran").to_vec();

    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for i in 0..probe.values.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + step;
        let fp = eval(&probe)?;
        probe.values[i] = orig - step;
        let fm = eval(&probe)?;
        probe.values[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        if !numeric.is_finite() {
            return Err(CoreError::NonFinite {
                op: "grad_check",
                what: "finite difference",
            });
        }
        let err = math::abs(analytic[i] - numeric) / math::abs(analytic[i]).max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
