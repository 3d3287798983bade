//! Selective state-space encoder: input-dependent step size, diagonal
//! discretization, scan, SiLU gate, output projection.

use alloc::format;
use alloc::string::String;

use crate::error::{CoreError, Result};
use crate::graph::{Graph, NodeId};
use crate::math;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// How the continuous pair (A, B) becomes the per-step (A_bar, B_bar).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscretizationRule {
    /// Zero-order hold: A_bar = exp(dA), B_bar = (exp(dA) - 1) / A * B.
    Zoh,
    /// Alternative rule keeping an explicit d^2 factor:
    /// B_bar = d^2 * exp(dA) / A * B. Same A_bar.
    ExpDelta,
}

impl DiscretizationRule {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zoh" => Some(DiscretizationRule::Zoh),
            "exp_delta" => Some(DiscretizationRule::ExpDelta),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DiscretizationRule::Zoh => "zoh",
            DiscretizationRule::ExpDelta => "exp_delta",
        }
    }
}

/// Learnable state for one encoder over V variates with N states per
/// variate. The transition is diagonal and always negative: A = -exp(a_log).
#[derive(Debug, Clone)]
pub struct SsmParams {
    /// [V, N]; A[v, n] = -exp(a_log[v, n]).
    pub a_log: Tensor,
    /// [V, V] step-size projection, with bias [V].
    pub w_delta: Tensor,
    pub b_delta: Tensor,
    /// [V, N] input projection producing B_t.
    pub w_b: Tensor,
    /// [V, N] input projection producing C_t.
    pub w_c: Tensor,
    /// [V, V] gate and output projections.
    pub gate_w: Tensor,
    pub out_w: Tensor,
}

/// Node handles for one encoder's parameters inside a live graph.
#[derive(Debug, Clone, Copy)]
pub struct BoundSsm {
    pub a_log: NodeId,
    pub w_delta: NodeId,
    pub b_delta: NodeId,
    pub w_b: NodeId,
    pub w_c: NodeId,
    pub gate_w: NodeId,
    pub out_w: NodeId,
}

impl SsmParams {
    /// Seeded init. a_log rows are ln(1..=N), giving transition rates
    /// evenly spaced in [1, N]; projections draw fan-in uniform values in
    /// declaration order, so the consumed rng stream is part of the format.
    pub fn init(v: usize, n: usize, rng: &mut Rng) -> Self {
        let a_log = Tensor::from_fn(&[v, n], |i| math::ln((i % n + 1) as f64));
        let w_delta = Tensor::fan_in_init(&[v, v], v, rng);
        let b_delta = Tensor::zeros(&[v]);
        let w_b = Tensor::fan_in_init(&[v, n], v, rng);
        let w_c = Tensor::fan_in_init(&[v, n], v, rng);
        let gate_w = Tensor::fan_in_init(&[v, v], v, rng);
        let out_w = Tensor::fan_in_init(&[v, v], v, rng);
        SsmParams {
            a_log,
            w_delta,
            b_delta,
            w_b,
            w_c,
            gate_w,
            out_w,
        }
    }

    pub fn n_variates(&self) -> usize {
        self.a_log.shape[0]
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.shape[1]
    }

    /// Inserts every parameter through `leaf`, which maps (name, tensor) to
    /// a node; the model layer uses this to substitute probe leaves.
    pub fn bind(
        &self,
        prefix: &str,
        leaf: &mut dyn FnMut(String, &Tensor) -> NodeId,
    ) -> BoundSsm {
        BoundSsm {
            a_log: leaf(format!("{prefix}a_log"), &self.a_log),
            w_delta: leaf(format!("{prefix}w_delta"), &self.w_delta),
            b_delta: leaf(format!("{prefix}b_delta"), &self.b_delta),
            w_b: leaf(format!("{prefix}w_b"), &self.w_b),
            w_c: leaf(format!("{prefix}w_c"), &self.w_c),
            gate_w: leaf(format!("{prefix}gate_w"), &self.gate_w),
            out_w: leaf(format!("{prefix}out_w"), &self.out_w),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(format!("{prefix}a_log"), &self.a_log);
        f(format!("{prefix}w_delta"), &self.w_delta);
        f(format!("{prefix}b_delta"), &self.b_delta);
        f(format!("{prefix}w_b"), &self.w_b);
        f(format!("{prefix}w_c"), &self.w_c);
        f(format!("{prefix}gate_w"), &self.gate_w);
        f(format!("{prefix}out_w"), &self.out_w);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}a_log"), &mut self.a_log);
        f(format!("{prefix}w_delta"), &mut self.w_delta);
        f(format!("{prefix}b_delta"), &mut self.b_delta);
        f(format!("{prefix}w_b"), &mut self.w_b);
        f(format!("{prefix}w_c"), &mut self.w_c);
        f(format!("{prefix}gate_w"), &mut self.gate_w);
        f(format!("{prefix}out_w"), &mut self.out_w);
    }
}

/// Per-step transition and input matrices, [B, L, V, N] each.
#[derive(Debug, Clone, Copy)]
pub struct DiscreteSystem {
    pub a_bar: NodeId,
    pub b_bar: NodeId,
}

/// Step size from the input: softplus(x w_delta + b_delta), [B, L, V],
/// strictly positive.
pub fn compute_delta(g: &mut Graph, x: NodeId, p: &BoundSsm) -> Result<NodeId> {
    let pre = g.matmul(x, p.w_delta)?;
    let pre = g.add(pre, p.b_delta)?;
    Ok(g.softplus(pre))
}

/// Builds A_bar = exp(d A) and the rule's B_bar from a positive step size
/// [B, L, V] and the projected input B_t [B, L, N].
pub fn discretize(
    g: &mut Graph,
    delta: NodeId,
    b_proj: NodeId,
    a_log: NodeId,
    rule: DiscretizationRule,
) -> Result<DiscreteSystem> {
    // Softplus outputs are positive in exact arithmetic, so a zero here
    // means the pre-activation underflowed: a numeric failure, not a
    // caller error. Only genuinely negative values are the caller's bug.
    if g.values(delta).iter().any(|&d| !d.is_finite()) {
        return Err(CoreError::NonFinite {
            op: "discretize",
            what: "step size",
        });
    }
    if g.values(delta).iter().any(|&d| d == 0.0) {
        return Err(CoreError::NonFinite {
            op: "discretize",
            what: "step size (underflowed to zero)",
        });
    }
    if g.values(delta).iter().any(|&d| d < 0.0) {
        return Err(CoreError::InvalidArgument {
            op: "discretize",
            message: String::from("step size must be strictly positive everywhere"),
        });
    }
    let dsh = g.shape(delta).to_vec();
    if dsh.len() != 3 {
        return Err(CoreError::InvalidArgument {
            op: "discretize",
            message: format!("step size must be [B, L, V], got {dsh:?}"),
        });
    }
    let (b, l, v) = (dsh[0], dsh[1], dsh[2]);
    let n = g.shape(a_log)[1];

    let rate = g.exp(a_log);
    let a = g.neg(rate); // [V, N], strictly negative
    let delta4 = g.reshape(delta, &[b, l, v, 1])?;
    let da = g.mul(delta4, a)?; // [B, L, V, N]
    let a_bar = g.exp(da);
    // Mathematically 0 < A_bar < 1; exp underflows to exactly 0.0 once
    // delta * A drops below roughly -745, so only the upper bound is hard.
    debug_assert!(
        g.values(a_bar).iter().all(|&x| (0.0..1.0).contains(&x)),
        "transition must stay in [0, 1)"
    );

    let b4 = g.reshape(b_proj, &[b, l, 1, n])?;
    let recip_a = g.recip(a);
    let b_bar = match rule {
        DiscretizationRule::Zoh => {
            // (exp(dA) - 1) / A * B; the step size cancels against 1/(dA).
            let am1 = g.offset(a_bar, -1.0);
            let coeff = g.mul(am1, recip_a)?;
            g.mul(coeff, b4)?
        }
        DiscretizationRule::ExpDelta => {
            let d2 = g.mul(delta4, delta4)?;
            let t = g.mul(a_bar, recip_a)?;
            let t = g.mul(d2, t)?;
            g.mul(t, b4)?
        }
    };
    Ok(DiscreteSystem { a_bar, b_bar })
}

/// Runs the recurrence h_t = A_bar_t h_(t-1) + B_bar_t x_t with readout
/// against C_t; see `Graph::scan` for shapes.
pub fn selective_scan(
    g: &mut Graph,
    sys: &DiscreteSystem,
    x: NodeId,
    c: NodeId,
) -> Result<NodeId> {
    g.scan(sys.a_bar, sys.b_bar, x, c)
}

/// Scan plus gate and output projection, shared by both encoder flavors
/// once the step size is fixed.
pub fn encoder_with_delta(
    g: &mut Graph,
    x: NodeId,
    delta: NodeId,
    p: &BoundSsm,
    rule: DiscretizationRule,
) -> Result<NodeId> {
    let b_proj = g.matmul(x, p.w_b)?;
    let c_proj = g.matmul(x, p.w_c)?;
    let sys = discretize(g, delta, b_proj, p.a_log, rule)?;
    let u1 = selective_scan(g, &sys, x, c_proj)?;
    let gate_pre = g.matmul(x, p.gate_w)?;
    let gate = g.silu(gate_pre);
    let u2 = g.mul(u1, gate)?;
    g.matmul(u2, p.out_w)
}

/// Plain encoder: step size straight from softplus, no spectral filtering.
pub fn mamba_encoder_forward(
    g: &mut Graph,
    x: NodeId,
    p: &BoundSsm,
    rule: DiscretizationRule,
) -> Result<NodeId> {
    let delta = compute_delta(g, x, p)?;
    encoder_with_delta(g, x, delta, p, rule)
}
