//! Full forecaster: stacked blocks of parallel encoders, a spectral fusion
//! projection to the horizon, and a damped-oscillator prediction head.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use crate::error::{CoreError, Result};
use crate::fmamba::{self, BoundFmamba, FilterInit, FmambaParams};
use crate::graph::{Graph, NodeId};
use crate::rng::Rng;
use crate::smoothing::RbfConfig;
use crate::spectral;
use crate::ssm::{self, BoundSsm, DiscretizationRule, SsmParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub variates: usize,
    pub state_dim: usize,
    pub n_fmm_blocks: usize,
    pub ilt_modes: usize,
    pub rbf: RbfConfig,
    pub rule: DiscretizationRule,
    pub filter_init: FilterInit,
    pub use_rbf: bool,
    pub use_fmamba: bool,
    pub use_mamba: bool,
    pub use_ft: bool,
    pub use_ilt: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lookback: 96,
            horizon: 96,
            variates: 1,
            state_dim: 16,
            n_fmm_blocks: 2,
            ilt_modes: 8,
            rbf: RbfConfig::default(),
            rule: DiscretizationRule::Zoh,
            filter_init: FilterInit::Identity,
            use_rbf: true,
            use_fmamba: true,
            use_mamba: true,
            use_ft: true,
            use_ilt: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("variates", self.variates),
            ("state_dim", self.state_dim),
            ("blocks", self.n_fmm_blocks),
            ("ilt_modes", self.ilt_modes),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(CoreError::InvalidArgument {
                    op: "ModelConfig::validate",
                    message: format!("{name} must be at least 1"),
                });
            }
        }
        if !self.use_fmamba && !self.use_mamba {
            return Err(CoreError::InvalidArgument {
                op: "ModelConfig::validate",
                message: String::from("at least one encoder branch must stay enabled"),
            });
        }
        self.rbf.validate()
    }

    /// Length of the unpacked spectrum the fusion layer consumes.
    pub fn fusion_in(&self) -> usize {
        2 * spectral::n_bins(spectral::padded_len(self.lookback))
    }
}

/// One stage: both encoders read the same input; their outputs are summed.
/// A branch is absent when its ablation flag was off at init.
#[derive(Debug, Clone)]
pub struct FmmBlockParams {
    pub fm: Option<FmambaParams>,
    pub ma: Option<SsmParams>,
}

/// Damped-oscillator head: a pooled per-variate scalar is projected to M
/// modes (amplitude, decay, frequency, phase); their superposition on the
/// normalized time grid is added back onto the input.
#[derive(Debug, Clone)]
pub struct IltParams {
    pub w_amp: Tensor,
    pub b_amp: Tensor,
    pub w_dec: Tensor,
    pub b_dec: Tensor,
    pub w_freq: Tensor,
    pub b_freq: Tensor,
    pub w_phase: Tensor,
    pub b_phase: Tensor,
}

impl IltParams {
    /// Starts as a small perturbation: amplitudes near zero keep the head
    /// close to the identity residual, while spread base frequencies
    /// (one extra cycle per mode) break symmetry between modes.
    fn init(m: usize, rng: &mut Rng) -> Self {
        IltParams {
            w_amp: Tensor::uniform(&[m], -0.1, 0.1, rng),
            b_amp: Tensor::zeros(&[m]),
            w_dec: Tensor::uniform(&[m], -0.1, 0.1, rng),
            b_dec: Tensor::zeros(&[m]),
            w_freq: Tensor::uniform(&[m], -0.1, 0.1, rng),
            b_freq: Tensor::from_fn(&[m], |n| TAU * (n + 1) as f64),
            w_phase: Tensor::uniform(&[m], -0.1, 0.1, rng),
            b_phase: Tensor::zeros(&[m]),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(format!("{prefix}w_amp"), &self.w_amp);
        f(format!("{prefix}b_amp"), &self.b_amp);
        f(format!("{prefix}w_dec"), &self.w_dec);
        f(format!("{prefix}b_dec"), &self.b_dec);
        f(format!("{prefix}w_freq"), &self.w_freq);
        f(format!("{prefix}b_freq"), &self.b_freq);
        f(format!("{prefix}w_phase"), &self.w_phase);
        f(format!("{prefix}b_phase"), &self.b_phase);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}w_amp"), &mut self.w_amp);
        f(format!("{prefix}b_amp"), &mut self.b_amp);
        f(format!("{prefix}w_dec"), &mut self.w_dec);
        f(format!("{prefix}b_dec"), &mut self.b_dec);
        f(format!("{prefix}w_freq"), &mut self.w_freq);
        f(format!("{prefix}b_freq"), &mut self.b_freq);
        f(format!("{prefix}w_phase"), &mut self.w_phase);
        f(format!("{prefix}b_phase"), &mut self.b_phase);
    }

    fn bind(&self, prefix: &str, leaf: &mut dyn FnMut(String, &Tensor) -> NodeId) -> BoundIlt {
        BoundIlt {
            w_amp: leaf(format!("{prefix}w_amp"), &self.w_amp),
            b_amp: leaf(format!("{prefix}b_amp"), &self.b_amp),
            w_dec: leaf(format!("{prefix}w_dec"), &self.w_dec),
            b_dec: leaf(format!("{prefix}b_dec"), &self.b_dec),
            w_freq: leaf(format!("{prefix}w_freq"), &self.w_freq),
            b_freq: leaf(format!("{prefix}b_freq"), &self.b_freq),
            w_phase: leaf(format!("{prefix}w_phase"), &self.w_phase),
            b_phase: leaf(format!("{prefix}b_phase"), &self.b_phase),
        }
    }
}

/// Fallback head used without the oscillator residual: one affine map over
/// the horizon features, shared across variates.
#[derive(Debug, Clone)]
pub struct CompParams {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundIlt {
    pub w_amp: NodeId,
    pub b_amp: NodeId,
    pub w_dec: NodeId,
    pub b_dec: NodeId,
    pub w_freq: NodeId,
    pub b_freq: NodeId,
    pub w_phase: NodeId,
    pub b_phase: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundComp {
    pub w: NodeId,
    pub b: NodeId,
}

#[derive(Debug, Clone)]
pub struct BoundBlock {
    pub fm: Option<BoundFmamba>,
    pub ma: Option<BoundSsm>,
}

/// Node handles for one forward pass, plus the name -> node registry in
/// canonical visit order (the optimizer pairs it with `visit_mut`).
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub blocks: Vec<BoundBlock>,
    pub fusion_w: NodeId,
    pub fusion_b: NodeId,
    pub ilt: Option<BoundIlt>,
    pub comp: Option<BoundComp>,
    pub params: Vec<(String, NodeId)>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub blocks: Vec<FmmBlockParams>,
    pub fusion_w: Tensor,
    pub fusion_b: Tensor,
    pub ilt: Option<IltParams>,
    pub comp: Option<CompParams>,
}

impl Model {
    /// Seeded construction. Draw order is fixed (blocks in order, fm before
    /// ma, then fusion, then the head), so a (seed, config) pair fully
    /// determines every parameter.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Model> {
        cfg.validate()?;
        let (v, n) = (cfg.variates, cfg.state_dim);
        let mut blocks = Vec::with_capacity(cfg.n_fmm_blocks);
        for _ in 0..cfg.n_fmm_blocks {
            let fm = cfg
                .use_fmamba
                .then(|| FmambaParams::init(v, n, cfg.lookback, cfg.filter_init, rng));
            let ma = cfg.use_mamba.then(|| SsmParams::init(v, n, rng));
            blocks.push(FmmBlockParams { fm, ma });
        }
        let fin = cfg.fusion_in();
        let fusion_w = Tensor::fan_in_init(&[fin, cfg.horizon], fin, rng);
        let fusion_b = Tensor::zeros(&[cfg.horizon]);
        let (ilt, comp) = if cfg.use_ilt {
            (Some(IltParams::init(cfg.ilt_modes, rng)), None)
        } else {
            (
                None,
                Some(CompParams {
                    w: Tensor::fan_in_init(&[cfg.horizon, cfg.horizon], cfg.horizon, rng),
                    b: Tensor::zeros(&[cfg.horizon]),
                }),
            )
        };
        Ok(Model {
            cfg: cfg.clone(),
            blocks,
            fusion_w,
            fusion_b,
            ilt,
            comp,
        })
    }

    pub fn visit(&self, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(fm) = &b.fm {
                fm.visit(&format!("blocks.{i}.fm."), f);
            }
            if let Some(ma) = &b.ma {
                ma.visit(&format!("blocks.{i}.ma."), f);
            }
        }
        f(String::from("fusion.w"), &self.fusion_w);
        f(String::from("fusion.b"), &self.fusion_b);
        if let Some(ilt) = &self.ilt {
            ilt.visit("ilt.", f);
        }
        if let Some(comp) = &self.comp {
            f(String::from("comp.w"), &comp.w);
            f(String::from("comp.b"), &comp.b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            if let Some(fm) = &mut b.fm {
                fm.visit_mut(&format!("blocks.{i}.fm."), f);
            }
            if let Some(ma) = &mut b.ma {
                ma.visit_mut(&format!("blocks.{i}.ma."), f);
            }
        }
        f(String::from("fusion.w"), &mut self.fusion_w);
        f(String::from("fusion.b"), &mut self.fusion_b);
        if let Some(ilt) = &mut self.ilt {
            ilt.visit_mut("ilt.", f);
        }
        if let Some(comp) = &mut self.comp {
            f(String::from("comp.w"), &mut comp.w);
            f(String::from("comp.b"), &mut comp.b);
        }
    }

    pub fn n_params(&self) -> usize {
        let mut total = 0;
        self.visit(&mut |_, t| total += t.numel());
        total
    }

    pub fn state_dict(&self) -> BTreeMap<String, Tensor> {
        let mut map = BTreeMap::new();
        self.visit(&mut |name, t| {
            map.insert(name, t.clone());
        });
        map
    }

    /// Strict load: every parameter must be present with its exact shape,
    /// and the map must contain nothing else.
    pub fn load_state_dict(&mut self, map: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut missing: Option<String> = None;
        let mut seen = 0usize;
        self.visit_mut(&mut |name, t| {
            match map.get(&name) {
                Some(src) if src.shape == t.shape => {
                    t.values.copy_from_slice(&src.values);
                    seen += 1;
                }
                Some(src) => {
                    if missing.is_none() {
                        missing = Some(format!(
                            "{name}: shape {:?} does not match stored {:?}",
                            t.shape, src.shape
                        ));
                    }
                }
                None => {
                    if missing.is_none() {
                        missing = Some(format!("{name}: absent from state"));
                    }
                }
            }
        });
        if let Some(message) = missing {
            return Err(CoreError::InvalidArgument {
                op: "load_state_dict",
                message,
            });
        }
        if seen != map.len() {
            return Err(CoreError::InvalidArgument {
                op: "load_state_dict",
                message: format!("state holds {} tensors, model expects {seen}", map.len()),
            });
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        self.bind_with(g, trainable, None)
    }

    /// Binds every parameter as a graph leaf; `override_` substitutes an
    /// existing node for the named parameter, which is how the gradient
    /// checker probes one tensor at a time.
    pub fn bind_with(
        &self,
        g: &mut Graph,
        trainable: bool,
        override_: Option<(&str, NodeId)>,
    ) -> BoundModel {
        let mut params: Vec<(String, NodeId)> = Vec::new();
        let mut leaf = |name: String, t: &Tensor| -> NodeId {
            let id = match override_ {
                Some((oname, oid)) if oname == name => oid,
                _ => g.leaf(t, trainable),
            };
            params.push((name, id));
            id
        };
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let fm = b
                .fm
                .as_ref()
                .map(|fm| fm.bind(&format!("blocks.{i}.fm."), &mut leaf));
            let ma = b
                .ma
                .as_ref()
                .map(|ma| ma.bind(&format!("blocks.{i}.ma."), &mut leaf));
            blocks.push(BoundBlock { fm, ma });
        }
        let fusion_w = leaf(String::from("fusion.w"), &self.fusion_w);
        let fusion_b = leaf(String::from("fusion.b"), &self.fusion_b);
        let ilt = self.ilt.as_ref().map(|p| p.bind("ilt.", &mut leaf));
        let comp = self.comp.as_ref().map(|p| BoundComp {
            w: leaf(String::from("comp.w"), &p.w),
            b: leaf(String::from("comp.b"), &p.b),
        });
        BoundModel {
            blocks,
            fusion_w,
            fusion_b,
            ilt,
            comp,
            params,
        }
    }

    /// End-to-end forward: smooth, encode through every block, fuse to the
    /// horizon, refine with the oscillator head (or the affine fallback).
    pub fn forward(&self, g: &mut Graph, x: NodeId, bound: &BoundModel) -> Result<NodeId> {
        let cfg = &self.cfg;
        let xsh = g.shape(x).to_vec();
        if xsh.len() != 3 || xsh[1] != cfg.lookback || xsh[2] != cfg.variates {
            return Err(CoreError::ShapeMismatch {
                op: "model_forward",
                lhs: xsh,
                rhs: alloc::vec![0, cfg.lookback, cfg.variates],
            });
        }
        if g.values(x).iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite {
                op: "model_forward",
                what: "input",
            });
        }
        let mut h = if cfg.use_rbf && cfg.rbf.enabled {
            g.rbf_smooth(x, &cfg.rbf)?
        } else {
            x
        };
        for block in &bound.blocks {
            h = fmm_block_forward(g, h, block, cfg.rule, cfg.use_fmamba, cfg.use_mamba, cfg.use_ft)?;
        }
        let fused = fuse_and_project(g, h, bound.fusion_w, bound.fusion_b)?;
        if cfg.use_ilt {
            let ilt = bound.ilt.as_ref().ok_or(CoreError::InvalidArgument {
                op: "model_forward",
                message: String::from("head enabled but its parameters were not initialized"),
            })?;
            ilt_head_forward(g, fused, ilt, cfg.horizon)
        } else {
            let comp = bound.comp.as_ref().ok_or(CoreError::InvalidArgument {
                op: "model_forward",
                message: String::from("fallback head requested but not initialized"),
            })?;
            let t = g.transpose_last2(fused)?;
            let p = g.matmul(t, comp.w)?;
            let p = g.add(p, comp.b)?;
            g.transpose_last2(p)
        }
    }
}

/// Sum of the enabled encoder branches over a shared input. With the
/// spectral route off, the filtered branch degrades to a plain scan over
/// its own weights.
pub fn fmm_block_forward(
    g: &mut Graph,
    x: NodeId,
    block: &BoundBlock,
    rule: DiscretizationRule,
    use_fmamba: bool,
    use_mamba: bool,
    use_ft: bool,
) -> Result<NodeId> {
    let fm_out = match (&block.fm, use_fmamba) {
        (Some(fm), true) => Some(if use_ft {
            fmamba::fmamba_encoder_forward(g, x, fm, rule)?
        } else {
            ssm::mamba_encoder_forward(g, x, &fm.ssm, rule)?
        }),
        _ => None,
    };
    let ma_out = match (&block.ma, use_mamba) {
        (Some(ma), true) => Some(ssm::mamba_encoder_forward(g, x, ma, rule)?),
        _ => None,
    };
    match (fm_out, ma_out) {
        (Some(a), Some(b)) => g.add(a, b),
        (Some(a), None) => Ok(a),
        (None, Some(b)) => Ok(b),
        (None, None) => Err(CoreError::InvalidArgument {
            op: "fmm_block_forward",
            message: String::from("both encoder branches are disabled"),
        }),
    }
}

/// Per variate: spectrum of the time lane, nonredundant bins unpacked as
/// re then im, affine map to the horizon. [B, L, V] -> [B, H, V].
pub fn fuse_and_project(
    g: &mut Graph,
    y: NodeId,
    w: NodeId,
    b: NodeId,
) -> Result<NodeId> {
    let lanes = g.transpose_last2(y)?; // [B, V, L]
    let spec = g.rfft_unpack(lanes)?; // [B, V, 2K]
    let proj = g.matmul(spec, w)?; // [B, V, H]
    let proj = g.add(proj, b)?;
    g.transpose_last2(proj)
}

/// Adds a superposition of M damped cosines to the input. Mode parameters
/// come from the horizon-mean of each variate; decay is kept nonnegative
/// so every mode shrinks (or holds) over the normalized grid t = j/H.
pub fn ilt_head_forward(
    g: &mut Graph,
    y: NodeId,
    p: &BoundIlt,
    horizon: usize,
) -> Result<NodeId> {
    let ysh = g.shape(y).to_vec(); // [B, H, V]
    let (bsz, v) = (ysh[0], ysh[2]);
    let m = g.shape(p.w_amp)[0];

    let pooled = g.mean_axis(y, 1)?; // [B, V]
    let pooled = g.reshape(pooled, &[bsz, v, 1])?;

    let mode = |g: &mut Graph, w: NodeId, b: NodeId| -> Result<NodeId> {
        let s = g.mul(pooled, w)?; // [B, V, M]
        g.add(s, b)
    };
    let amp = mode(g, p.w_amp, p.b_amp)?;
    let dec_pre = mode(g, p.w_dec, p.b_dec)?;
    let dec = g.softplus(dec_pre);
    let freq = mode(g, p.w_freq, p.b_freq)?;
    let phase = mode(g, p.w_phase, p.b_phase)?;

    let amp = g.reshape(amp, &[bsz, v, m, 1])?;
    let dec = g.reshape(dec, &[bsz, v, m, 1])?;
    let freq = g.reshape(freq, &[bsz, v, m, 1])?;
    let phase = g.reshape(phase, &[bsz, v, m, 1])?;

    let grid = Tensor::from_fn(&[horizon], |j| j as f64 / horizon as f64);
    let t = g.leaf(&grid, false);

    let st = g.mul(dec, t)?; // [B, V, M, H]
    let st = g.neg(st);
    let envelope = g.exp(st);
    let arg = g.mul(freq, t)?;
    let arg = g.add(arg, phase)?;
    let wave = g.cos(arg);
    let term = g.mul(amp, envelope)?;
    let term = g.mul(term, wave)?;
    let modes = g.sum_axis(term, 2)?; // [B, V, H]
    let contrib = g.transpose_last2(modes)?; // [B, H, V]
    g.add(y, contrib)
}
