//! Gaussian-kernel smoothing along the time axis.
//!
//! A fixed (non-learnable) weighted moving average: weight e^(-d^2/(2 bw^2))
//! at offset d, renormalized over whichever neighbors fall inside the series
//! at the boundaries. Applied to model inputs only; targets are never
//! smoothed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfConfig {
    pub radius: usize,
    pub bandwidth: f64,
    /// Model-level switch; the kernel itself always runs when called.
    pub enabled: bool,
}

impl Default for RbfConfig {
    fn default() -> Self {
        RbfConfig {
            radius: 2,
            bandwidth: 1.0,
            enabled: true,
        }
    }
}

impl RbfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(CoreError::InvalidArgument {
                op: "rbf_smooth",
                message: format!("bandwidth must be positive and finite, got {}", self.bandwidth),
            });
        }
        Ok(())
    }
}

/// Offset weights for d in -radius..=radius and, per time index, the sum of
/// in-range weights that renormalizes the window at the edges.
pub(crate) fn kernel_and_norms(cfg: &RbfConfig, len: usize) -> (Vec<f64>, Vec<f64>) {
    let r = cfg.radius as isize;
    let two_bw2 = 2.0 * cfg.bandwidth * cfg.bandwidth;
    let kernel: Vec<f64> = (-r..=r)
        .map(|d| math::exp(-((d * d) as f64) / two_bw2))
        .collect();
    let mut norms = vec![0.0; len];
    for (t, norm) in norms.iter_mut().enumerate() {
        for (w, d) in kernel.iter().zip(-r..=r) {
            let s = t as isize + d;
            if s >= 0 && (s as usize) < len {
                *norm += w;
            }
        }
    }
    (kernel, norms)
}

/// Smooths each variate of a [B, L, V] tensor along the L axis.
pub fn rbf_smooth(x: &Tensor, cfg: &RbfConfig) -> Result<Tensor> {
    cfg.validate()?;
    if x.rank() != 3 {
        return Err(CoreError::InvalidArgument {
            op: "rbf_smooth",
            message: format!("expects [batch, len, variates], got shape {:?}", x.shape),
        });
    }
    let (b, l, v) = (x.shape[0], x.shape[1], x.shape[2]);
    let (kernel, norms) = kernel_and_norms(cfg, l);
    let r = cfg.radius as isize;
    let mut out = Tensor::zeros(&x.shape);
    for bi in 0..b {
        for t in 0..l {
            let dst = bi * l * v + t * v;
            for (w, d) in kernel.iter().zip(-r..=r) {
                let s = t as isize + d;
                if s >= 0 && (s as usize) < l {
                    let src = bi * l * v + (s as usize) * v;
                    for vi in 0..v {
                        out.values[dst + vi] += w * x.values[src + vi];
                    }
                }
            }
            for vi in 0..v {
                out.values[dst + vi] /= norms[t];
            }
        }
    }
    Ok(out)
}
