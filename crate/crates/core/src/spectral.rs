//! Discrete Fourier machinery: a naive O(L^2) reference transform, a radix-2
//! FFT over zero-padded buffers, and the learnable half-spectrum filter that
//! reweights a real signal in the frequency domain.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use crate::error::{CoreError, Result};
use crate::math;
use crate::tensor::{numel, Tensor};

/// Split-layout complex tensor: separate real and imaginary buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    pub shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = numel(shape);
        ComplexTensor {
            shape: shape.to_vec(),
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn from_real(t: &Tensor) -> Self {
        ComplexTensor {
            shape: t.shape.clone(),
            re: t.values.clone(),
            im: vec![0.0; t.values.len()],
        }
    }

    pub fn numel(&self) -> usize {
        self.re.len()
    }
}

/// Smallest power of two that holds a lane of `len` samples.
pub fn padded_len(len: usize) -> usize {
    len.max(1).next_power_of_two()
}

/// Nonredundant bins of a real transform at padded length `padded`.
pub fn n_bins(padded: usize) -> usize {
    padded / 2 + 1
}

fn last_axis(shape: &[usize]) -> Result<usize> {
    match shape.last() {
        Some(&l) if l > 0 => Ok(l),
        _ => Err(CoreError::InvalidArgument {
            op: "spectral",
            message: format!("need a nonempty last axis, got shape {shape:?}"),
        }),
    }
}

/// O(L^2) reference transform of a 1-d complex signal: bin k accumulates
/// x[n] e^(-i 2 pi k n / L). Deliberately naive; the FFT is tested against
/// it and this routine must stay independent of the fast path.
pub fn dft_naive(x: &ComplexTensor) -> Result<ComplexTensor> {
    if x.shape.len() != 1 {
        return Err(CoreError::InvalidArgument {
            op: "dft_naive",
            message: format!("expects a 1-d signal, got shape {:?}", x.shape),
        });
    }
    let l = x.shape[0];
    let mut out = ComplexTensor::zeros(&x.shape);
    for k in 0..l {
        let mut sum_re = 0.0;
        let mut sum_im = 0.0;
        for n in 0..l {
            let ang = -TAU * (k as f64) * (n as f64) / (l as f64);
            let (c, s) = (math::cos(ang), math::sin(ang));
            sum_re += x.re[n] * c - x.im[n] * s;
            sum_im += x.re[n] * s + x.im[n] * c;
        }
        out.re[k] = sum_re;
        out.im[k] = sum_im;
    }
    Ok(out)
}

/// In-place iterative radix-2 transform; length must be a power of two.
/// The inverse applies the 1/n normalization.
pub(crate) fn fft_inplace(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two(), "fft length {n} not a power of two");
    debug_assert_eq!(n, im.len());
    if n <= 1 {
        return;
    }
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    // One half-size twiddle table; every stage reads it at a stride, which
    // avoids the drift of incrementally rotated twiddles.
    let sign = if inverse { 1.0 } else { -1.0 };
    let half = n / 2;
    let mut tw_re = Vec::with_capacity(half);
    let mut tw_im = Vec::with_capacity(half);
    for k in 0..half {
        let ang = sign * TAU * k as f64 / n as f64;
        tw_re.push(math::cos(ang));
        tw_im.push(math::sin(ang));
    }
    let mut len = 2;
    while len <= n {
        let stride = n / len;
        for base in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let (wr, wi) = (tw_re[k * stride], tw_im[k * stride]);
                let a = base + k;
                let b = a + len / 2;
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
    if inverse {
        let inv = 1.0 / n as f64;
        for v in re.iter_mut() {
            *v *= inv;
        }
        for v in im.iter_mut() {
            *v *= inv;
        }
    }
}

/// Zero-pads each lane of the last axis to the next power of two and
/// transforms it. Tests comparing against `dft_naive` must pad the naive
/// input to the same length themselves.
pub fn fft_forward(x: &Tensor) -> Result<ComplexTensor> {
    let l = last_axis(&x.shape)?;
    let p = padded_len(l);
    let lanes = x.values.len() / l;
    let mut shape = x.shape.clone();
    *shape.last_mut().unwrap() = p;
    let mut out = ComplexTensor::zeros(&shape);
    for lane in 0..lanes {
        let dst = &mut out.re[lane * p..lane * p + l];
        dst.copy_from_slice(&x.values[lane * l..(lane + 1) * l]);
        fft_inplace(
            &mut out.re[lane * p..(lane + 1) * p],
            &mut out.im[lane * p..(lane + 1) * p],
            false,
        );
    }
    Ok(out)
}

/// Inverse transform of each lane, truncated back to `out_len` samples of
/// the real part. The last axis must be a power of two.
pub fn ifft_inverse(x: &ComplexTensor, out_len: usize) -> Result<Tensor> {
    let p = last_axis(&x.shape)?;
    if !p.is_power_of_two() {
        return Err(CoreError::InvalidArgument {
            op: "ifft_inverse",
            message: format!("last axis {p} is not a power of two"),
        });
    }
    if out_len > p {
        return Err(CoreError::InvalidArgument {
            op: "ifft_inverse",
            message: format!("cannot truncate length {p} to {out_len}"),
        });
    }
    let lanes = x.numel() / p;
    let mut shape = x.shape.clone();
    *shape.last_mut().unwrap() = out_len;
    let mut out = Tensor::zeros(&shape);
    let mut re = vec![0.0; p];
    let mut im = vec![0.0; p];
    for lane in 0..lanes {
        re.copy_from_slice(&x.re[lane * p..(lane + 1) * p]);
        im.copy_from_slice(&x.im[lane * p..(lane + 1) * p]);
        fft_inplace(&mut re, &mut im, true);
        out.values[lane * out_len..(lane + 1) * out_len].copy_from_slice(&re[..out_len]);
    }
    Ok(out)
}

/// Learnable half-spectrum weights applied to a real signal's transform.
///
/// Only bins `0..=P/2` are stored; the upper half of the spectrum gets the
/// mirrored conjugate, which keeps the filtered spectrum Hermitian and the
/// inverse transform real. A Hermitian spectrum has no imaginary freedom at
/// the two self-conjugate bins (DC and the fold bin), so those entries of
/// `im` are ignored and receive zero gradient.
///
/// Shape is either `[n_bins]` (one filter shared by every lane) or
/// `[rows, n_bins]` (one filter per position along the second-to-last axis
/// of the filtered tensor).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFilter {
    pub re: Tensor,
    pub im: Tensor,
}

impl SpectralFilter {
    /// The do-nothing filter: weight 1+0i in every bin.
    pub fn identity(n_bins: usize) -> Self {
        SpectralFilter {
            re: Tensor::full(&[n_bins], 1.0),
            im: Tensor::zeros(&[n_bins]),
        }
    }

    /// One identity filter per row.
    pub fn identity_rows(rows: usize, n_bins: usize) -> Self {
        SpectralFilter {
            re: Tensor::full(&[rows, n_bins], 1.0),
            im: Tensor::zeros(&[rows, n_bins]),
        }
    }

    pub fn n_bins(&self) -> usize {
        *self.re.shape.last().unwrap_or(&0)
    }

    pub fn rows(&self) -> usize {
        if self.re.rank() == 2 {
            self.re.shape[0]
        } else {
            1
        }
    }
}

pub(crate) fn is_self_conjugate(k: usize, padded: usize) -> bool {
    k == 0 || 2 * k == padded
}

/// Filters one real lane in place of the scratch buffers:
/// pad, transform, reweight the low bins, mirror, inverse-transform.
/// `conj_filter` applies the conjugated weights (the adjoint of the map).
pub(crate) fn filter_lane(
    src: &[f64],
    w_re: &[f64],
    w_im: &[f64],
    padded: usize,
    conj_filter: bool,
    scratch_re: &mut [f64],
    scratch_im: &mut [f64],
    out: &mut [f64],
) {
    let l = src.len();
    let bins = n_bins(padded);
    debug_assert_eq!(w_re.len(), bins);
    debug_assert_eq!(scratch_re.len(), padded);
    scratch_re[..l].copy_from_slice(src);
    scratch_re[l..].fill(0.0);
    scratch_im.fill(0.0);
    fft_inplace(scratch_re, scratch_im, false);
    let sign = if conj_filter { -1.0 } else { 1.0 };
    for k in 0..bins {
        let wi = if is_self_conjugate(k, padded) {
            0.0
        } else {
            sign * w_im[k]
        };
        let wr = w_re[k];
        let (xr, xi) = (scratch_re[k], scratch_im[k]);
        scratch_re[k] = wr * xr - wi * xi;
        scratch_im[k] = wr * xi + wi * xr;
    }
    // Mirror the conjugates onto the upper half so the spectrum stays
    // Hermitian regardless of rounding in the forward transform.
    for k in bins..padded {
        scratch_re[k] = scratch_re[padded - k];
        scratch_im[k] = -scratch_im[padded - k];
    }
    fft_inplace(scratch_re, scratch_im, true);
    #[cfg(debug_assertions)]
    {
        // Realness of the output is only a meaningful invariant on finite
        // data; non-finite values pass through the transform linearly and
        // are caught downstream by the loss check.
        let scale = scratch_re.iter().fold(1.0f64, |m, v| m.max(math::abs(*v)));
        if scale.is_finite() {
            for v in scratch_im.iter().filter(|v| v.is_finite()) {
                debug_assert!(
                    math::abs(*v) <= 1e-10 * scale,
                    "imaginary residue {v} above tolerance"
                );
            }
        }
    }
    out.copy_from_slice(&scratch_re[..l]);
}

/// Frequency-domain reweighting of each last-axis lane:
/// inverse-transform(mirror(weights * transform(lane))).
pub fn kernel_integral(x: &Tensor, filter: &SpectralFilter) -> Result<Tensor> {
    let l = last_axis(&x.shape)?;
    let p = padded_len(l);
    let bins = n_bins(p);
    if filter.n_bins() != bins {
        return Err(CoreError::ShapeMismatch {
            op: "kernel_integral",
            lhs: filter.re.shape.clone(),
            rhs: vec![bins],
        });
    }
    let rows = filter.rows();
    if rows > 1 {
        let ok = x.shape.len() >= 2 && x.shape[x.shape.len() - 2] == rows;
        if !ok {
            return Err(CoreError::ShapeMismatch {
                op: "kernel_integral",
                lhs: x.shape.clone(),
                rhs: filter.re.shape.clone(),
            });
        }
    }
    let lanes = x.values.len() / l;
    let mut out = Tensor::zeros(&x.shape);
    let mut sr = vec![0.0; p];
    let mut si = vec![0.0; p];
    for lane in 0..lanes {
        let row = if rows > 1 { lane % rows } else { 0 };
        filter_lane(
            &x.values[lane * l..(lane + 1) * l],
            &filter.re.values[row * bins..(row + 1) * bins],
            &filter.im.values[row * bins..(row + 1) * bins],
            p,
            false,
            &mut sr,
            &mut si,
            &mut out.values[lane * l..(lane + 1) * l],
        );
    }
    Ok(out)
}

/// Real-input transform of one lane: pads to `padded`, writes the
/// nonredundant bins.
pub(crate) fn rfft_lane(
    src: &[f64],
    padded: usize,
    scratch_re: &mut [f64],
    scratch_im: &mut [f64],
    out_re: &mut [f64],
    out_im: &mut [f64],
) {
    let l = src.len();
    let bins = n_bins(padded);
    scratch_re[..l].copy_from_slice(src);
    scratch_re[l..].fill(0.0);
    scratch_im.fill(0.0);
    fft_inplace(scratch_re, scratch_im, false);
    out_re.copy_from_slice(&scratch_re[..bins]);
    out_im.copy_from_slice(&scratch_im[..bins]);
}

/// Adjoint of `rfft_lane` as a map from low-bin (re, im) pairs back to the
/// real signal: accumulates sum_k g_re[k] cos(2 pi k n / P) - g_im[k]
/// sin(2 pi k n / P) into `out`, evaluated with one inverse transform.
pub(crate) fn rfft_adjoint_lane(
    g_re: &[f64],
    g_im: &[f64],
    padded: usize,
    scratch_re: &mut [f64],
    scratch_im: &mut [f64],
    out: &mut [f64],
) {
    let bins = n_bins(padded);
    debug_assert_eq!(g_re.len(), bins);
    scratch_re[..bins].copy_from_slice(g_re);
    scratch_re[bins..].fill(0.0);
    scratch_im[..bins].copy_from_slice(g_im);
    scratch_im[bins..].fill(0.0);
    fft_inplace(scratch_re, scratch_im, true);
    let p = padded as f64;
    for (o, r) in out.iter_mut().zip(scratch_re.iter()) {
        *o += p * *r;
    }
}
