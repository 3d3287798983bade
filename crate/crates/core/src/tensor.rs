//! Dense row-major tensors over `f64`.
//!
//! Shapes are plain `Vec<usize>` with no stride tricks: any op needing a
//! different layout copies. Values stay `f64` end to end; the reference
//! oracles (finite differences, naive transforms, step-by-step recurrences)
//! are checked at tolerances f32 cannot hold.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::rng::Rng;

/// Number of elements a shape describes. The empty shape is a scalar.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides, innermost axis contiguous.
pub fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for ax in (0..shape.len()).rev() {
        strides[ax] = acc;
        acc *= shape[ax];
    }
    strides
}

/// Right-aligned broadcast of two shapes; size-1 axes stretch. `None` when
/// the shapes are incompatible.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![1usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// Filled for trainable leaves after a backward pass.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(values: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if values.len() != numel(shape) {
            return Err(CoreError::InvalidArgument {
                op: "Tensor::new",
                message: format!("{} values cannot fill shape {:?}", values.len(), shape),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            values: vec![value; numel(shape)],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            values: vec![value],
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            values: (0..numel(shape)).map(|i| f(i)).collect(),
            grad: None,
        }
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        Tensor::from_fn(shape, |_| rng.uniform_in(lo, hi))
    }

    /// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], the init every
    /// projection in the model uses.
    pub fn fan_in_init(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / crate::math::sqrt(fan_in.max(1) as f64);
        Tensor::uniform(shape, -bound, bound, rng)
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// Element by multi-index; test convenience, panics out of range.
    pub fn at(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let strides = strides_for(&self.shape);
        let mut off = 0;
        for (ax, &i) in idx.iter().enumerate() {
            assert!(i < self.shape[ax], "index {idx:?} out of shape {:?}", self.shape);
            off += i * strides[ax];
        }
        self.values[off]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numel_of_scalar_shape_is_one() {
        assert_eq!(numel(&[]), 1);
        assert_eq!(numel(&[2, 3, 4]), 24);
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(vec![1.0, 2.0], &[3]).is_err());
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes(&[2, 1, 3], &[4, 3]), Some(vec![2, 4, 3]));
        assert_eq!(broadcast_shapes(&[2, 3], &[2, 3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shapes(&[], &[5]), Some(vec![5]));
        assert_eq!(broadcast_shapes(&[2, 3], &[3, 3]), None);
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides_for(&[2, 3, 4]), vec![12, 4, 1]);
    }

    #[test]
    fn fan_in_init_stays_in_bound() {
        let mut rng = Rng::new(1);
        let t = Tensor::fan_in_init(&[64], 16, &mut rng);
        let bound = 0.25;
        assert!(t.values.iter().all(|v| v.abs() <= bound));
        assert!(t.values.iter().any(|v| v.abs() > bound * 0.1));
    }
}
