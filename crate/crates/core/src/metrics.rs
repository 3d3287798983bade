//! Evaluation metrics and the training loss.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::graph::{Graph, NodeId};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    /// None when either side is constant: correlation is undefined there,
    /// and reporting 0 would fake a measurement.
    pub pearson: Option<f64>,
}

fn check_same_shape(op: &'static str, pred: &Tensor, truth: &Tensor) -> Result<()> {
    if pred.shape != truth.shape {
        return Err(CoreError::ShapeMismatch {
            op,
            lhs: pred.shape.clone(),
            rhs: truth.shape.clone(),
        });
    }
    Ok(())
}

fn metrics_of(pred: &[f64], truth: &[f64]) -> Metrics {
    let n = pred.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    for (p, t) in pred.iter().zip(truth.iter()) {
        let d = p - t;
        se += d * d;
        ae += math::abs(d);
    }
    let mse = se / n;
    let mae = ae / n;

    let mean_p = pred.iter().sum::<f64>() / n;
    let mean_t = truth.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_p = 0.0;
    let mut var_t = 0.0;
    for (p, t) in pred.iter().zip(truth.iter()) {
        let dp = p - mean_p;
        let dt = t - mean_t;
        cov += dp * dt;
        var_p += dp * dp;
        var_t += dt * dt;
    }
    let pearson = if var_p > 0.0 && var_t > 0.0 {
        Some((cov / math::sqrt(var_p * var_t)).clamp(-1.0, 1.0))
    } else {
        None
    };
    Metrics { mse, mae, pearson }
}

/// Flattened-pair metrics over two equally shaped tensors.
pub fn metrics(pred: &Tensor, truth: &Tensor) -> Result<Metrics> {
    check_same_shape("metrics", pred, truth)?;
    if pred.values.is_empty() {
        return Err(CoreError::InvalidArgument {
            op: "metrics",
            message: alloc::string::String::from("empty tensors have no metrics"),
        });
    }
    Ok(metrics_of(&pred.values, &truth.values))
}

/// Per-step metrics along the horizon axis of [B, H, V] predictions.
pub fn horizon_profile(pred: &Tensor, truth: &Tensor) -> Result<Vec<Metrics>> {
    check_same_shape("horizon_profile", pred, truth)?;
    if pred.rank() != 3 {
        return Err(CoreError::InvalidArgument {
            op: "horizon_profile",
            message: alloc::format!("expected [B, H, V], got {:?}", pred.shape),
        });
    }
    let (b, h, v) = (pred.shape[0], pred.shape[1], pred.shape[2]);
    let mut out = Vec::with_capacity(h);
    let mut ps = Vec::with_capacity(b * v);
    let mut ts = Vec::with_capacity(b * v);
    for j in 0..h {
        ps.clear();
        ts.clear();
        for bi in 0..b {
            let row = (bi * h + j) * v;
            ps.extend_from_slice(&pred.values[row..row + v]);
            ts.extend_from_slice(&truth.values[row..row + v]);
        }
        out.push(metrics_of(&ps, &ts));
    }
    Ok(out)
}

/// Mean squared error as a graph node, differentiable through `pred`.
pub fn mse_loss(g: &mut Graph, pred: NodeId, truth: NodeId) -> Result<NodeId> {
    if g.shape(pred) != g.shape(truth) {
        return Err(CoreError::ShapeMismatch {
            op: "mse_loss",
            lhs: g.shape(pred).to_vec(),
            rhs: g.shape(truth).to_vec(),
        });
    }
    let diff = g.sub(pred, truth)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean_all(sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::grad_check;
    use crate::rng::Rng;
    use alloc::vec;

    #[test]
    fn identical_series_score_perfectly() {
        let t = Tensor::new(vec![1.0, 2.0, 5.0, -1.0], &[4]).unwrap();
        let m = metrics(&t, &t).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.mae, 0.0);
        assert!((m.pearson.unwrap() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn anti_correlated_series_score_minus_one() {
        let truth = Tensor::new(vec![1.0, -1.0, 2.0, -2.0], &[4]).unwrap();
        let pred = Tensor::new(vec![-1.0, 1.0, -2.0, 2.0], &[4]).unwrap();
        let m = metrics(&pred, &truth).unwrap();
        assert!((m.pearson.unwrap() + 1.0).abs() <= 1e-15);
    }

    #[test]
    fn hand_computed_errors() {
        let pred = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let truth = Tensor::new(vec![0.0, 0.0], &[2]).unwrap();
        let m = metrics(&pred, &truth).unwrap();
        assert_eq!(m.mse, 2.5);
        assert_eq!(m.mae, 1.5);
    }

    #[test]
    fn constant_input_marks_correlation_undefined() {
        let pred = Tensor::new(vec![3.0, 3.0, 3.0], &[3]).unwrap();
        let truth = Tensor::new(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        assert_eq!(metrics(&pred, &truth).unwrap().pearson, None);
        assert_eq!(metrics(&truth, &pred).unwrap().pearson, None);
    }

    #[test]
    fn errors_bounded_by_worst_residual() {
        let mut rng = Rng::new(7);
        let pred = Tensor::uniform(&[40], -2.0, 2.0, &mut rng);
        let truth = Tensor::uniform(&[40], -2.0, 2.0, &mut rng);
        let m = metrics(&pred, &truth).unwrap();
        let worst = pred
            .values
            .iter()
            .zip(truth.values.iter())
            .map(|(p, t)| (p - t).abs())
            .fold(0.0f64, f64::max);
        assert!(m.mae <= worst + 1e-15);
        assert!(m.mse <= worst * worst + 1e-15);
    }

    #[test]
    fn horizon_profile_isolates_each_step() {
        // Step 0 perfect, step 1 off by 2 everywhere.
        let pred = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 2, 2]).unwrap();
        let truth = Tensor::new(vec![1.0, 2.0, 1.0, 2.0], &[1, 2, 2]).unwrap();
        let prof = horizon_profile(&pred, &truth).unwrap();
        assert_eq!(prof.len(), 2);
        assert_eq!(prof[0].mse, 0.0);
        assert_eq!(prof[1].mse, 4.0);
        assert_eq!(prof[1].mae, 2.0);
    }

    #[test]
    fn loss_reference_values() {
        let mut g = Graph::new();
        let p = g.constant(vec![1.0, 2.0], &[2]).unwrap();
        let t = g.constant(vec![0.0, 0.0], &[2]).unwrap();
        let l = mse_loss(&mut g, p, t).unwrap();
        assert_eq!(g.values(l)[0], 2.5);
        let same = mse_loss(&mut g, p, p).unwrap();
        assert_eq!(g.values(same)[0], 0.0);
    }

    #[test]
    fn loss_gradient_is_two_residual_over_count() {
        let pred_t = Tensor::new(vec![1.0, -2.0, 0.5, 4.0], &[2, 2]).unwrap();
        let truth_t = Tensor::new(vec![0.0, 1.0, 0.5, -1.0], &[2, 2]).unwrap();
        let mut g = Graph::new();
        let p = g.leaf(&pred_t, true);
        let t = g.leaf(&truth_t, false);
        let l = mse_loss(&mut g, p, t).unwrap();
        g.backward(l).unwrap();
        let grad = g.grad(p).unwrap();
        for i in 0..4 {
            let want = 2.0 * (pred_t.values[i] - truth_t.values[i]) / 4.0;
            assert!((grad[i] - want).abs() <= 1e-15);
        }
        let err = grad_check(
            |g, p| {
                let t = g.leaf(&truth_t, false);
                mse_loss(g, p, t)
            },
            &pred_t,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-8, "loss grad err {err}");
    }

    #[test]
    fn loss_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let p = g.constant(vec![0.0; 4], &[2, 2]).unwrap();
        let t = g.constant(vec![0.0; 4], &[4]).unwrap();
        assert!(matches!(
            mse_loss(&mut g, p, t),
            Err(CoreError::ShapeMismatch { .. })
        ));
    }
}
