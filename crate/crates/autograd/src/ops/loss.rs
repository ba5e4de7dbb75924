use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::{BackwardOp, Tensor};

/// Probabilities are clipped to `[BCE_CLIP, 1 - BCE_CLIP]` before the logs.
pub const BCE_CLIP: f64 = 1e-7;

struct BceBackward;

impl<T: Real> BackwardOp<T> for BceBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (pred, target) = (&inputs[0], &inputs[1]);
        let scale = g[0].as_f64() / pred.numel() as f64;
        let gp = pred.requires_grad().then(|| {
            pred.data()
                .iter()
                .zip(target.data().iter())
                .map(|(p, t)| {
                    let p = p.as_f64().clamp(BCE_CLIP, 1.0 - BCE_CLIP);
                    T::of(scale * (p - t.as_f64()) / (p * (1.0 - p)))
                })
                .collect()
        });
        let gt = target.requires_grad().then(|| {
            pred.data()
                .iter()
                .map(|p| {
                    let p = p.as_f64().clamp(BCE_CLIP, 1.0 - BCE_CLIP);
                    T::of(scale * ((1.0 - p).ln() - p.ln()))
                })
                .collect()
        });
        vec![gp, gt]
    }
}

/// Mean binary cross-entropy over every element of a `[N, ...]` batch.
///
/// Averaging per sample over `H * W` and then over the batch equals the
/// plain mean because every sample has the same size.
pub fn bce<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return shape_err("bce", pred.shape(), target.shape());
    }
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data().iter())
        .map(|(p, t)| {
            let p = p.as_f64().clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            let t = t.as_f64();
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    let loss = -total / pred.numel() as f64;
    Ok(Tensor::from_op(vec![], vec![T::of(loss)], &[pred, target], BceBackward))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_half_is_ln2() {
        let p = Tensor::<f64>::full(&[2, 1, 3, 3], 0.5);
        let loss = bce(&p, &p).unwrap().item();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let t = Tensor::<f64>::new(vec![0.0, 1.0, 1.0, 0.0], &[1, 1, 2, 2]);
        let loss = bce(&t, &t).unwrap().item();
        assert!(loss < 1e-6, "{loss}");
    }
}
