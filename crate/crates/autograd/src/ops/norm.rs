use crate::error::{shape_err, Result};
use crate::ops::layout::dims4;
use crate::real::Real;
use crate::tensor::{BackwardOp, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running statistics used in evaluation mode.
#[derive(Debug, Clone)]
pub struct RunningStats<T: Real> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
        }
    }
}

struct BatchNormBackward<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    training: bool,
    dims: [usize; 4],
}

impl<T: Real> BackwardOp<T> for BatchNormBackward<T> {
    fn backward(&self, inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let [n, c, h, w] = self.dims;
        let plane = h * w;
        let count = (n * plane) as f64;
        let gamma = inputs[1].data();
        // per-channel sum(dy) and sum(dy * x_hat)
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for b in 0..n {
            for ch in 0..c {
                let start = (b * c + ch) * plane;
                for i in start..start + plane {
                    let dy = g[i].as_f64();
                    sum_dy[ch] += dy;
                    sum_dy_xhat[ch] += dy * self.x_hat[i].as_f64();
                }
            }
        }
        let gx = inputs[0].requires_grad().then(|| {
            let mut gx = vec![T::zero(); g.len()];
            for b in 0..n {
                for ch in 0..c {
                    let start = (b * c + ch) * plane;
                    let scale = gamma[ch].as_f64() * self.inv_std[ch].as_f64();
                    if self.training {
                        let mean_dy = sum_dy[ch] / count;
                        let mean_dy_xhat = sum_dy_xhat[ch] / count;
                        for i in start..start + plane {
                            let v = g[i].as_f64() - mean_dy - self.x_hat[i].as_f64() * mean_dy_xhat;
                            gx[i] = T::of(scale * v);
                        }
                    } else {
                        for i in start..start + plane {
                            gx[i] = T::of(scale * g[i].as_f64());
                        }
                    }
                }
            }
            gx
        });
        let gg = inputs[1]
            .requires_grad()
            .then(|| sum_dy_xhat.iter().map(|v| T::of(*v)).collect());
        let gb = inputs[2]
            .requires_grad()
            .then(|| sum_dy.iter().map(|v| T::of(*v)).collect());
        vec![gx, gg, gb]
    }
}

/// Batch normalization over `[N, C, H, W]`.
///
/// Training mode normalizes by the batch mean and biased variance and folds
/// them into `stats` (momentum 0.1, unbiased variance); evaluation mode uses
/// `stats` as-is.
pub fn batch_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    training: bool,
) -> Result<Tensor<T>> {
    let dims = dims4("batch_norm", x)?;
    let [n, c, h, w] = dims;
    for p in [gamma, beta, &stats.mean, &stats.var] {
        if p.shape() != [c] {
            return shape_err("batch_norm", x.shape(), p.shape());
        }
    }
    let plane = h * w;
    let count = n * plane;
    let xd = x.data();

    let (mean, var): (Vec<f64>, Vec<f64>) = if training {
        let mut mean = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for b in 0..n {
            for ch in 0..c {
                let start = (b * c + ch) * plane;
                mean[ch] += xd[start..start + plane].iter().map(|v| v.as_f64()).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for b in 0..n {
            for ch in 0..c {
                let start = (b * c + ch) * plane;
                sq[ch] += xd[start..start + plane]
                    .iter()
                    .map(|v| (v.as_f64() - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let var: Vec<f64> = sq.iter().map(|s| s / count as f64).collect();
        let unbiased: Vec<f64> = sq
            .iter()
            .map(|s| if count > 1 { s / (count - 1) as f64 } else { 0.0 })
            .collect();
        stats.mean.update(|rm| {
            for (r, m) in rm.iter_mut().zip(&mean) {
                *r = T::of((1.0 - BN_MOMENTUM) * r.as_f64() + BN_MOMENTUM * m);
            }
        });
        stats.var.update(|rv| {
            for (r, v) in rv.iter_mut().zip(&unbiased) {
                *r = T::of((1.0 - BN_MOMENTUM) * r.as_f64() + BN_MOMENTUM * v);
            }
        });
        (mean, var)
    } else {
        (
            stats.mean.data().iter().map(|v| v.as_f64()).collect(),
            stats.var.data().iter().map(|v| v.as_f64()).collect(),
        )
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let gd = gamma.data();
    let bd = beta.data();
    let mut x_hat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * plane;
            let (g, bb) = (gd[ch].as_f64(), bd[ch].as_f64());
            for i in start..start + plane {
                let xh = (xd[i].as_f64() - mean[ch]) * inv_std[ch];
                x_hat[i] = T::of(xh);
                out[i] = T::of(g * xh + bb);
            }
        }
    }
    drop((xd, gd, bd));
    Ok(Tensor::from_op(
        vec![n, c, h, w],
        out,
        &[x, gamma, beta],
        BatchNormBackward {
            x_hat,
            inv_std: inv_std.into_iter().map(T::of).collect(),
            training,
            dims,
        },
    ))
}
