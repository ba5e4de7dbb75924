//! Shape-level ops on `[N, C, H, W]` feature maps.

use crate::error::{invalid, shape_err, Result};
use crate::real::Real;
use crate::tensor::{BackwardOp, Tensor};

pub(crate) fn dims4(op: &'static str, t: &Tensor<impl Real>) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => invalid(op, format!("expected [N, C, H, W], got {:?}", t.shape())),
    }
}

struct ConcatBackward {
    channels: Vec<usize>,
}

impl<T: Real> BackwardOp<T> for ConcatBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let shape = inputs[0].shape();
        let (n, plane) = (shape[0], shape[2] * shape[3]);
        let total: usize = self.channels.iter().sum();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(inputs.len());
        for (input, &c) in inputs.iter().zip(&self.channels) {
            if input.requires_grad() {
                let mut gi = Vec::with_capacity(n * c * plane);
                for b in 0..n {
                    let start = (b * total + offset) * plane;
                    gi.extend_from_slice(&g[start..start + c * plane]);
                }
                grads.push(Some(gi));
            } else {
                grads.push(None);
            }
            offset += c;
        }
        grads
    }
}

/// Channel-wise concatenation.
pub fn concat<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = parts.first() else {
        return invalid("concat", "no inputs");
    };
    let [n, _, h, w] = dims4("concat", first)?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let [pn, pc, ph, pw] = dims4("concat", p)?;
        if (pn, ph, pw) != (n, h, w) {
            return shape_err("concat", first.shape(), p.shape());
        }
        channels.push(pc);
    }
    let total: usize = channels.iter().sum();
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total * plane);
    let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
    for b in 0..n {
        for (d, &c) in guards.iter().zip(&channels) {
            data.extend_from_slice(&d[b * c * plane..(b + 1) * c * plane]);
        }
    }
    drop(guards);
    Ok(Tensor::from_op(
        vec![n, total, h, w],
        data,
        parts,
        ConcatBackward { channels },
    ))
}

struct ReshapeBackward;

impl<T: Real> BackwardOp<T> for ReshapeBackward {
    fn backward(&self, _inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
}

pub fn reshape<T: Real>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if shape.iter().product::<usize>() != x.numel() {
        return shape_err("reshape", x.shape(), shape);
    }
    Ok(Tensor::from_op(shape.to_vec(), x.to_vec(), &[x], ReshapeBackward))
}

struct MeanWidthBackward;

impl<T: Real> BackwardOp<T> for MeanWidthBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let w = inputs[0].shape()[3];
        let scale = T::one() / T::of(w as f64);
        let grad = g.iter().flat_map(|v| std::iter::repeat_n(*v * scale, w)).collect();
        vec![Some(grad)]
    }
}

/// Average over the last axis: `[N, C, H, W] -> [N, C, H, 1]`.
pub fn mean_width<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4("mean_width", x)?;
    let data = x
        .data()
        .chunks(w)
        .map(|row| T::of(row.iter().map(|v| v.as_f64()).sum::<f64>() / w as f64))
        .collect();
    Ok(Tensor::from_op(vec![n, c, h, 1], data, &[x], MeanWidthBackward))
}

struct ExpandWidthBackward(usize);

impl<T: Real> BackwardOp<T> for ExpandWidthBackward {
    fn backward(&self, _inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.chunks(self.0).map(|row| row.iter().copied().sum()).collect())]
    }
}

/// Broadcast `[N, C, H, 1]` along the last axis to `[N, C, H, width]`.
pub fn expand_width<T: Real>(x: &Tensor<T>, width: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4("expand_width", x)?;
    if w != 1 {
        return shape_err("expand_width", x.shape(), &[n, c, h, 1]);
    }
    let data = x
        .data()
        .iter()
        .flat_map(|v| std::iter::repeat_n(*v, width))
        .collect();
    Ok(Tensor::from_op(
        vec![n, c, h, width],
        data,
        &[x],
        ExpandWidthBackward(width),
    ))
}

struct SumChannelsBackward;

impl<T: Real> BackwardOp<T> for SumChannelsBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let s = inputs[0].shape();
        let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
        let mut grad = Vec::with_capacity(n * c * plane);
        for b in 0..n {
            for _ in 0..c {
                grad.extend_from_slice(&g[b * plane..(b + 1) * plane]);
            }
        }
        vec![Some(grad)]
    }
}

/// Sum over the channel axis: `[N, C, H, W] -> [N, 1, H, W]`.
pub fn sum_channels<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4("sum_channels", x)?;
    let plane = h * w;
    let src = x.data();
    let mut data = vec![T::zero(); n * plane];
    for b in 0..n {
        let out = &mut data[b * plane..(b + 1) * plane];
        for ch in 0..c {
            let start = (b * c + ch) * plane;
            out.iter_mut()
                .zip(&src[start..start + plane])
                .for_each(|(o, v)| *o += *v);
        }
    }
    drop(src);
    Ok(Tensor::from_op(vec![n, 1, h, w], data, &[x], SumChannelsBackward))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_interleaves_per_batch() {
        let a = Tensor::<f64>::new(vec![1.0, 2.0], &[2, 1, 1, 1]);
        let b = Tensor::<f64>::new(vec![3.0, 4.0, 5.0, 6.0], &[2, 2, 1, 1]);
        let c = concat(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3, 1, 1]);
        assert_eq!(c.to_vec(), vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let b = Tensor::<f64>::zeros(&[1, 1, 2, 3]);
        assert!(concat(&[&a, &b]).is_err());
    }

    #[test]
    fn expand_then_mean_round_trips() {
        let x = Tensor::<f64>::new(vec![1.0, 2.0, 3.0], &[1, 1, 3, 1]);
        let e = expand_width(&x, 4).unwrap();
        assert_eq!(e.shape(), &[1, 1, 3, 4]);
        assert_eq!(mean_width(&e).unwrap().to_vec(), x.to_vec());
    }
}
