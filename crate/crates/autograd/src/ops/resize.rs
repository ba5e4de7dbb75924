use crate::error::{invalid, Result};
use crate::ops::layout::dims4;
use crate::real::Real;
use crate::tensor::{BackwardOp, Tensor};

/// Source taps for one output coordinate (align-corners = false).
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: if hi == lo { 0.0 } else { src - lo as f64 },
            }
        })
        .collect()
}

/// Bilinear resize of a single row-major `h x w` plane to `oh x ow`.
///
/// Same-size resizing is the identity.
pub fn resize_plane<T: Copy + Into<f64>>(src: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w);
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut out = Vec::with_capacity(oh * ow);
    for y in &ty {
        for x in &tx {
            let v00: f64 = src[y.lo * w + x.lo].into();
            let v01: f64 = src[y.lo * w + x.hi].into();
            let v10: f64 = src[y.hi * w + x.lo].into();
            let v11: f64 = src[y.hi * w + x.hi].into();
            let top = v00 + (v01 - v00) * x.frac;
            let bottom = v10 + (v11 - v10) * x.frac;
            out.push(top + (bottom - top) * y.frac);
        }
    }
    out
}

struct ResizeBackward {
    ty: Vec<Tap>,
    tx: Vec<Tap>,
    in_hw: (usize, usize),
}

impl<T: Real> BackwardOp<T> for ResizeBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (h, w) = self.in_hw;
        let (oh, ow) = (self.ty.len(), self.tx.len());
        let planes = inputs[0].numel() / (h * w);
        let mut grad = vec![0.0f64; planes * h * w];
        for p in 0..planes {
            let dst = &mut grad[p * h * w..(p + 1) * h * w];
            let src = &g[p * oh * ow..(p + 1) * oh * ow];
            for (yi, y) in self.ty.iter().enumerate() {
                for (xi, x) in self.tx.iter().enumerate() {
                    let gv = src[yi * ow + xi].as_f64();
                    let (fy, fx) = (y.frac, x.frac);
                    dst[y.lo * w + x.lo] += gv * (1.0 - fy) * (1.0 - fx);
                    dst[y.lo * w + x.hi] += gv * (1.0 - fy) * fx;
                    dst[y.hi * w + x.lo] += gv * fy * (1.0 - fx);
                    dst[y.hi * w + x.hi] += gv * fy * fx;
                }
            }
        }
        vec![Some(grad.into_iter().map(T::of).collect())]
    }
}

/// Differentiable bilinear resize of `[N, C, H, W]` to `[N, C, oh, ow]`
/// (align-corners = false, edge-clamped).
pub fn bilinear_resize<T: Real>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4("bilinear_resize", x)?;
    if oh == 0 || ow == 0 || h == 0 || w == 0 {
        return invalid("bilinear_resize", format!("cannot resize {:?} to {oh}x{ow}", x.shape()));
    }
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    {
        let data = x.data();
        for plane in data.chunks(h * w) {
            for y in &ty {
                let (r0, r1) = (&plane[y.lo * w..(y.lo + 1) * w], &plane[y.hi * w..(y.hi + 1) * w]);
                for t in &tx {
                    let top = r0[t.lo].as_f64() + (r0[t.hi].as_f64() - r0[t.lo].as_f64()) * t.frac;
                    let bot = r1[t.lo].as_f64() + (r1[t.hi].as_f64() - r1[t.lo].as_f64()) * t.frac;
                    out.push(T::of(top + (bot - top) * y.frac));
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        &[x],
        ResizeBackward {
            ty,
            tx,
            in_hw: (h, w),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let data: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect();
        let x = Tensor::new(data.clone(), &[1, 1, 3, 4]);
        assert_eq!(bilinear_resize(&x, 3, 4).unwrap().to_vec(), data);
        assert_eq!(resize_plane(&data, 3, 4, 3, 4), data);
    }

    #[test]
    fn two_by_two_ramp_widened() {
        let x = Tensor::<f64>::new(vec![0.0, 1.0, 0.0, 1.0], &[1, 1, 2, 2]);
        let y = bilinear_resize(&x, 2, 4).unwrap().to_vec();
        assert_eq!(&y[..4], &y[4..]);
        assert!(y[..4].windows(2).all(|p| p[0] <= p[1]));
        assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(&y[..4], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn downsample_averages_pairs() {
        let x = Tensor::<f64>::new(vec![1.0, 3.0, 5.0, 7.0], &[1, 1, 1, 4]);
        let y = bilinear_resize(&x, 1, 2).unwrap().to_vec();
        assert_eq!(y, vec![2.0, 6.0]);
    }
}
