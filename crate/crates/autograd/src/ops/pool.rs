use crate::error::{invalid, Result};
use crate::ops::layout::{concat, dims4};
use crate::real::Real;
use crate::tensor::{BackwardOp, Tensor};

struct MaxPoolBackward {
    // flat input index of the winning element for every output element
    argmax: Vec<usize>,
}

impl<T: Real> BackwardOp<T> for MaxPoolBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut grad = vec![T::zero(); inputs[0].numel()];
        for (&src, gv) in self.argmax.iter().zip(g) {
            grad[src] += *gv;
        }
        vec![Some(grad)]
    }
}

/// Square max pooling with `-inf` padding.
///
/// Gradient goes to the first maximal element in scan order.
pub fn max_pool2d<T: Real>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4("max_pool2d", x)?;
    if kernel == 0 || stride == 0 {
        return invalid("max_pool2d", "kernel and stride must be >= 1");
    }
    if padding >= kernel {
        return invalid("max_pool2d", "padding must be smaller than the kernel");
    }
    if h + 2 * padding < kernel || w + 2 * padding < kernel {
        return invalid(
            "max_pool2d",
            format!("input {:?} smaller than kernel {kernel}", x.shape()),
        );
    }
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane_idx in 0..n * c {
        let base = plane_idx * h * w;
        let plane = &data[base..base + h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = iy as usize * w + ix as usize;
                        if best_idx == usize::MAX || plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(base + best_idx);
            }
        }
    }
    drop(data);
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        &[x],
        MaxPoolBackward { argmax },
    ))
}

/// Spatial pyramid pooling at unchanged spatial size:
/// `[x, pool3(x), pool5(x)]` stacked channel-wise (stride 1, same padding).
pub fn spp<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let p3 = max_pool2d(x, 3, 1, 1)?;
    let p5 = max_pool2d(x, 5, 1, 2)?;
    concat(&[x, &p3, &p5])
}
