use crate::error::{invalid, shape_err, Result};
use crate::ops::layout::dims4;
use crate::real::{matmul, Real};
use crate::tensor::{BackwardOp, Tensor};

/// Kernel geometry shared by convolution and transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return invalid(op, format!("kernel and stride must be >= 1, got {self:?}"));
        }
        Ok(())
    }

    /// Output size of a forward convolution over an `h x w` input.
    pub fn conv_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding.0;
        let pw = w + 2 * self.padding.1;
        if ph < self.kernel.0 || pw < self.kernel.1 {
            return None;
        }
        Some((
            (ph - self.kernel.0) / self.stride.0 + 1,
            (pw - self.kernel.1) / self.stride.1 + 1,
        ))
    }

    /// Output size of a transposed convolution over an `h x w` input.
    pub fn transpose_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if h == 0 || w == 0 {
            return None;
        }
        let oh = ((h - 1) * self.stride.0 + self.kernel.0).checked_sub(2 * self.padding.0)?;
        let ow = ((w - 1) * self.stride.1 + self.kernel.1).checked_sub(2 * self.padding.1)?;
        (oh > 0 && ow > 0).then_some((oh, ow))
    }
}

/// Spatial bookkeeping for one im2col unfolding: an `h x w` image scanned
/// into `oh x ow` kernel positions.
#[derive(Clone, Copy)]
struct Unfold {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    g: ConvGeometry,
}

impl Unfold {
    fn rows(&self) -> usize {
        self.c * self.g.kernel.0 * self.g.kernel.1
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn im2col<T: Real>(&self, img: &[T], cols: &mut [T]) {
        let (kh, kw) = self.g.kernel;
        let (sh, sw) = self.g.stride;
        let (ph, pw) = self.g.padding;
        let npos = self.cols();
        for ch in 0..self.c {
            let plane = &img[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (ch * kh + ky) * kw + kx;
                    let dst = &mut cols[row * npos..(row + 1) * npos];
                    for oy in 0..self.oh {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Unfold::im2col`]: scatter-add columns back into `img`.
    fn col2im<T: Real>(&self, cols: &[T], img: &mut [T]) {
        let (kh, kw) = self.g.kernel;
        let (sh, sw) = self.g.stride;
        let (ph, pw) = self.g.padding;
        let npos = self.cols();
        for ch in 0..self.c {
            let plane = &mut img[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (ch * kh + ky) * kw + kx;
                    let src = &cols[row * npos..(row + 1) * npos];
                    for oy in 0..self.oh {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &src[oy * self.ow..(oy + 1) * self.ow];
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter().enumerate() {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, b) in out.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += *b);
    }
}

fn bias_grad<T: Real>(g: &[T], n: usize, o: usize, plane: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; o];
    for b in 0..n {
        for (oc, a) in acc.iter_mut().enumerate() {
            let start = (b * o + oc) * plane;
            *a += g[start..start + plane].iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    acc.into_iter().map(T::of).collect()
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Tensor<T>>, o: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [o] => shape_err(op, b.shape(), &[o]),
        _ => Ok(()),
    }
}

struct Conv2dBackward {
    unfold: Unfold,
    n: usize,
    o: usize,
}

impl<T: Real> BackwardOp<T> for Conv2dBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let u = self.unfold;
        let (rows, npos) = (u.rows(), u.cols());
        let img = u.c * u.h * u.w;
        let xd = x.data();
        let wd = w.data();
        let mut cols = vec![T::zero(); rows * npos];
        let mut gx = x.requires_grad().then(|| vec![T::zero(); x.numel()]);
        let mut gw = w.requires_grad().then(|| vec![T::zero(); w.numel()]);
        for b in 0..self.n {
            let gy = &g[b * self.o * npos..(b + 1) * self.o * npos];
            if let Some(gw) = gw.as_mut() {
                u.im2col(&xd[b * img..(b + 1) * img], &mut cols);
                // dW (o x rows) += gy (o x npos) * cols^T
                matmul(self.o, npos, rows, gy, false, &cols, true, gw, true);
            }
            if let Some(gx) = gx.as_mut() {
                // dcols (rows x npos) = W^T * gy
                matmul(rows, self.o, npos, &wd, true, gy, false, &mut cols, false);
                u.col2im(&cols, &mut gx[b * img..(b + 1) * img]);
            }
        }
        let mut grads = vec![gx, gw];
        if let Some(bias) = inputs.get(2) {
            grads.push(bias.requires_grad().then(|| bias_grad(g, self.n, self.o, npos)));
        }
        grads
    }
}

/// Cross-correlation of `x: [N, C, H, W]` with `weight: [O, C, KH, KW]`.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geometry: ConvGeometry,
) -> Result<Tensor<T>> {
    geometry.validate("conv2d")?;
    let [n, c, h, w] = dims4("conv2d", x)?;
    let [o, wc, kh, kw] = dims4("conv2d", weight)?;
    if wc != c || (kh, kw) != geometry.kernel {
        return shape_err("conv2d", x.shape(), weight.shape());
    }
    check_bias("conv2d", bias, o)?;
    let Some((oh, ow)) = geometry.conv_out(h, w) else {
        return shape_err("conv2d", x.shape(), weight.shape());
    };
    let unfold = Unfold {
        c,
        h,
        w,
        oh,
        ow,
        g: geometry,
    };
    let (rows, npos) = (unfold.rows(), unfold.cols());
    let mut out = vec![T::zero(); n * o * npos];
    {
        let xd = x.data();
        let wd = weight.data();
        let mut cols = vec![T::zero(); rows * npos];
        let img = c * h * w;
        for b in 0..n {
            unfold.im2col(&xd[b * img..(b + 1) * img], &mut cols);
            let dst = &mut out[b * o * npos..(b + 1) * o * npos];
            matmul(o, rows, npos, &wd, false, &cols, false, dst, false);
            if let Some(bias) = bias {
                add_bias(dst, &bias.data(), npos);
            }
        }
    }
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    Ok(Tensor::from_op(
        vec![n, o, oh, ow],
        out,
        &inputs,
        Conv2dBackward { unfold, n, o },
    ))
}

struct ConvTranspose2dBackward {
    // unfolding of the (larger) output image
    unfold: Unfold,
    n: usize,
    c: usize,
}

impl<T: Real> BackwardOp<T> for ConvTranspose2dBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let u = self.unfold;
        let o = u.c;
        let (rows, npos) = (u.rows(), u.cols());
        let out_img = o * u.h * u.w;
        let xd = x.data();
        let wd = w.data();
        let mut cols = vec![T::zero(); rows * npos];
        let mut gx = x.requires_grad().then(|| vec![T::zero(); x.numel()]);
        let mut gw = w.requires_grad().then(|| vec![T::zero(); w.numel()]);
        for b in 0..self.n {
            u.im2col(&g[b * out_img..(b + 1) * out_img], &mut cols);
            let xb = &xd[b * self.c * npos..(b + 1) * self.c * npos];
            if let Some(gx) = gx.as_mut() {
                // dx (c x npos) = W (c x rows) * cols
                let dst = &mut gx[b * self.c * npos..(b + 1) * self.c * npos];
                matmul(self.c, rows, npos, &wd, false, &cols, false, dst, false);
            }
            if let Some(gw) = gw.as_mut() {
                // dW (c x rows) += x (c x npos) * cols^T
                matmul(self.c, npos, rows, xb, false, &cols, true, gw, true);
            }
        }
        let mut grads = vec![gx, gw];
        if let Some(bias) = inputs.get(2) {
            grads.push(
                bias.requires_grad()
                    .then(|| bias_grad(g, self.n, o, u.h * u.w)),
            );
        }
        grads
    }
}

/// Transposed convolution of `x: [N, C, H, W]` with `weight: [C, O, KH, KW]`;
/// output is `[N, O, (H-1)*sh - 2*ph + KH, (W-1)*sw - 2*pw + KW]`.
pub fn conv_transpose2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geometry: ConvGeometry,
) -> Result<Tensor<T>> {
    geometry.validate("conv_transpose2d")?;
    let [n, c, h, w] = dims4("conv_transpose2d", x)?;
    let [wc, o, kh, kw] = dims4("conv_transpose2d", weight)?;
    if wc != c || (kh, kw) != geometry.kernel {
        return shape_err("conv_transpose2d", x.shape(), weight.shape());
    }
    check_bias("conv_transpose2d", bias, o)?;
    let Some((oh, ow)) = geometry.transpose_out(h, w) else {
        return shape_err("conv_transpose2d", x.shape(), weight.shape());
    };
    debug_assert_eq!(geometry.conv_out(oh, ow), Some((h, w)));
    let unfold = Unfold {
        c: o,
        h: oh,
        w: ow,
        oh: h,
        ow: w,
        g: geometry,
    };
    let (rows, npos) = (unfold.rows(), unfold.cols());
    let out_img = o * oh * ow;
    let mut out = vec![T::zero(); n * out_img];
    {
        let xd = x.data();
        let wd = weight.data();
        let mut cols = vec![T::zero(); rows * npos];
        for b in 0..n {
            let xb = &xd[b * c * npos..(b + 1) * c * npos];
            // cols (rows x npos) = W^T (rows x c) * x (c x npos)
            matmul(rows, c, npos, &wd, true, xb, false, &mut cols, false);
            let dst = &mut out[b * out_img..(b + 1) * out_img];
            unfold.col2im(&cols, dst);
            if let Some(bias) = bias {
                add_bias(dst, &bias.data(), oh * ow);
            }
        }
    }
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    Ok(Tensor::from_op(
        vec![n, o, oh, ow],
        out,
        &inputs,
        ConvTranspose2dBackward { unfold, n, c },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_one_by_one_kernel() {
        let data: Vec<f64> = (0..2 * 3 * 4).map(|v| v as f64 * 0.5 - 3.0).collect();
        let x = Tensor::new(data.clone(), &[1, 2, 3, 4]);
        let w = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2, 1, 1]);
        let y = conv2d(&x, &w, None, ConvGeometry::new((1, 1), (1, 1), (0, 0))).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.to_vec(), data);
    }

    #[test]
    fn box_sum_of_constant_input() {
        let x = Tensor::<f64>::full(&[1, 1, 5, 5], 1.0);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, ConvGeometry::new((3, 3), (1, 1), (1, 1))).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5]);
        let v = y.to_vec();
        for r in 1..4 {
            for c in 1..4 {
                assert_eq!(v[r * 5 + c], 9.0);
            }
        }
        assert_eq!(v[0], 4.0);
        assert_eq!(v[2], 6.0);
    }

    #[test]
    fn strided_output_size_uses_floor() {
        let x = Tensor::<f32>::zeros(&[2, 1, 10, 5]);
        let w = Tensor::<f32>::zeros(&[4, 1, 5, 3]);
        let y = conv2d(&x, &w, None, ConvGeometry::new((5, 3), (3, 2), (2, 1))).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 3]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f32>::zeros(&[2, 2, 3, 3]);
        let err = conv2d(&x, &w, None, ConvGeometry::new((3, 3), (1, 1), (1, 1)))
            .unwrap_err()
            .to_string();
        assert!(err.contains("[1, 3, 4, 4]") && err.contains("[2, 2, 3, 3]"), "{err}");
    }

    #[test]
    fn transpose_doubles_spatial_size() {
        let x = Tensor::<f64>::full(&[1, 2, 3, 4], 1.0);
        let w = Tensor::<f64>::full(&[2, 1, 2, 2], 1.0);
        let y = conv_transpose2d(&x, &w, None, ConvGeometry::new((2, 2), (2, 2), (0, 0))).unwrap();
        assert_eq!(y.shape(), &[1, 1, 6, 8]);
        // every output pixel receives exactly one tap per input channel
        assert!(y.to_vec().iter().all(|v| *v == 2.0));
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> for matching geometry
        let g = ConvGeometry::new((3, 3), (2, 2), (1, 1));
        let xs: Vec<f64> = (0..2 * 7 * 5).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let ws: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
        let x = Tensor::new(xs.clone(), &[1, 2, 7, 5]);
        let w = Tensor::new(ws.clone(), &[3, 2, 3, 3]);
        let y = conv2d(&x, &w, None, g).unwrap();
        let ys: Vec<f64> = (0..y.numel()).map(|i| ((i * 5 % 9) as f64) - 4.0).collect();
        let lhs: f64 = y.to_vec().iter().zip(&ys).map(|(a, b)| a * b).sum();
        let yt = Tensor::new(ys, y.shape());
        let xt = conv_transpose2d(&yt, &w, None, g).unwrap();
        assert_eq!(xt.shape(), x.shape());
        let rhs: f64 = xt.to_vec().iter().zip(&xs).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}
