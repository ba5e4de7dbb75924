use crate::error::{invalid, shape_err, Result};
use crate::real::Real;
use crate::tensor::{BackwardOp, Tensor};

struct AddBackward;

impl<T: Real> BackwardOp<T> for AddBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        inputs
            .iter()
            .map(|t| t.requires_grad().then(|| g.to_vec()))
            .collect()
    }
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return shape_err("add", a.shape(), b.shape());
    }
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| *x + *y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, &[a, b], AddBackward))
}

struct MulBackward;

impl<T: Real> BackwardOp<T> for MulBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let ga = a.requires_grad().then(|| {
            let bd = b.data();
            g.iter().zip(bd.iter()).map(|(g, y)| *g * *y).collect()
        });
        let gb = b.requires_grad().then(|| {
            let ad = a.data();
            g.iter().zip(ad.iter()).map(|(g, x)| *g * *x).collect()
        });
        vec![ga, gb]
    }
}

/// Element-wise product of equal-shape tensors.
pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return shape_err("mul", a.shape(), b.shape());
    }
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| *x * *y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, &[a, b], MulBackward))
}

struct SumBackward;

impl<T: Real> BackwardOp<T> for SumBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![g[0]; inputs[0].numel()])]
    }
}

/// Sum of all elements (scalar output).
pub fn sum<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let total = x.data().iter().fold(0.0f64, |acc, v| acc + v.as_f64());
    Tensor::from_op(vec![], vec![T::of(total)], &[x], SumBackward)
}

#[derive(Clone, Copy)]
enum Activation<T> {
    Relu,
    Leaky(T),
    Sigmoid,
    Clamp(T, T),
}

struct ActivationBackward<T>(Activation<T>);

impl<T: Real> BackwardOp<T> for ActivationBackward<T> {
    fn backward(&self, inputs: &[Tensor<T>], out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0].data();
        let grad = match self.0 {
            Activation::Relu => x
                .iter()
                .zip(g)
                .map(|(x, g)| if *x > T::zero() { *g } else { T::zero() })
                .collect(),
            Activation::Leaky(slope) => x
                .iter()
                .zip(g)
                .map(|(x, g)| if *x >= T::zero() { *g } else { *g * slope })
                .collect(),
            Activation::Sigmoid => out
                .iter()
                .zip(g)
                .map(|(y, g)| *g * *y * (T::one() - *y))
                .collect(),
            Activation::Clamp(lo, hi) => x
                .iter()
                .zip(g)
                .map(|(x, g)| if *x >= lo && *x <= hi { *g } else { T::zero() })
                .collect(),
        };
        vec![Some(grad)]
    }
}

fn activate<T: Real>(x: &Tensor<T>, act: Activation<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    let data = x.data().iter().map(|v| f(*v)).collect();
    Tensor::from_op(x.shape().to_vec(), data, &[x], ActivationBackward(act))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    activate(x, Activation::Relu, |v| v.max(T::zero()))
}

/// `x` for `x >= 0`, `slope * x` otherwise.
pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Result<Tensor<T>> {
    if !(slope > T::zero() && slope < T::one()) {
        return invalid("leaky_relu", format!("slope {slope:?} outside (0, 1)"));
    }
    Ok(activate(x, Activation::Leaky(slope), move |v| {
        if v >= T::zero() {
            v
        } else {
            v * slope
        }
    }))
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    activate(x, Activation::Sigmoid, |v| {
        // split on sign so exp never overflows
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

/// Clip into `[lo, hi]`; gradient passes only inside the interval.
pub fn clamp<T: Real>(x: &Tensor<T>, lo: T, hi: T) -> Tensor<T> {
    activate(x, Activation::Clamp(lo, hi), move |v| v.max(lo).min(hi))
}
