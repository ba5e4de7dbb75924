//! Parameterized layers.

use rand::Rng;

use crate::error::Result;
use crate::ops::{self, ConvGeometry, RunningStats};
use crate::real::Real;
use crate::tensor::Tensor;

/// Anything holding persistent tensors (trainable parameters and buffers).
pub trait Module<T: Real> {
    /// Pushes every persistent tensor under `prefix`-qualified dotted names.
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>);

    fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn parameters(&self) -> Vec<Tensor<T>> {
        self.named_tensors()
            .into_iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(_, t)| t)
            .collect()
    }

    fn zero_grad(&self) {
        self.parameters().iter().for_each(Tensor::zero_grad);
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, bound: f64) -> Vec<T> {
    (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect()
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geometry: ConvGeometry,
}

impl<T: Real> Conv2d<T> {
    /// He-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let (kh, kw) = geometry.kernel;
        let fan_in = in_channels * kh * kw;
        let bound = (6.0 / fan_in as f64).sqrt();
        Self {
            weight: Tensor::param(
                uniform(rng, out_channels * fan_in, bound),
                &[out_channels, in_channels, kh, kw],
            ),
            bias: bias.then(|| Tensor::param(vec![T::zero(); out_channels], &[out_channels])),
            geometry,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d(x, &self.weight, self.bias.as_ref(), self.geometry)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geometry: ConvGeometry,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let (kh, kw) = geometry.kernel;
        let fan_in = out_channels * kh * kw;
        let bound = (6.0 / fan_in as f64).sqrt();
        Self {
            weight: Tensor::param(
                uniform(rng, in_channels * fan_in, bound),
                &[in_channels, out_channels, kh, kw],
            ),
            bias: bias.then(|| Tensor::param(vec![T::zero(); out_channels], &[out_channels])),
            geometry,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv_transpose2d(x, &self.weight, self.bias.as_ref(), self.geometry)
    }
}

impl<T: Real> Module<T> for ConvTranspose2d<T> {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: RunningStats<T>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::param(vec![T::one(); channels], &[channels]),
            beta: Tensor::param(vec![T::zero(); channels], &[channels]),
            stats: RunningStats::new(channels),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        ops::batch_norm(x, &self.gamma, &self.beta, &self.stats, training)
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
        out.push((join(prefix, "running_mean"), self.stats.mean.clone()));
        out.push((join(prefix, "running_var"), self.stats.var.clone()));
    }
}
