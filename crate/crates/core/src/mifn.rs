//! The fusion segmentation network: an SGS encoder that turns stacked
//! gather slices and curve masks into one prior channel, and a U-Net over
//! the spectrum channels plus that prior.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use velopick_autograd::nn::{join, BatchNorm2d, Conv2d, ConvTranspose2d, Module};
use velopick_autograd::ops::{self, ConvGeometry};
use velopick_autograd::weights::{self, NamedArray};
use velopick_autograd::{Real, Tensor};

use crate::enhance::STACK_CHANNELS;
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::rng::SeedTree;

/// Which inputs reach the U-Net.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Original spectrum, nine enhanced maps and the SGS prior.
    Full,
    /// Original spectrum and the SGS prior.
    NoSfe,
    /// Original spectrum and nine enhanced maps.
    NoSgs,
}

impl Variant {
    pub fn spectrum_channels(self) -> usize {
        match self {
            Variant::NoSfe => 1,
            _ => STACK_CHANNELS,
        }
    }

    pub fn uses_sgs(self) -> bool {
        self != Variant::NoSgs
    }

    pub fn input_channels(self) -> usize {
        self.spectrum_channels() + usize::from(self.uses_sgs())
    }

    fn code(self) -> f32 {
        match self {
            Variant::Full => 0.0,
            Variant::NoSfe => 1.0,
            Variant::NoSgs => 2.0,
        }
    }

    fn from_code(c: f32) -> Option<Self> {
        match c as i32 {
            0 => Some(Variant::Full),
            1 => Some(Variant::NoSfe),
            2 => Some(Variant::NoSgs),
            _ => None,
        }
    }
}

/// How the per-curve prior maps merge into the single SGS channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Sum over curves, clamped to [0, 1].
    #[default]
    Sum,
    /// Mean over curves, clamped to [0, 1].
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MifnConfig {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub base_channels: usize,
    /// Output channels of the two CBL stages of the SGS encoder.
    pub sgs_channels: usize,
    pub leaky_slope: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
    pub variant: Variant,
}

impl Default for MifnConfig {
    fn default() -> Self {
        Self {
            height: 256,
            width: 128,
            depth: 4,
            base_channels: 16,
            sgs_channels: 16,
            leaky_slope: 0.1,
            aggregation: Aggregation::Sum,
            variant: Variant::Full,
        }
    }
}

pub const CBL_GEOMETRY: ConvGeometry = ConvGeometry {
    kernel: (5, 3),
    stride: (3, 2),
    padding: (2, 1),
};

const CBR_GEOMETRY: ConvGeometry = ConvGeometry {
    kernel: (3, 3),
    stride: (1, 1),
    padding: (1, 1),
};

const UP_GEOMETRY: ConvGeometry = ConvGeometry {
    kernel: (2, 2),
    stride: (2, 2),
    padding: (0, 0),
};

const CONFIG_TENSOR: &str = "config";

impl MifnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.sgs_channels == 0 {
            return Err(Error::Config("depth and channel counts must be >= 1".into()));
        }
        let f = 1usize << self.depth;
        if self.height == 0 || self.width == 0 || self.height % f != 0 || self.width % f != 0 {
            return Err(Error::Config(format!(
                "input {}x{} is not divisible by 2^{} = {f}",
                self.height, self.width, self.depth
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky slope {} outside (0, 1)", self.leaky_slope)));
        }
        Ok(())
    }

    pub fn with_variant(self, variant: Variant) -> Self {
        Self { variant, ..self }
    }

    fn to_array(self) -> NamedArray {
        NamedArray {
            name: CONFIG_TENSOR.into(),
            dims: vec![8],
            values: vec![
                self.height as f32,
                self.width as f32,
                self.depth as f32,
                self.base_channels as f32,
                self.sgs_channels as f32,
                self.leaky_slope as f32,
                self.variant.code(),
                match self.aggregation {
                    Aggregation::Sum => 0.0,
                    Aggregation::Mean => 1.0,
                },
            ],
        }
    }

    fn from_array(a: &NamedArray) -> Result<Self> {
        let v = &a.values;
        if v.len() != 8 {
            return Err(Error::Format(format!("config tensor has {} values, expected 8", v.len())));
        }
        let cfg = Self {
            height: v[0] as usize,
            width: v[1] as usize,
            depth: v[2] as usize,
            base_channels: v[3] as usize,
            sgs_channels: v[4] as usize,
            // stored in f32; recover the decimal the user gave
            leaky_slope: (v[5] as f64 * 1e6).round() / 1e6,
            variant: Variant::from_code(v[6]).ok_or_else(|| Error::Format(format!("unknown variant code {}", v[6])))?,
            aggregation: match v[7] as i32 {
                0 => Aggregation::Sum,
                1 => Aggregation::Mean,
                c => return Err(Error::Format(format!("unknown aggregation code {c}"))),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Conv, batch norm, activation.
#[derive(Debug, Clone)]
struct ConvBn<T: Real> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
}

impl<T: Real> ConvBn<T> {
    fn new(cin: usize, cout: usize, g: ConvGeometry, rng: &mut crate::rng::Rng) -> Self {
        Self {
            conv: Conv2d::new(cin, cout, g, false, rng),
            bn: BatchNorm2d::new(cout),
        }
    }

    fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        Ok(self.bn.forward(&self.conv.forward(x)?, training)?)
    }
}

impl<T: Real> Module<T> for ConvBn<T> {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.conv.collect(&join(prefix, "conv"), out);
        self.bn.collect(&join(prefix, "bn"), out);
    }
}

/// Two CBR stages.
#[derive(Debug, Clone)]
struct DoubleCbr<T: Real> {
    a: ConvBn<T>,
    b: ConvBn<T>,
}

impl<T: Real> DoubleCbr<T> {
    fn new(cin: usize, cout: usize, rng: &mut crate::rng::Rng) -> Self {
        Self {
            a: ConvBn::new(cin, cout, CBR_GEOMETRY, rng),
            b: ConvBn::new(cout, cout, CBR_GEOMETRY, rng),
        }
    }

    fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let y = ops::relu(&self.a.forward(x, training)?);
        Ok(ops::relu(&self.b.forward(&y, training)?))
    }
}

impl<T: Real> Module<T> for DoubleCbr<T> {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.a.collect(&join(prefix, "cbr1"), out);
        self.b.collect(&join(prefix, "cbr2"), out);
    }
}

#[derive(Debug, Clone)]
struct UpBlock<T: Real> {
    up: ConvTranspose2d<T>,
    conv: DoubleCbr<T>,
}

impl<T: Real> Module<T> for UpBlock<T> {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.up.collect(&join(prefix, "up"), out);
        self.conv.collect(&join(prefix, "conv"), out);
    }
}

/// Encoder-decoder with skip connections; sigmoid output of the input size.
#[derive(Debug, Clone)]
pub struct UNet<T: Real> {
    down: Vec<DoubleCbr<T>>,
    bottleneck: DoubleCbr<T>,
    up: Vec<UpBlock<T>>,
    head: Conv2d<T>,
}

impl<T: Real> UNet<T> {
    pub fn new(in_channels: usize, base: usize, depth: usize, rng: &mut crate::rng::Rng) -> Self {
        let width = |level: usize| base << level;
        let down = (0..depth)
            .map(|l| DoubleCbr::new(if l == 0 { in_channels } else { width(l - 1) }, width(l), rng))
            .collect();
        let bottleneck = DoubleCbr::new(width(depth - 1), width(depth), rng);
        let up = (0..depth)
            .rev()
            .map(|l| UpBlock {
                up: ConvTranspose2d::new(width(l + 1), width(l), UP_GEOMETRY, true, rng),
                conv: DoubleCbr::new(2 * width(l), width(l), rng),
            })
            .collect();
        let head = Conv2d::new(base, 1, CBR_GEOMETRY, true, rng);
        Self {
            down,
            bottleneck,
            up,
            head,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        self.forward_with(x, training, |_, skip| skip.clone())
    }

    /// Forward pass with a hook that may replace each skip tensor (indexed
    /// from the shallowest level) before it is concatenated.
    pub fn forward_with(
        &self,
        x: &Tensor<T>,
        training: bool,
        skip_hook: impl Fn(usize, &Tensor<T>) -> Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut skips = Vec::with_capacity(self.down.len());
        let mut y = x.clone();
        for block in &self.down {
            let s = block.forward(&y, training)?;
            y = ops::max_pool2d(&s, 2, 2, 0)?;
            skips.push(s);
        }
        y = self.bottleneck.forward(&y, training)?;
        for (block, level) in self.up.iter().zip((0..skips.len()).rev()) {
            let u = ops::relu(&block.up.forward(&y)?);
            let skip = skip_hook(level, &skips[level]);
            y = block.conv.forward(&ops::concat(&[&skip, &u])?, training)?;
        }
        Ok(ops::sigmoid(&self.head.forward(&y)?))
    }
}

impl<T: Real> Module<T> for UNet<T> {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (i, b) in self.down.iter().enumerate() {
            b.collect(&join(prefix, &format!("down{i}")), out);
        }
        self.bottleneck.collect(&join(prefix, "bottleneck"), out);
        for (i, b) in self.up.iter().enumerate() {
            b.collect(&join(prefix, &format!("up{i}")), out);
        }
        self.head.collect(&join(prefix, "head"), out);
    }
}

/// CBL, CBL, SPP and a 1x1 projection, averaged over width into one
/// weight per time row.
#[derive(Debug, Clone)]
pub struct SgsEncoder<T: Real> {
    cbl: [ConvBn<T>; 2],
    head: Conv2d<T>,
    slope: T,
    pub aggregation: Aggregation,
}

impl<T: Real> SgsEncoder<T> {
    pub fn new(channels: usize, slope: f64, rng: &mut crate::rng::Rng) -> Self {
        Self {
            cbl: [
                ConvBn::new(1, channels, CBL_GEOMETRY, rng),
                ConvBn::new(channels, channels, CBL_GEOMETRY, rng),
            ],
            head: Conv2d::new(3 * channels, 1, ConvGeometry::new((1, 1), (1, 1), (0, 0)), true, rng),
            slope: T::of(slope),
            aggregation: Aggregation::Sum,
        }
    }

    /// Slices `[B, 1, T, k]` to sigmoid weights `[B, 1, height, 1]`.
    pub fn vectors(&self, slices: &Tensor<T>, height: usize, training: bool) -> Result<Tensor<T>> {
        let mut y = slices.clone();
        for cbl in &self.cbl {
            y = ops::leaky_relu(&cbl.forward(&y, training)?, self.slope)?;
        }
        let y = self.head.forward(&ops::spp(&y)?)?;
        let y = ops::bilinear_resize(&ops::mean_width(&y)?, height, 1)?;
        Ok(ops::sigmoid(&y))
    }

    /// Prior map `[N, 1, H, W]` from `m` slices and masks per sample, laid
    /// out sample-major (`[N*m, 1, T, k]` and `[N*m, 1, H, W]`).
    pub fn forward(&self, slices: &Tensor<T>, masks: &Tensor<T>, m: usize, training: bool) -> Result<Tensor<T>> {
        let ms = masks.shape().to_vec();
        if ms.len() != 4 || slices.shape().len() != 4 || slices.shape()[0] != ms[0] || m == 0 || ms[0] % m != 0 {
            return Err(Error::Domain(format!(
                "{m} curves per sample cannot pair slices {:?} with masks {:?}",
                slices.shape(),
                ms
            )));
        }
        let (h, w) = (ms[2], ms[3]);
        let s = ops::expand_width(&self.vectors(slices, h, training)?, w)?;
        let weighted = ops::mul(&s, masks)?;
        let grouped = ops::reshape(&weighted, &[ms[0] / m, m, h, w])?;
        let mut merged = ops::sum_channels(&grouped)?;
        if self.aggregation == Aggregation::Mean {
            merged = ops::mul(&merged, &Tensor::full(merged.shape(), T::of(1.0 / m as f64)))?;
        }
        Ok(ops::clamp(&merged, T::zero(), T::one()))
    }
}

impl<T: Real> Module<T> for SgsEncoder<T> {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.cbl[0].collect(&join(prefix, "cbl1"), out);
        self.cbl[1].collect(&join(prefix, "cbl2"), out);
        self.head.collect(&join(prefix, "proj"), out);
    }
}

/// Network inputs for a batch of `n` samples.
#[derive(Debug, Clone)]
pub struct Batch<T: Real> {
    /// `[n, spectrum_channels, H, W]`.
    pub spectra: Tensor<T>,
    /// `[n*m, 1, T, k]` slices and `[n*m, 1, H, W]` masks.
    pub sgs: Option<(Tensor<T>, Tensor<T>, usize)>,
}

#[derive(Debug, Clone)]
pub struct Mifn<T: Real> {
    pub config: MifnConfig,
    pub sgs: Option<SgsEncoder<T>>,
    pub unet: UNet<T>,
}

impl<T: Real> Mifn<T> {
    pub fn new(config: MifnConfig, seed: SeedTree) -> Result<Self> {
        config.validate()?;
        let mut rng = seed.named("mifn-init").rng();
        // draw once so the two sub-networks use disjoint streams
        let sgs_seed: u64 = rng.gen();
        let sgs = config.variant.uses_sgs().then(|| {
            let mut enc = SgsEncoder::new(config.sgs_channels, config.leaky_slope, &mut SeedTree::new(sgs_seed).rng());
            enc.aggregation = config.aggregation;
            enc
        });
        let unet = UNet::new(config.variant.input_channels(), config.base_channels, config.depth, &mut rng);
        Ok(Self { config, sgs, unet })
    }

    /// Concatenated U-Net input.
    pub fn fuse(&self, batch: &Batch<T>, training: bool) -> Result<Tensor<T>> {
        let c = &self.config;
        let shape = batch.spectra.shape();
        if shape.len() != 4 || shape[1] != c.variant.spectrum_channels() || shape[2] != c.height || shape[3] != c.width {
            return Err(Error::Shape(format!(
                "spectrum input {:?} does not match [N, {}, {}, {}]",
                shape,
                c.variant.spectrum_channels(),
                c.height,
                c.width
            )));
        }
        match (&self.sgs, &batch.sgs) {
            (Some(enc), Some((slices, masks, m))) => {
                let prior = enc.forward(slices, masks, *m, training)?;
                if prior.shape()[0] != shape[0] || prior.shape()[2..] != shape[2..] {
                    return Err(Error::Shape(format!(
                        "SGS prior {:?} does not match spectra {:?}",
                        prior.shape(),
                        shape
                    )));
                }
                Ok(ops::concat(&[&batch.spectra, &prior])?)
            }
            (None, _) => Ok(batch.spectra.clone()),
            (Some(_), None) => Err(Error::Shape("this network needs SGS inputs".into())),
        }
    }

    /// Segmentation probabilities `[N, 1, H, W]`.
    pub fn forward(&self, batch: &Batch<T>, training: bool) -> Result<Tensor<T>> {
        self.unet.forward(&self.fuse(batch, training)?, training)
    }

    pub fn state(&self) -> Vec<NamedArray> {
        let mut arrays = vec![self.config.to_array()];
        arrays.extend(weights::state_of(self));
        arrays
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(weights::save(path, &self.state())?)
    }

    /// Rebuilds a network from a saved state, configuration included.
    pub fn from_state(arrays: &[NamedArray]) -> Result<Self> {
        let cfg = arrays
            .iter()
            .find(|a| a.name == CONFIG_TENSOR)
            .ok_or_else(|| Error::Format("weights file has no config tensor".into()))?;
        let net = Self::new(MifnConfig::from_array(cfg)?, SeedTree::new(0))?;
        weights::load_into(&net, arrays)?;
        Ok(net)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_state(&weights::load(path)?)
    }

    /// Copies every tensor from a saved state of the same configuration.
    pub fn load_state(&self, arrays: &[NamedArray]) -> Result<()> {
        if let Some(cfg) = arrays.iter().find(|a| a.name == CONFIG_TENSOR) {
            let saved = MifnConfig::from_array(cfg)?;
            if saved != self.config {
                return Err(Error::Config(format!(
                    "weights were saved for {saved:?}, network is {:?}",
                    self.config
                )));
            }
        }
        Ok(weights::load_into(self, arrays)?)
    }
}

impl<T: Real> Module<T> for Mifn<T> {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        if let Some(s) = &self.sgs {
            s.collect(&join(prefix, "sgs"), out);
        }
        self.unet.collect(&join(prefix, "unet"), out);
    }
}

/// Per-sample probability planes of a `[N, 1, H, W]` output.
pub fn split_maps<T: Real>(probs: &Tensor<T>) -> Vec<Grid2D> {
    let s = probs.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    let data = probs.to_f32();
    (0..n)
        .map(|i| Grid2D::new(h, w, data[i * h * w..(i + 1) * h * w].to_vec()).expect("finite network output"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> MifnConfig {
        MifnConfig {
            height: 16,
            width: 8,
            depth: 2,
            base_channels: 4,
            sgs_channels: 3,
            leaky_slope: 0.1,
            aggregation: Aggregation::Sum,
            variant,
        }
    }

    fn batch(cfg: &MifnConfig, n: usize, m: usize, seed: u64) -> Batch<f64> {
        let mut rng = SeedTree::new(seed).rng();
        let hw = cfg.height * cfg.width;
        let c = cfg.variant.spectrum_channels();
        let spectra = Tensor::new((0..n * c * hw).map(|_| rng.gen_range(0.0..1.0)).collect(), &[n, c, cfg.height, cfg.width]);
        let sgs = cfg.variant.uses_sgs().then(|| {
            let slices = Tensor::new((0..n * m * 30 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[n * m, 1, 30, 5]);
            let masks = Tensor::new((0..n * m * hw).map(|_| rng.gen_range(0.0..1.0)).collect(), &[n * m, 1, cfg.height, cfg.width]);
            (slices, masks, m)
        });
        Batch { spectra, sgs }
    }

    #[test]
    fn config_validation() {
        assert!(MifnConfig::default().validate().is_ok());
        let bad = MifnConfig { height: 100, ..MifnConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert_eq!(Variant::Full.input_channels(), 11);
        assert_eq!(Variant::NoSfe.input_channels(), 2);
        assert_eq!(Variant::NoSgs.input_channels(), 10);
    }

    #[test]
    fn output_matches_input_size_and_range() {
        for v in [Variant::Full, Variant::NoSfe, Variant::NoSgs] {
            let cfg = tiny(v);
            let net = Mifn::<f64>::new(cfg, SeedTree::new(1)).unwrap();
            let out = net.forward(&batch(&cfg, 2, 3, 2), true).unwrap();
            assert_eq!(out.shape(), &[2, 1, 16, 8]);
            assert!(out.to_vec().iter().all(|p| *p > 0.0 && *p < 1.0));
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let cfg = tiny(Variant::Full);
        let a = Mifn::<f32>::new(cfg, SeedTree::new(9)).unwrap();
        let b = Mifn::<f32>::new(cfg, SeedTree::new(9)).unwrap();
        let bt = batch(&cfg, 2, 2, 3);
        let cast = |t: &Tensor<f64>| Tensor::<f32>::from_f32(&t.to_f32(), t.shape());
        let b32 = Batch {
            spectra: cast(&bt.spectra),
            sgs: bt.sgs.as_ref().map(|(s, m, k)| (cast(s), cast(m), *k)),
        };
        let x = a.forward(&b32, false).unwrap().to_vec();
        let y = b.forward(&b32, false).unwrap().to_vec();
        assert_eq!(x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn zeroing_a_skip_changes_the_output() {
        let cfg = tiny(Variant::NoSgs);
        let net = Mifn::<f64>::new(cfg, SeedTree::new(4)).unwrap();
        let x = net.fuse(&batch(&cfg, 2, 1, 5), false).unwrap();
        let plain = net.unet.forward(&x, false).unwrap().to_vec();
        for level in 0..cfg.depth {
            let cut = net
                .unet
                .forward_with(&x, false, |l, s| if l == level { Tensor::zeros(s.shape()) } else { s.clone() })
                .unwrap()
                .to_vec();
            let diff: f64 = plain.iter().zip(&cut).map(|(a, b)| (a - b).abs()).sum();
            assert!(diff > 1e-6, "skip {level} has no effect");
        }
    }

    #[test]
    fn zero_slices_give_bias_only_weights() {
        let enc = SgsEncoder::<f64>::new(3, 0.1, &mut SeedTree::new(2).rng());
        enc.head.bias.as_ref().unwrap().set_data(&[0.3]);
        let slices = Tensor::zeros(&[2, 1, 30, 5]);
        let v = enc.vectors(&slices, 12, true).unwrap().to_vec();
        let expected = 1.0 / (1.0 + (-0.3f64).exp());
        assert!(v.iter().all(|x| (x - expected).abs() < 1e-12));

        let mut mask = vec![0.0; 2 * 12 * 4];
        for r in 0..12 {
            mask[r * 4 + 1] = 1.0;
            mask[48 + r * 4 + 2] = 0.5;
        }
        let masks = Tensor::new(mask.clone(), &[2, 1, 12, 4]);
        let f = enc.forward(&slices, &masks, 2, true).unwrap().to_vec();
        for (i, x) in f.iter().enumerate() {
            let want = expected * (mask[i] + mask[48 + i]);
            assert!((x - want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_curve_with_unit_weight_reproduces_its_mask() {
        let enc = SgsEncoder::<f64>::new(2, 0.1, &mut SeedTree::new(3).rng());
        // saturate the sigmoid
        enc.head.bias.as_ref().unwrap().set_data(&[60.0]);
        enc.head.weight.set_data(&vec![0.0; enc.head.weight.numel()]);
        let mask: Vec<f64> = (0..10 * 6).map(|i| if i % 6 == 4 { 1.0 } else { 0.0 }).collect();
        let f = enc
            .forward(&Tensor::zeros(&[1, 1, 20, 5]), &Tensor::new(mask.clone(), &[1, 1, 10, 6]), 1, false)
            .unwrap();
        for (a, b) in f.to_vec().iter().zip(&mask) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_aggregation_divides_by_curve_count() {
        let mut enc = SgsEncoder::<f64>::new(2, 0.1, &mut SeedTree::new(3).rng());
        enc.head.bias.as_ref().unwrap().set_data(&[60.0]);
        enc.head.weight.set_data(&vec![0.0; enc.head.weight.numel()]);
        enc.aggregation = Aggregation::Mean;
        let masks = Tensor::full(&[3, 1, 4, 2], 0.9);
        let f = enc.forward(&Tensor::zeros(&[3, 1, 20, 5]), &masks, 3, false).unwrap();
        assert!(f.to_vec().iter().all(|v| (v - 0.9).abs() < 1e-12));
    }

    #[test]
    fn mismatched_curve_count_is_rejected() {
        let enc = SgsEncoder::<f64>::new(2, 0.1, &mut SeedTree::new(3).rng());
        let r = enc.forward(&Tensor::zeros(&[3, 1, 20, 5]), &Tensor::zeros(&[3, 1, 8, 4]), 2, false);
        assert!(matches!(r, Err(Error::Domain(_))));
        let r = enc.forward(&Tensor::zeros(&[4, 1, 20, 5]), &Tensor::zeros(&[2, 1, 8, 4]), 2, false);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn weights_round_trip_with_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = MifnConfig {
            aggregation: Aggregation::Mean,
            ..tiny(Variant::NoSfe)
        };
        let net = Mifn::<f32>::new(cfg, SeedTree::new(8)).unwrap();
        let path = dir.path().join("w.mifnw");
        net.save(&path).unwrap();
        let back = Mifn::<f32>::load(&path).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(weights::state_of(&back), weights::state_of(&net));
        let other = Mifn::<f32>::new(tiny(Variant::Full), SeedTree::new(8)).unwrap();
        assert!(other.load_state(&net.state()).is_err());
        assert!(matches!(Mifn::<f32>::load(dir.path().join("none")), Err(Error::MissingFile(_))));
    }
}
