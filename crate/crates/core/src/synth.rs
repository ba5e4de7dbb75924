//! Layered-earth synthetic CMP gathers with known stacking velocities.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::grid::{Grid2D, VelocityAxis, VelocityCurve};
use crate::rng::{Rng, SeedTree};
use crate::spectrum::{AcquisitionGeometry, CmpGather};

pub const DEFAULT_PEAK_HZ: f64 = 25.0;

/// One flat layer: two-way time at its base and its interval velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub t_base: f64,
    pub v_int: f64,
}

/// Stack of flat layers; a reflector with the given amplitude sits at the
/// base of every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerModel {
    pub layers: Vec<Layer>,
    #[serde(default = "default_peak")]
    pub peak_hz: f64,
    pub amplitudes: Vec<f64>,
}

fn default_peak() -> f64 {
    DEFAULT_PEAK_HZ
}

impl LayerModel {
    pub fn new(layers: Vec<Layer>, peak_hz: f64, amplitudes: Vec<f64>) -> Result<Self> {
        let m = Self {
            layers,
            peak_hz,
            amplitudes,
        };
        m.validate()?;
        Ok(m)
    }

    /// Unit-amplitude reflectors at the base of every layer.
    pub fn from_layers(layers: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            layers.iter().map(|&(t_base, v_int)| Layer { t_base, v_int }).collect(),
            DEFAULT_PEAK_HZ,
            vec![1.0; layers.len()],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return domain("layer model has no layers");
        }
        if self.amplitudes.len() != self.layers.len() {
            return domain(format!(
                "{} reflection amplitudes for {} layers",
                self.amplitudes.len(),
                self.layers.len()
            ));
        }
        if !(self.peak_hz > 0.0 && self.peak_hz.is_finite()) {
            return domain(format!("wavelet peak frequency must be positive, got {}", self.peak_hz));
        }
        let mut prev = 0.0;
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.t_base > prev && l.t_base.is_finite()) {
                return domain(format!("layer {i} base time {} not strictly increasing from {prev}", l.t_base));
            }
            if !(l.v_int > 0.0 && l.v_int.is_finite()) {
                return domain(format!("layer {i} interval velocity {} must be positive", l.v_int));
            }
            prev = l.t_base;
        }
        if let Some(a) = self.amplitudes.iter().find(|a| !a.is_finite()) {
            return domain(format!("non-finite reflection amplitude {a}"));
        }
        Ok(())
    }

    pub fn t_max(&self) -> f64 {
        self.layers[self.layers.len() - 1].t_base
    }

    /// Same layering with every interval velocity multiplied by `factor`.
    pub fn scaled_velocities(&self, factor: f64) -> Result<Self> {
        let mut m = self.clone();
        for l in &mut m.layers {
            l.v_int *= factor;
        }
        m.validate()?;
        Ok(m)
    }

    /// Knots at every reflector: (base time, RMS velocity).
    pub fn truth_curve(&self) -> Result<VelocityCurve> {
        let knots = self
            .layers
            .iter()
            .map(|l| Ok((l.t_base, rms_velocity(self, l.t_base)?)))
            .collect::<Result<Vec<_>>>()?;
        VelocityCurve::new(knots)
    }
}

/// RMS velocity down to two-way time `t0`.
pub fn rms_velocity(model: &LayerModel, t0: f64) -> Result<f64> {
    if !(t0 > 0.0) {
        return domain(format!("RMS velocity needs t0 > 0, got {t0}"));
    }
    if t0 > model.t_max() * (1.0 + 1e-12) {
        return domain(format!("t0 = {t0} s lies below the deepest layer base {} s", model.t_max()));
    }
    let (mut num, mut top) = (0.0, 0.0);
    for l in &model.layers {
        let bottom = l.t_base.min(t0);
        num += l.v_int * l.v_int * (bottom - top);
        top = bottom;
        if l.t_base >= t0 {
            break;
        }
    }
    Ok((num / t0).sqrt())
}

/// Ricker wavelet with peak frequency `f` at lag `tau`.
pub fn ricker(f: f64, tau: f64) -> f64 {
    let a = (std::f64::consts::PI * f * tau).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Additive white Gaussian noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    None,
    /// Noise scaled so that the empirical signal-to-noise power ratio is exact.
    SnrDb(f64),
    /// Fixed standard deviation, independent of the signal.
    Sigma(f64),
}

impl Noise {
    /// `+inf` dB means noise-free.
    pub fn snr_db(db: f64) -> Self {
        if db == f64::INFINITY {
            Noise::None
        } else {
            Noise::SnrDb(db)
        }
    }
}

/// Mean squared amplitude of a gather.
pub fn power(values: &[f32]) -> f64 {
    values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / values.len().max(1) as f64
}

/// Noise-free gather: a Ricker wavelet per reflector on each trace, centred
/// on its hyperbolic moveout with the RMS velocity of the reflector depth.
pub fn clean_gather(model: &LayerModel, geometry: &AcquisitionGeometry) -> Result<CmpGather> {
    model.validate()?;
    geometry.validate()?;
    let taxis = geometry.taxis;
    let m = geometry.traces();
    let mut traces = Grid2D::zeros(taxis.n_t, m);
    let support = 2.0 / model.peak_hz;
    for (layer, &amp) in model.layers.iter().zip(&model.amplitudes) {
        if amp == 0.0 {
            continue;
        }
        let v = rms_velocity(model, layer.t_base)?;
        for (i, &x) in geometry.offsets.iter().enumerate() {
            let tc = (layer.t_base * layer.t_base + x * x / (v * v)).sqrt();
            let lo = taxis.position(tc - support).ceil().max(0.0) as usize;
            let hi = taxis.position(tc + support).floor().min((taxis.n_t - 1) as f64);
            if hi < 0.0 {
                continue;
            }
            for r in lo..=hi as usize {
                let w = amp * ricker(model.peak_hz, taxis.time(r) - tc);
                traces.set(r, i, traces.get(r, i) + w as f32);
            }
        }
    }
    CmpGather::new(geometry.clone(), traces)
}

/// Synthetic gather plus its ground-truth stacking velocity curve.
pub fn make_gather(
    model: &LayerModel,
    geometry: &AcquisitionGeometry,
    noise: Noise,
    rng: &mut Rng,
) -> Result<(CmpGather, VelocityCurve)> {
    let mut gather = clean_gather(model, geometry)?;
    let truth = model.truth_curve()?;
    let sigma_of = |raw_power: f64| -> Result<Option<f64>> {
        match noise {
            Noise::None => Ok(None),
            Noise::Sigma(s) if s >= 0.0 && s.is_finite() => Ok(Some(s / raw_power.sqrt())),
            Noise::Sigma(s) => domain(format!("noise sigma must be finite and non-negative, got {s}")),
            Noise::SnrDb(db) if db.is_nan() || db == f64::NEG_INFINITY => {
                domain(format!("unusable SNR {db} dB"))
            }
            Noise::SnrDb(db) if db == f64::INFINITY => Ok(None),
            Noise::SnrDb(db) => {
                let signal = power(gather.traces.values());
                if signal == 0.0 {
                    return domain("SNR requested for a gather with zero signal power");
                }
                let target = signal / 10f64.powf(db / 10.0);
                Ok(Some((target / raw_power).sqrt()))
            }
        }
    };
    if noise == Noise::None {
        return Ok((gather, truth));
    }
    let raw: Vec<f64> = (0..gather.traces.values().len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let raw_power = (raw.iter().map(|v| v * v).sum::<f64>() / raw.len() as f64).max(f64::MIN_POSITIVE);
    if let Some(scale) = sigma_of(raw_power)? {
        for (v, n) in gather.traces.values_mut().iter_mut().zip(&raw) {
            *v += (n * scale) as f32;
        }
    }
    Ok((gather, truth))
}

/// Lateral variation along a line of adjacent CMPs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub n_cdp: usize,
    /// Fractional interval-velocity change per cdp, applied about the line centre.
    pub drift: f64,
    /// Smallest admissible line length (the SGS neighbourhood width).
    pub min_cdp: usize,
}

impl Default for LineParams {
    fn default() -> Self {
        Self {
            n_cdp: 21,
            drift: 0.0,
            min_cdp: 5,
        }
    }
}

/// Velocity factor of cdp `c`.
pub fn drift_factor(params: &LineParams, c: usize) -> f64 {
    1.0 + params.drift * (c as f64 - (params.n_cdp as f64 - 1.0) / 2.0)
}

/// Adjacent gathers with smoothly drifting velocities. Each gather draws
/// noise from its own child stream, so gathers may be built in any order.
pub fn make_line(
    base: &LayerModel,
    geometry: &AcquisitionGeometry,
    params: &LineParams,
    noise: Noise,
    seed: SeedTree,
) -> Result<Vec<(CmpGather, VelocityCurve)>> {
    if params.n_cdp < params.min_cdp.max(1) {
        return domain(format!(
            "line of {} cdps is shorter than the neighbourhood width {}",
            params.n_cdp, params.min_cdp
        ));
    }
    if drift_factor(params, 0) <= 0.0 || drift_factor(params, params.n_cdp - 1) <= 0.0 {
        return domain(format!("drift {} makes velocities non-positive along the line", params.drift));
    }
    (0..params.n_cdp)
        .map(|c| {
            let model = base.scaled_velocities(drift_factor(params, c))?;
            make_gather(&model, geometry, noise, &mut seed.child(c as u64).rng())
        })
        .collect()
}

/// Ranges for [`random_model`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomModelParams {
    pub min_layers: usize,
    pub max_layers: usize,
    pub t_first: f64,
    pub t_last: f64,
    pub v_top: (f64, f64),
    pub gradient: (f64, f64),
    pub peak_hz: f64,
}

impl RandomModelParams {
    /// Models whose RMS velocities stay inside `vaxis` for reflectors
    /// between `t_first` and `t_last`.
    pub fn for_axes(t_first: f64, t_last: f64, vaxis: &VelocityAxis) -> Self {
        let span = vaxis.v_max() - vaxis.v_min;
        Self {
            min_layers: 3,
            max_layers: 6,
            t_first,
            t_last,
            v_top: (vaxis.v_min + 0.1 * span, vaxis.v_min + 0.3 * span),
            gradient: (0.15 * span / t_last, 0.55 * span / t_last),
            peak_hz: DEFAULT_PEAK_HZ,
        }
    }
}

/// Random layered model with interval velocities growing with depth.
pub fn random_model(params: &RandomModelParams, rng: &mut Rng) -> Result<LayerModel> {
    if params.min_layers == 0 || params.min_layers > params.max_layers {
        return domain("random model needs 1 <= min_layers <= max_layers");
    }
    let n = rng.gen_range(params.min_layers..=params.max_layers);
    let span = params.t_last - params.t_first;
    let times: Vec<f64> = if n == 1 {
        vec![rng.gen_range(params.t_first..=params.t_last)]
    } else {
        // jittered even spacing keeps reflectors apart
        let step = span / (n - 1) as f64;
        (0..n)
            .map(|k| {
                let t = params.t_first + k as f64 * step + rng.gen_range(-0.25..0.25) * step;
                t.clamp(params.t_first, params.t_last)
            })
            .collect()
    };
    let v_top = rng.gen_range(params.v_top.0..params.v_top.1);
    let gradient = rng.gen_range(params.gradient.0..params.gradient.1);
    let mut layers = Vec::with_capacity(n);
    let mut top = 0.0;
    for &t in &times {
        let mid = 0.5 * (top + t);
        let v = (v_top + gradient * mid) * rng.gen_range(0.97..1.03);
        layers.push(Layer { t_base: t, v_int: v });
        top = t;
    }
    let amplitudes = (0..n)
        .map(|_| {
            let a = rng.gen_range(0.5..1.0);
            if rng.gen_bool(0.5) { a } else { -a }
        })
        .collect();
    LayerModel::new(layers, params.peak_hz, amplitudes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{nmo_correct, semblance};
    use crate::grid::TimeAxis;

    fn geometry() -> AcquisitionGeometry {
        AcquisitionGeometry::regular(24, 100.0, 2400.0, 0.004, 400).unwrap()
    }

    #[test]
    fn rms_examples() {
        let one = LayerModel::from_layers(&[(2.0, 2000.0)]).unwrap();
        for t in [0.1, 1.0, 2.0] {
            assert!((rms_velocity(&one, t).unwrap() - 2000.0).abs() < 1e-9);
        }
        let two = LayerModel::from_layers(&[(1.0, 2000.0), (2.0, 3000.0)]).unwrap();
        let oracle = ((2000.0f64.powi(2) + 3000.0f64.powi(2)) / 2.0).sqrt();
        assert!((rms_velocity(&two, 2.0).unwrap() - oracle).abs() < 1e-9);
        assert!((oracle - 2549.5).abs() < 0.1);
        let flat = LayerModel::from_layers(&[(0.5, 2200.0), (1.1, 2200.0), (1.7, 2200.0)]).unwrap();
        for t in [0.3, 0.9, 1.6] {
            assert!((rms_velocity(&flat, t).unwrap() - 2200.0).abs() < 1e-9);
        }
        assert!(rms_velocity(&two, 0.0).is_err());
        assert!(rms_velocity(&two, -1.0).is_err());
        assert!(rms_velocity(&two, 2.5).is_err());
    }

    #[test]
    fn noise_free_wavelet_peaks_on_the_hyperbola() {
        let model = LayerModel::from_layers(&[(0.8, 2500.0)]).unwrap();
        let g = geometry();
        let (gather, truth) = make_gather(&model, &g, Noise::None, &mut SeedTree::new(0).rng()).unwrap();
        assert_eq!(truth.points(), &[(0.8, 2500.0)]);
        for (i, &x) in g.offsets.iter().enumerate() {
            let expected = (0.8f64.powi(2) + (x / 2500.0).powi(2)).sqrt();
            let col = gather.traces.column(i);
            let peak = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert!((g.taxis.time(peak) - expected).abs() <= g.taxis.dt, "trace {i}");
        }
    }

    #[test]
    fn measured_snr_matches_request() {
        let model = LayerModel::from_layers(&[(0.5, 2000.0), (1.0, 2600.0)]).unwrap();
        let g = geometry();
        let clean = clean_gather(&model, &g).unwrap();
        for db in [0.0, 10.0, -5.0] {
            let (noisy, _) = make_gather(&model, &g, Noise::SnrDb(db), &mut SeedTree::new(3).rng()).unwrap();
            let noise: Vec<f32> = noisy.traces.values().iter().zip(clean.traces.values()).map(|(a, b)| a - b).collect();
            let measured = 10.0 * (power(clean.traces.values()) / power(&noise)).log10();
            assert!((measured - db).abs() < 0.5, "requested {db}, measured {measured}");
        }
    }

    #[test]
    fn zero_signal_cases() {
        let mut model = LayerModel::from_layers(&[(0.5, 2000.0)]).unwrap();
        model.amplitudes = vec![0.0];
        let g = geometry();
        let err = make_gather(&model, &g, Noise::SnrDb(0.0), &mut SeedTree::new(1).rng());
        assert!(matches!(err, Err(crate::Error::Domain(_))));
        let (gather, truth) = make_gather(&model, &g, Noise::Sigma(0.5), &mut SeedTree::new(1).rng()).unwrap();
        assert_eq!(truth.len(), 1);
        let p = power(gather.traces.values());
        assert!((p - 0.25).abs() < 0.02, "noise power {p}");
    }

    #[test]
    fn generation_is_deterministic() {
        let model = LayerModel::from_layers(&[(0.5, 2000.0), (1.2, 2700.0)]).unwrap();
        let g = geometry();
        let a = make_gather(&model, &g, Noise::SnrDb(5.0), &mut SeedTree::new(9).rng()).unwrap();
        let b = make_gather(&model, &g, Noise::SnrDb(5.0), &mut SeedTree::new(9).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn isolated_reflector_peaks_in_the_spectrum() {
        let model = LayerModel::from_layers(&[(1.0, 2500.0)]).unwrap();
        let g = geometry();
        let (gather, _) = make_gather(&model, &g, Noise::None, &mut SeedTree::new(0).rng()).unwrap();
        let taxis = TimeAxis::new(0.0, 0.02, 80).unwrap();
        let vaxis = VelocityAxis::new(1500.0, 50.0, 64).unwrap();
        let s = semblance(&gather, &taxis, &vaxis, 5).unwrap();
        let (r, c) = s.argmax();
        assert!(r.abs_diff(50) <= 1 && c.abs_diff(20) <= 1, "argmax at ({r}, {c})");
    }

    #[test]
    fn true_velocity_flattens_the_event() {
        let model = LayerModel::from_layers(&[(0.9, 2300.0)]).unwrap();
        let g = geometry();
        let (gather, truth) = make_gather(&model, &g, Noise::None, &mut SeedTree::new(0).rng()).unwrap();
        let flat = nmo_correct(&gather, &truth);
        let rows: Vec<usize> = (0..g.traces())
            .map(|i| {
                let col = flat.traces.column(i);
                (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap()
            })
            .collect();
        assert!(rows.iter().all(|r| r.abs_diff(rows[0]) <= 1), "{rows:?}");
    }

    #[test]
    fn line_drift() {
        let model = LayerModel::from_layers(&[(0.5, 2000.0), (1.2, 2800.0)]).unwrap();
        let g = AcquisitionGeometry::regular(8, 100.0, 1500.0, 0.004, 350).unwrap();
        let still = make_line(&model, &g, &LineParams { n_cdp: 5, drift: 0.0, min_cdp: 5 }, Noise::None, SeedTree::new(2)).unwrap();
        assert!(still.iter().all(|(_, c)| c == &still[0].1));
        let params = LineParams { n_cdp: 21, drift: 0.01, min_cdp: 5 };
        let line = make_line(&model, &g, &params, Noise::None, SeedTree::new(2)).unwrap();
        for w in line.windows(2) {
            for (a, b) in w[0].1.points().iter().zip(w[1].1.points()) {
                assert!(b.1 > a.1);
            }
        }
        assert!(make_line(&model, &g, &LineParams { n_cdp: 3, drift: 0.0, min_cdp: 5 }, Noise::None, SeedTree::new(2)).is_err());
    }

    #[test]
    fn random_models_stay_on_the_axis() {
        let vaxis = VelocityAxis::new(1500.0, 50.0, 64).unwrap();
        let params = RandomModelParams::for_axes(0.25, 1.8, &vaxis);
        let mut rng = SeedTree::new(4).rng();
        for _ in 0..200 {
            let m = random_model(&params, &mut rng).unwrap();
            for &(t, v) in m.truth_curve().unwrap().points() {
                assert!((0.25..=2.0).contains(&t));
                assert!(v > vaxis.v_min && v < vaxis.v_max(), "v {v}");
            }
        }
    }
}
