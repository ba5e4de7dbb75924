//! Network samples: resized spectrum channels, SGS slices with their curve
//! masks, and soft-label targets.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use velopick_autograd::{Real, Tensor};

use crate::dataset::{Dataset, Split};
use crate::enhance::multiscale_grid;
use crate::error::{Error, Result};
use crate::grid::{Grid2D, TimeAxis, VelocityAxis, VelocityCurve};
use crate::mifn::{Batch, Variant};
use crate::sgs::{self, build_sgs, neighborhood, rasterize_vc, SgsPack};
use crate::spectrum::{CmpGather, VelocitySpectrum};
use crate::train::soft_label;

/// Bands used by the constant-velocity scan when no labels exist.
pub const SCAN_WINDOWS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgsSettings {
    pub k: usize,
    pub percentages: Vec<f64>,
    /// Coarse mask rows; half the spectrum rows when unset.
    pub coarse_rows: Option<usize>,
}

impl Default for SgsSettings {
    fn default() -> Self {
        Self {
            k: sgs::DEFAULT_K,
            percentages: sgs::DEFAULT_PERCENTAGES.to_vec(),
            coarse_rows: None,
        }
    }
}

/// Everything the network needs for one cdp, already at network size.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub line: u32,
    pub cdp: u32,
    pub height: usize,
    pub width: usize,
    /// `STACK_CHANNELS x H x W`.
    pub spectrum: Vec<f32>,
    /// `m x T x k` slices and `m x H x W` masks.
    pub sgs: Option<SgsInput>,
    /// `H x W` soft label.
    pub label: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgsInput {
    pub m: usize,
    pub t: usize,
    pub k: usize,
    pub slices: Vec<f32>,
    pub masks: Vec<f32>,
}

/// The original spectrum and its nine enhanced maps, each resized to `h x w`.
pub fn spectrum_channels(spec: &VelocitySpectrum, h: usize, w: usize) -> Vec<f32> {
    multiscale_grid(&spec.values)
        .iter()
        .flat_map(|g| g.resized(h, w).into_values())
        .collect()
}

/// One mask per curve, rasterized on the spectrum grid and resized to `h x w`.
pub fn curve_masks(
    curves: &[VelocityCurve],
    taxis: &TimeAxis,
    vaxis: &VelocityAxis,
    coarse: usize,
    h: usize,
    w: usize,
) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(curves.len() * h * w);
    for c in curves {
        out.extend(rasterize_vc(c, taxis, vaxis, coarse)?.resized(h, w).into_values());
    }
    Ok(out)
}

pub fn label_plane(curve: &VelocityCurve, taxis: &TimeAxis, vaxis: &VelocityAxis, h: usize, w: usize) -> Vec<f32> {
    soft_label(curve, taxis, vaxis).resized(h, w).into_values()
}

pub fn make_sample(
    spec: &VelocitySpectrum,
    pack: Option<&SgsPack>,
    label: Option<&VelocityCurve>,
    coarse_rows: Option<usize>,
    (h, w): (usize, usize),
) -> Result<Sample> {
    let sgs = match pack {
        Some(p) => {
            let coarse = coarse_rows.unwrap_or_else(|| sgs::coarse_rows(spec.taxis.n_t));
            Some(SgsInput {
                m: p.m(),
                t: p.t(),
                k: p.k(),
                slices: p.slices.iter().flat_map(|s| s.values().iter().copied()).collect(),
                masks: curve_masks(&p.curves, &spec.taxis, &spec.vaxis, coarse, h, w)?,
            })
        }
        None => None,
    };
    Ok(Sample {
        line: 0,
        cdp: 0,
        height: h,
        width: w,
        spectrum: spectrum_channels(spec, h, w),
        sgs,
        label: label.map(|c| label_plane(c, &spec.taxis, &spec.vaxis, h, w)),
    })
}

/// Stacks samples into network tensors, plus the label tensor when every
/// sample carries one.
pub fn collate<T: Real>(samples: &[&Sample], variant: Variant) -> Result<(Batch<T>, Option<Tensor<T>>)> {
    let first = samples.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
    let (n, h, w) = (samples.len(), first.height, first.width);
    let hw = h * w;
    let channels = variant.spectrum_channels();
    let mut spectra = Vec::with_capacity(n * channels * hw);
    for s in samples {
        if (s.height, s.width) != (h, w) {
            return Err(Error::Shape(format!(
                "sample {}x{} in a batch of {h}x{w}",
                s.height, s.width
            )));
        }
        spectra.extend(s.spectrum[..channels * hw].iter().map(|v| T::of(*v as f64)));
    }
    let spectra = Tensor::new(spectra, &[n, channels, h, w]);

    let sgs = if variant.uses_sgs() {
        let mut slices = Vec::new();
        let mut masks = Vec::new();
        let mut dims = None;
        for s in samples {
            let g = s.sgs.as_ref().ok_or_else(|| Error::Shape(format!("line {} cdp {} has no SGS input", s.line, s.cdp)))?;
            if *dims.get_or_insert((g.m, g.t, g.k)) != (g.m, g.t, g.k) {
                return Err(Error::Shape("samples disagree on SGS slice dimensions".into()));
            }
            slices.extend(g.slices.iter().map(|v| T::of(*v as f64)));
            masks.extend(g.masks.iter().map(|v| T::of(*v as f64)));
        }
        let (m, t, k) = dims.expect("non-empty batch");
        Some((
            Tensor::new(slices, &[n * m, 1, t, k]),
            Tensor::new(masks, &[n * m, 1, h, w]),
            m,
        ))
    } else {
        None
    };

    let labels = if samples.iter().all(|s| s.label.is_some()) {
        let v = samples
            .iter()
            .flat_map(|s| s.label.as_ref().expect("checked").iter().map(|x| T::of(*x as f64)))
            .collect();
        Some(Tensor::new(v, &[n, 1, h, w]))
    } else {
        None
    };
    Ok((Batch { spectra, sgs }, labels))
}

/// Mean of every training label, or `None` when the training split has none.
pub fn reference_curve(ds: &Dataset) -> Result<Option<VelocityCurve>> {
    let labels = ds
        .split_entries(Split::Train)
        .into_iter()
        .filter(|&i| ds.has_label(i))
        .map(|i| ds.label(i))
        .collect::<Result<Vec<_>>>()?;
    if labels.is_empty() {
        return Ok(None);
    }
    sgs::mean_curve(&labels, &ds.manifest.taxis).map(Some)
}

/// SGS pack of entry `i` from its line neighbours. Without a reference the
/// centre gather's constant-velocity scan is used.
pub fn entry_pack(
    ds: &Dataset,
    gathers: &BTreeMap<usize, CmpGather>,
    i: usize,
    reference: Option<&VelocityCurve>,
    settings: &SgsSettings,
) -> Result<SgsPack> {
    let line = ds.line_entries(ds.entry(i).line);
    let pos = line.iter().position(|&j| j == i).expect("entry belongs to its line");
    let range = neighborhood(line.len(), pos, settings.k.min(line.len()))?;
    let neighbours = line[range]
        .iter()
        .map(|j| {
            gathers.get(j).ok_or_else(|| {
                let e = ds.entry(*j);
                Error::Format(format!("line {} cdp {} has no gather", e.line, e.cdp))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scanned;
    let reference = match reference {
        Some(r) => r,
        None => {
            scanned = sgs::constant_velocity_scan(&gathers[&i], &ds.manifest.vaxis, SCAN_WINDOWS)?;
            &scanned
        }
    };
    build_sgs(&neighbours, reference, &settings.percentages)
}

/// Samples for `indices`, sized `h x w`; SGS inputs are built only when
/// `with_sgs`, and labels are attached whenever the entry has one.
pub fn dataset_samples(
    ds: &Dataset,
    indices: &[usize],
    reference: Option<&VelocityCurve>,
    settings: &SgsSettings,
    with_sgs: bool,
    dims: (usize, usize),
) -> Result<Vec<Sample>> {
    let mut gathers = BTreeMap::new();
    if with_sgs {
        let lines: std::collections::BTreeSet<u32> = indices.iter().map(|&i| ds.entry(i).line).collect();
        for line in lines {
            for j in ds.line_entries(line) {
                if ds.entry(j).gather.is_some() {
                    gathers.insert(j, ds.gather(j)?);
                }
            }
        }
    }
    indices
        .par_iter()
        .map(|&i| {
            let spec = ds.spectrum(i)?;
            let pack = if with_sgs {
                Some(entry_pack(ds, &gathers, i, reference, settings)?)
            } else {
                None
            };
            let label = if ds.has_label(i) { Some(ds.label(i)?) } else { None };
            let mut s = make_sample(&spec, pack.as_ref(), label.as_ref(), settings.coarse_rows, dims)?;
            s.line = ds.entry(i).line;
            s.cdp = ds.entry(i).cdp;
            Ok(s)
        })
        .collect()
}

/// Network probabilities resized back onto the spectrum grid.
pub fn to_spectrum_grid(probs: &Grid2D, taxis: &TimeAxis, vaxis: &VelocityAxis) -> Grid2D {
    probs.resized(taxis.n_t, vaxis.n_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{semblance, AcquisitionGeometry};
    use crate::synth::{make_gather, LayerModel, Noise};
    use crate::enhance::STACK_CHANNELS;
    use crate::rng::SeedTree;

    fn spectrum() -> (VelocitySpectrum, CmpGather, VelocityCurve) {
        let geo = AcquisitionGeometry::regular(12, 50.0, 1200.0, 0.004, 200).unwrap();
        let model = LayerModel::from_layers(&[(0.3, 1800.0), (0.6, 2400.0)]).unwrap();
        let (g, truth) = make_gather(&model, &geo, Noise::None, &mut SeedTree::new(1).rng()).unwrap();
        let taxis = TimeAxis::new(0.0, 0.02, 40).unwrap();
        let vaxis = VelocityAxis::new(1500.0, 50.0, 24).unwrap();
        (semblance(&g, &taxis, &vaxis, 5).unwrap(), g, truth)
    }

    #[test]
    fn sample_shapes() {
        let (spec, g, truth) = spectrum();
        let pack = build_sgs(&[&g, &g, &g], &truth, &[0.9, 1.0, 1.1]).unwrap();
        let s = make_sample(&spec, Some(&pack), Some(&truth), None, (32, 16)).unwrap();
        assert_eq!(s.spectrum.len(), STACK_CHANNELS * 32 * 16);
        let sg = s.sgs.as_ref().unwrap();
        assert_eq!((sg.m, sg.t, sg.k), (3, 200, 3));
        assert_eq!(sg.masks.len(), 3 * 32 * 16);
        assert!(sg.masks.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(s.label.as_ref().unwrap().iter().all(|v| (0.0..=1.0).contains(v)));

        let (b, l) = collate::<f32>(&[&s, &s], Variant::Full).unwrap();
        assert_eq!(b.spectra.shape(), &[2, 10, 32, 16]);
        assert_eq!(b.sgs.as_ref().unwrap().0.shape(), &[6, 1, 200, 3]);
        assert_eq!(l.unwrap().shape(), &[2, 1, 32, 16]);
        let (b, _) = collate::<f32>(&[&s], Variant::NoSfe).unwrap();
        assert_eq!(b.spectra.shape(), &[1, 1, 32, 16]);
        assert_eq!(b.spectra.to_f32(), s.spectrum[..512].to_vec());
        let (b, _) = collate::<f32>(&[&s], Variant::NoSgs).unwrap();
        assert!(b.sgs.is_none());
    }

    #[test]
    fn sgs_variant_needs_slices() {
        let (spec, _, _) = spectrum();
        let s = make_sample(&spec, None, None, None, (16, 8)).unwrap();
        assert!(collate::<f32>(&[&s], Variant::Full).is_err());
        assert!(collate::<f32>(&[&s], Variant::NoSgs).is_ok());
    }
}
