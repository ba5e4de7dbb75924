//! End-to-end helpers: synthetic datasets on disk, batched inference and
//! picking over dataset entries.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_dataset, write_dataset, Dataset, DatasetManifest, Entry, EntryData, Split};
use crate::error::{Error, Result};
use crate::features::{collate, dataset_samples, reference_curve, Sample, SgsSettings};
use crate::grid::{Grid2D, TimeAxis, VelocityAxis, VelocityCurve};
use crate::mifn::{split_maps, Mifn, MifnConfig, Variant};
use crate::pick::{segmentation_to_curve, vmae, PickConfig};
use crate::rng::SeedTree;
use crate::spectrum::{semblance, AcquisitionGeometry, DEFAULT_WINDOW_HALF};
use crate::synth::{make_line, random_model, LayerModel, LineParams, Noise, RandomModelParams};
use crate::train::{train_dataset, TrainConfig};

/// Everything needed to simulate lines of gathers with spectra and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub geometry: AcquisitionGeometry,
    /// Spectrum axes.
    pub taxis: TimeAxis,
    pub vaxis: VelocityAxis,
    pub line: LineParams,
    /// `None` for noise-free gathers.
    pub snr_db: Option<f64>,
    pub window_half: usize,
    /// Shared by every line when set; otherwise each line draws its own.
    pub model: Option<LayerModel>,
    pub random: RandomModelParams,
}

impl SynthConfig {
    /// 24 offsets to 2.4 km, 2 s at 4 ms, a 64 x 40 spectrum grid.
    pub fn desk() -> Self {
        let geometry = AcquisitionGeometry::regular(24, 100.0, 2400.0, 0.004, 500).expect("valid geometry");
        let taxis = TimeAxis::new(0.0, 0.0156, 64).expect("valid axis");
        let vaxis = VelocityAxis::new(1500.0, 50.0, 40).expect("valid axis");
        Self {
            random: RandomModelParams::for_axes(0.12, 0.92, &vaxis),
            geometry,
            taxis,
            vaxis,
            line: LineParams {
                n_cdp: 21,
                drift: 0.002,
                min_cdp: 5,
            },
            snr_db: Some(10.0),
            window_half: DEFAULT_WINDOW_HALF,
            model: None,
        }
    }

    pub fn noise(&self) -> Noise {
        self.snr_db.map_or(Noise::None, Noise::snr_db)
    }
}

/// Simulates one line: manifest entries plus gathers, spectra and labels.
/// Labels are the truth curves sampled on the spectrum time axis.
pub fn synth_line(cfg: &SynthConfig, line: u32, split: Split, seed: SeedTree) -> Result<(Vec<Entry>, Vec<EntryData>)> {
    let seed = seed.child(line as u64);
    let base = match &cfg.model {
        Some(m) => m.clone(),
        None => random_model(&cfg.random, &mut seed.named("model").rng())?,
    };
    let gathers = make_line(&base, &cfg.geometry, &cfg.line, cfg.noise(), seed.named("noise"))?;
    let data = gathers
        .into_par_iter()
        .map(|(g, truth)| {
            let spectrum = semblance(&g, &cfg.taxis, &cfg.vaxis, cfg.window_half)?;
            Ok(EntryData {
                label: Some(truth.resampled(&cfg.taxis)?),
                spectrum: Some(spectrum),
                gather: Some(g),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let entries = (0..data.len()).map(|c| Entry::conventional(line, c as u32, split)).collect();
    Ok((entries, data))
}

/// Writes a dataset of the given `(line, split)` pairs and reopens it.
pub fn synth_dataset(root: impl AsRef<Path>, cfg: &SynthConfig, lines: &[(u32, Split)], seed: u64) -> Result<Dataset> {
    let root = root.as_ref();
    let mut manifest = DatasetManifest::new(cfg.taxis, cfg.vaxis, Some(cfg.geometry.clone()));
    let mut data = Vec::new();
    for &(line, split) in lines {
        let (entries, d) = synth_line(cfg, line, split, SeedTree::new(seed))?;
        manifest.entries.extend(entries);
        data.extend(d);
    }
    write_dataset(root, &manifest, &data)?;
    read_dataset(root)
}

/// Probability maps at network size, in evaluation mode.
pub fn predict(net: &Mifn<f32>, samples: &[Sample], batch_size: usize) -> Result<Vec<Grid2D>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (batch, _) = collate::<f32>(&refs, net.config.variant)?;
        out.extend(split_maps(&net.forward(&batch, false)?));
    }
    Ok(out)
}

/// Picks a network-size map on the spectrum grid.
pub fn pick_map(probs: &Grid2D, taxis: &TimeAxis, vaxis: &VelocityAxis, cfg: &PickConfig) -> Result<VelocityCurve> {
    segmentation_to_curve(&probs.resized(taxis.n_t, vaxis.n_v), taxis, vaxis, cfg)
}

/// Segmentation maps and picked curves for dataset entries.
pub struct Picks {
    pub indices: Vec<usize>,
    pub maps: Vec<Grid2D>,
    pub curves: Vec<VelocityCurve>,
}

pub fn pick_entries(
    ds: &Dataset,
    net: &Mifn<f32>,
    indices: &[usize],
    reference: Option<&VelocityCurve>,
    settings: &SgsSettings,
    cfg: &PickConfig,
) -> Result<Picks> {
    let dims = (net.config.height, net.config.width);
    let samples = dataset_samples(ds, indices, reference, settings, net.config.variant.uses_sgs(), dims)?;
    let maps = predict(net, &samples, 32)?;
    let (taxis, vaxis) = (ds.manifest.taxis, ds.manifest.vaxis);
    let curves = maps.iter().map(|m| pick_map(m, &taxis, &vaxis, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(Picks {
        indices: indices.to_vec(),
        maps,
        curves,
    })
}

/// Mean VMAE of picked curves against the labels of their entries.
pub fn mean_vmae(ds: &Dataset, picks: &Picks) -> Result<f64> {
    let mut total = 0.0;
    for (c, &i) in picks.curves.iter().zip(&picks.indices) {
        total += vmae(c, &ds.label(i)?, &ds.manifest.taxis);
    }
    Ok(total / picks.curves.len().max(1) as f64)
}

/// Settings of a four-way ablation on one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub synth: SynthConfig,
    pub train_lines: u32,
    pub val_lines: u32,
    pub test_lines: u32,
    pub net: MifnConfig,
    pub train: TrainConfig,
    pub settings: SgsSettings,
    pub pick: PickConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub vmae_mps: f64,
}

pub const ABLATION_ROWS: [&str; 4] = ["full", "w/o SFE", "w/o SGS", "naive post-processing"];

/// Lines `0..train`, then validation, then test lines, by split.
pub fn line_plan(train: u32, val: u32, test: u32) -> Vec<(u32, Split)> {
    let mut out: Vec<(u32, Split)> = (0..train).map(|l| (l, Split::Train)).collect();
    out.extend((train..train + val).map(|l| (l, Split::Validation)));
    out.extend((train + val..train + val + test).map(|l| (l, Split::Test)));
    out
}

/// Trains the full network and both input ablations on one dataset written
/// under `root`, and scores each on the test lines; the last row re-picks
/// the full network's maps with two-point extrapolation.
pub fn ablate(root: impl AsRef<Path>, cfg: &AblationConfig) -> Result<Vec<AblationRow>> {
    let plan = line_plan(cfg.train_lines, cfg.val_lines, cfg.test_lines);
    let ds = synth_dataset(root, &cfg.synth, &plan, cfg.train.seed)?;
    let reference = reference_curve(&ds)?;
    let test = ds.split_entries(Split::Test);
    if test.is_empty() {
        return Err(Error::Config("ablation needs at least one test line".into()));
    }
    let mut rows = Vec::with_capacity(4);
    let mut full_maps = None;
    for (name, variant) in ABLATION_ROWS.iter().zip([Variant::Full, Variant::NoSfe, Variant::NoSgs]) {
        let outcome = train_dataset(&ds, cfg.net.with_variant(variant), &cfg.train, &cfg.settings, None)?;
        let picks = pick_entries(&ds, &outcome.net, &test, reference.as_ref(), &cfg.settings, &cfg.pick)?;
        rows.push(AblationRow {
            variant: name.to_string(),
            vmae_mps: mean_vmae(&ds, &picks)?,
        });
        if variant == Variant::Full {
            full_maps = Some(picks);
        }
    }
    let mut picks = full_maps.expect("full variant runs first");
    let naive = PickConfig {
        naive_extrapolation: true,
        ..cfg.pick
    };
    let (taxis, vaxis) = (ds.manifest.taxis, ds.manifest.vaxis);
    picks.curves = picks.maps.iter().map(|m| pick_map(m, &taxis, &vaxis, &naive)).collect::<Result<_>>()?;
    rows.push(AblationRow {
        variant: ABLATION_ROWS[3].to_string(),
        vmae_mps: mean_vmae(&ds, &picks)?,
    });
    Ok(rows)
}

pub fn write_ablation(path: impl AsRef<Path>, rows: &[AblationRow]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
