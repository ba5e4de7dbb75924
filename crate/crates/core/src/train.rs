//! Soft labels, the BCE objective and the early-stopped training loop.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use velopick_autograd::nn::Module;
use velopick_autograd::ops;
use velopick_autograd::optim::{Adam, AdamConfig};
use velopick_autograd::weights::NamedArray;

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::features::{collate, dataset_samples, reference_curve, Sample, SgsSettings};
use crate::grid::{Grid2D, TimeAxis, VelocityAxis, VelocityCurve};
use crate::mifn::{Mifn, MifnConfig};
use crate::rng::SeedTree;

pub const CENTRE: f32 = 1.0;
pub const HALO: f32 = 0.8;

/// Target mask: each time row covered by the curve lights the cell nearest
/// the curve with 1 and its eight neighbours with 0.8, never lowering a 1.
pub fn soft_label(curve: &VelocityCurve, taxis: &TimeAxis, vaxis: &VelocityAxis) -> Grid2D {
    let (rows, cols) = (taxis.n_t, vaxis.n_v);
    let lo = taxis.position(curve.t_first()).round().max(0.0) as usize;
    let hi = taxis.position(curve.t_last()).round().min((rows - 1) as f64);
    let mut clamped = 0;
    let centres: Vec<(usize, usize)> = if hi < lo as f64 {
        Vec::new()
    } else {
        (lo..=hi as usize)
            .map(|p| {
                let q = vaxis.position(curve.value_at(taxis.time(p))).round();
                if q < 0.0 || q > (cols - 1) as f64 {
                    clamped += 1;
                }
                (p, q.clamp(0.0, (cols - 1) as f64) as usize)
            })
            .collect()
    };
    if clamped > 0 {
        warn!("label curve leaves the velocity axis at {clamped} of {rows} rows; clamped to the edge columns");
    }
    let mut mask = Grid2D::zeros(rows, cols);
    for &(p, q) in &centres {
        for r in p.saturating_sub(1)..=(p + 1).min(rows - 1) {
            for c in q.saturating_sub(1)..=(q + 1).min(cols - 1) {
                if mask.get(r, c) < HALO {
                    mask.set(r, c, HALO);
                }
            }
        }
    }
    for &(p, q) in &centres {
        mask.set(p, q, CENTRE);
    }
    mask
}

/// Mean clipped binary cross-entropy, evaluated directly in f64.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let clip = ops::BCE_CLIP;
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let p = p.clamp(clip, 1.0 - clip);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    Ok(-s / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Stalled(usize),
    Stop,
}

/// Patience counter against the running best; only a strict decrease
/// resets it.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    stalls: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            stalls: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, loss: f64) -> Verdict {
        if loss < self.best {
            self.best = loss;
            self.stalls = 0;
            return Verdict::Improved;
        }
        self.stalls += 1;
        if self.stalls >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Stalled(self.stalls)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_iterations: usize,
    pub validate_every: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 0.01,
            max_iterations: 5000,
            validate_every: 15,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_iterations == 0 || self.validate_every == 0 || self.patience == 0 {
            return Err(Error::Config(format!("training counts must be positive: {self:?}")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// One validation checkpoint: mean training BCE since the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub train_bce: f64,
    pub val_bce: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network holding the best-validation weights.
    pub net: Mifn<f32>,
    pub history: Vec<HistoryRow>,
    pub best_iter: usize,
    pub best_val: f64,
    pub iterations: usize,
    pub stopped_early: bool,
}

pub fn write_history(path: impl AsRef<Path>, history: &[HistoryRow]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "train_bce", "val_bce"])?;
    for row in history {
        w.write_record([row.iter.to_string(), row.train_bce.to_string(), row.val_bce.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<HistoryRow>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Mean BCE of `net` over `samples` in evaluation mode.
pub fn evaluate(net: &Mifn<f32>, samples: &[Sample], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (batch, labels) = collate::<f32>(&refs, net.config.variant)?;
        let labels = labels.ok_or_else(|| Error::Config("validation sample without a label".into()))?;
        let pred = net.forward(&batch, false)?;
        total += ops::bce(&pred, &labels)?.item() as f64 * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Adam on shuffled batches with periodic validation and patience-based
/// stopping. Validation also runs before the first step so the returned
/// weights are never worse than the starting point on the validation set.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    net_config: MifnConfig,
    cfg: &TrainConfig,
    init: Option<&[NamedArray]>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config(format!(
            "training needs both splits: {} training and {} validation samples",
            train_set.len(),
            val_set.len()
        )));
    }
    if train_set.iter().chain(val_set).any(|s| s.label.is_none()) {
        return Err(Error::Config("every training and validation sample needs a label".into()));
    }
    let seeds = SeedTree::new(cfg.seed);
    let net = Mifn::<f32>::new(net_config, seeds.named("weights"))?;
    if let Some(arrays) = init {
        net.load_state(arrays)?;
    }
    let params = net.parameters();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut rng = seeds.named("batches").rng();
    let batch = cfg.batch_size.min(train_set.len());
    let mut order: Vec<usize> = Vec::new();

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = net.state();
    let mut best_iter = 0;
    stopper.observe(evaluate(&net, val_set, cfg.batch_size)?);
    let mut history = Vec::new();
    let (mut running, mut count) = (0.0, 0usize);
    let mut stopped_early = false;
    let mut iterations = 0;
    let clock = Instant::now();

    for iter in 1..=cfg.max_iterations {
        if order.len() < batch {
            order = (0..train_set.len()).collect();
            order.shuffle(&mut rng);
        }
        let picked: Vec<&Sample> = order.drain(order.len() - batch..).map(|i| &train_set[i]).collect();
        let (inputs, labels) = collate::<f32>(&picked, net_config.variant)?;
        let pred = net.forward(&inputs, true)?;
        let loss = ops::bce(&pred, &labels.expect("labels checked above"))?;
        net.zero_grad();
        loss.backward();
        adam.step(&params);
        running += loss.item() as f64;
        count += 1;
        iterations = iter;

        if iter % cfg.validate_every == 0 {
            let val = evaluate(&net, val_set, cfg.batch_size)?;
            history.push(HistoryRow {
                iter,
                train_bce: running / count as f64,
                val_bce: val,
            });
            info!(
                "iter {iter}: train bce {:.5}, val bce {val:.5} ({:.1} s)",
                running / count as f64,
                clock.elapsed().as_secs_f64()
            );
            (running, count) = (0.0, 0);
            match stopper.observe(val) {
                Verdict::Improved => {
                    best = net.state();
                    best_iter = iter;
                }
                Verdict::Stalled(_) => {}
                Verdict::Stop => {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    net.load_state(&best)?;
    Ok(TrainOutcome {
        net,
        history,
        best_iter,
        best_val: stopper.best(),
        iterations,
        stopped_early,
    })
}

/// Splits a dataset by its manifest flags, checking that no line straddles
/// the training and validation splits.
pub fn line_split(ds: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let train = ds.split_entries(Split::Train);
    let val = ds.split_entries(Split::Validation);
    let lines = |idx: &[usize]| idx.iter().map(|&i| ds.entry(i).line).collect::<BTreeSet<_>>();
    let shared: Vec<u32> = lines(&train).intersection(&lines(&val)).copied().collect();
    if !shared.is_empty() {
        return Err(Error::Config(format!(
            "lines {shared:?} appear in both the training and validation splits"
        )));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(format!(
            "dataset has {} training and {} validation entries; both must be non-empty",
            train.len(),
            val.len()
        )));
    }
    Ok((train, val))
}

/// Loads both splits of a dataset as samples and trains on them.
pub fn train_dataset(
    ds: &Dataset,
    net_config: MifnConfig,
    cfg: &TrainConfig,
    settings: &SgsSettings,
    init: Option<&[NamedArray]>,
) -> Result<TrainOutcome> {
    let (train_idx, val_idx) = line_split(ds)?;
    let reference = reference_curve(ds)?;
    let dims = (net_config.height, net_config.width);
    let with_sgs = net_config.variant.uses_sgs();
    let train_set = dataset_samples(ds, &train_idx, reference.as_ref(), settings, with_sgs, dims)?;
    let val_set = dataset_samples(ds, &val_idx, reference.as_ref(), settings, with_sgs, dims)?;
    train(&train_set, &val_set, net_config, cfg, init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::make_sample;
    use crate::mifn::Variant;
    use crate::spectrum::VelocitySpectrum;

    fn axes() -> (TimeAxis, VelocityAxis) {
        (TimeAxis::new(0.0, 0.01, 12).unwrap(), VelocityAxis::new(1000.0, 100.0, 10).unwrap())
    }

    #[test]
    fn single_knot_label() {
        let (taxis, vaxis) = axes();
        let m = soft_label(&VelocityCurve::new(vec![(0.05, 1400.0)]).unwrap(), &taxis, &vaxis);
        for p in 0..12usize {
            for q in 0..10usize {
                let want = match (p.abs_diff(5usize), q.abs_diff(4usize)) {
                    (0, 0) => 1.0,
                    (0..=1, 0..=1) => 0.8,
                    _ => 0.0,
                };
                assert_eq!(m.get(p, q), want, "cell {p},{q}");
            }
        }
    }

    #[test]
    fn label_rows_and_halo() {
        let (taxis, vaxis) = axes();
        let curve = VelocityCurve::new(vec![(0.0, 1100.0), (0.11, 2200.0)]).unwrap();
        let m = soft_label(&curve, &taxis, &vaxis);
        for p in 0..12usize {
            let row = m.row(p);
            assert_eq!(row.iter().filter(|v| **v == 1.0).count(), 1);
            assert!(row.iter().all(|v| [0.0, 0.8, 1.0].contains(v)));
            let arg = row.iter().position(|v| *v == 1.0).unwrap();
            assert_eq!(arg, vaxis.nearest(curve.value_at(taxis.time(p))));
        }
    }

    #[test]
    fn edge_curves_clamp() {
        let (taxis, vaxis) = axes();
        let m = soft_label(&VelocityCurve::constant(0.0, 1.0, 5000.0).unwrap(), &taxis, &vaxis);
        assert!((0..12).all(|p| m.get(p, 9) == 1.0 && m.get(p, 8) == 0.8));
    }

    #[test]
    fn bce_reference_values() {
        assert!((bce_loss(&[0.5; 4], &[0.5; 4]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(&[0.0, 1.0], &[0.0, 1.0]).unwrap() < 1e-6);
        let p = [0.2, 0.7, 0.9, 0.4];
        let t = [0.0, 1.0, 0.8, 0.3];
        let hand = -(0.8f64.ln() + 0.7f64.ln() + (0.8 * 0.9f64.ln() + 0.2 * 0.1f64.ln()) + (0.3 * 0.4f64.ln() + 0.7 * 0.6f64.ln())) / 4.0;
        assert!((bce_loss(&p, &t).unwrap() - hand).abs() < 1e-12);
        assert!(bce_loss(&p, &t[..3]).is_err());
    }

    #[test]
    fn stopping_fires_on_tenth_stall() {
        let mut s = EarlyStopping::new(10);
        assert_eq!(s.observe(0.5), Verdict::Improved);
        for k in 1..10 {
            assert_eq!(s.observe(0.5), Verdict::Stalled(k));
        }
        assert_eq!(s.observe(0.5), Verdict::Stop);

        let mut s = EarlyStopping::new(3);
        s.observe(1.0);
        s.observe(1.2);
        s.observe(1.1);
        assert_eq!(s.observe(0.9), Verdict::Improved);
        assert_eq!(s.best(), 0.9);
    }

    #[test]
    fn history_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            HistoryRow { iter: 15, train_bce: 0.6, val_bce: 0.55 },
            HistoryRow { iter: 30, train_bce: 0.4, val_bce: 0.45 },
        ];
        let path = dir.path().join("h.csv");
        write_history(&path, &rows).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("iter,train_bce,val_bce\n"));
        assert_eq!(read_history(&path).unwrap(), rows);
    }

    fn toy_samples(n: usize, seed: u64) -> Vec<Sample> {
        use rand::Rng;
        let (taxis, vaxis) = axes();
        let mut rng = SeedTree::new(seed).rng();
        (0..n)
            .map(|_| {
                let v0 = rng.gen_range(1200.0..1600.0);
                let curve = VelocityCurve::new(vec![(0.0, v0), (0.11, v0 + 400.0)]).unwrap();
                let spec = VelocitySpectrum::new(taxis, vaxis, soft_label(&curve, &taxis, &vaxis)).unwrap();
                make_sample(&spec, None, Some(&curve), None, (16, 8)).unwrap()
            })
            .collect()
    }

    fn toy_config() -> MifnConfig {
        MifnConfig {
            height: 16,
            width: 8,
            depth: 2,
            base_channels: 4,
            sgs_channels: 2,
            variant: Variant::NoSgs,
            ..MifnConfig::default()
        }
    }

    #[test]
    fn loop_is_deterministic_and_keeps_best() {
        let train_set = toy_samples(6, 1);
        let val_set = toy_samples(3, 2);
        let cfg = TrainConfig {
            batch_size: 4,
            max_iterations: 40,
            validate_every: 5,
            patience: 3,
            seed: 7,
            ..TrainConfig::default()
        };
        let a = train(&train_set, &val_set, toy_config(), &cfg, None).unwrap();
        let b = train(&train_set, &val_set, toy_config(), &cfg, None).unwrap();
        assert_eq!(a.history, b.history);
        assert!(!a.history.is_empty());
        let best = evaluate(&a.net, &val_set, 4).unwrap();
        assert!((best - a.best_val).abs() < 1e-6);
        assert!(a.history.iter().all(|h| h.val_bce >= a.best_val - 1e-12));
    }

    #[test]
    fn fine_tuning_starts_from_given_weights() {
        let train_set = toy_samples(6, 3);
        let val_set = toy_samples(3, 4);
        let cfg = TrainConfig {
            batch_size: 4,
            max_iterations: 30,
            validate_every: 5,
            seed: 1,
            ..TrainConfig::default()
        };
        let first = train(&train_set, &val_set, toy_config(), &cfg, None).unwrap();
        let tuned = train(&train_set, &val_set, toy_config(), &TrainConfig { seed: 2, ..cfg }, Some(&first.net.state())).unwrap();
        assert!(tuned.best_val <= first.best_val + 1e-6);
    }

    #[test]
    fn empty_split_is_a_config_error() {
        let s = toy_samples(2, 5);
        assert!(matches!(train(&s, &[], toy_config(), &TrainConfig::default(), None), Err(Error::Config(_))));
    }
}
