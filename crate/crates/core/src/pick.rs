//! Segmentation maps to velocity curves, and quality control of the picks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, TimeAxis, VelocityAxis, VelocityCurve};
use crate::spectrum::{nmo_correct, CmpGather};

/// Rows whose maximum probability is below this count as unsegmented.
pub const ACTIVATION_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PickConfig {
    /// Regression span in seconds at each end; a tenth of the time axis
    /// when unset.
    pub t_t: Option<f64>,
    /// Two-point extrapolation instead of the least-squares fit.
    pub naive_extrapolation: bool,
    pub floor: f64,
}

impl Default for PickConfig {
    fn default() -> Self {
        Self {
            t_t: None,
            naive_extrapolation: false,
            floor: ACTIVATION_FLOOR,
        }
    }
}

impl PickConfig {
    pub fn span(&self, taxis: &TimeAxis) -> Result<f64> {
        let t = self.t_t.unwrap_or(0.1 * taxis.span());
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("regression span must be positive, got {t}")));
        }
        Ok(t)
    }
}

/// Column of the row maximum; equal maxima are averaged and rounded half up.
/// `None` when the maximum is below `floor`.
pub fn row_pick(row: &[f32], floor: f64) -> Option<usize> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !((max as f64) >= floor) {
        return None;
    }
    let (sum, n) = row
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == max)
        .fold((0usize, 0usize), |(s, n), (i, _)| (s + i, n + 1));
    // half up: floor((2s + n) / 2n)
    Some((2 * sum + n) / (2 * n))
}

/// Least-squares line `v = a + b t`; `None` when the times do not vary.
pub fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = points.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if stt <= 0.0 {
        return None;
    }
    let stv: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum();
    let b = stv / stt;
    Some((mv - b * mt, b))
}

fn two_point(a: (f64, f64), b: (f64, f64)) -> Option<(f64, f64)> {
    if b.0 == a.0 {
        return None;
    }
    let slope = (b.1 - a.1) / (b.0 - a.0);
    Some((a.1 - slope * a.0, slope))
}

/// Argmax picks on a map laid on the spectrum grid, joined linearly and
/// extended over the uncovered shallow and deep rows. One knot per time
/// sample; velocities are clamped to the axis.
pub fn segmentation_to_curve(seg: &Grid2D, taxis: &TimeAxis, vaxis: &VelocityAxis, cfg: &PickConfig) -> Result<VelocityCurve> {
    if seg.dims() != (taxis.n_t, vaxis.n_v) {
        return Err(Error::Shape(format!(
            "segmentation is {}x{}, axes are {}x{}",
            seg.rows(),
            seg.cols(),
            taxis.n_t,
            vaxis.n_v
        )));
    }
    let span = cfg.span(taxis)?;
    let picks: Vec<(f64, f64)> = (0..seg.rows())
        .filter_map(|r| row_pick(seg.row(r), cfg.floor).map(|c| (taxis.time(r), vaxis.velocity(c))))
        .collect();
    let (first, last) = match (picks.first(), picks.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::EmptyPick),
    };
    let shallow = if cfg.naive_extrapolation {
        picks.get(1).and_then(|b| two_point(first, *b))
    } else {
        let window: Vec<_> = picks.iter().copied().filter(|p| p.0 <= first.0 + span).collect();
        fit_line(&window)
    };
    let deep = if cfg.naive_extrapolation {
        (picks.len() >= 2).then(|| two_point(picks[picks.len() - 2], last)).flatten()
    } else {
        let window: Vec<_> = picks.iter().copied().filter(|p| p.0 >= last.0 - span).collect();
        fit_line(&window)
    };
    let joined = VelocityCurve::new(picks.clone())?;
    let knots = taxis
        .times()
        .into_iter()
        .map(|t| {
            let v = if t < first.0 {
                shallow.map_or(first.1, |(a, b)| a + b * t)
            } else if t > last.0 {
                deep.map_or(last.1, |(a, b)| a + b * t)
            } else {
                joined.value_at(t)
            };
            (t, v.clamp(vaxis.v_min, vaxis.v_max()))
        })
        .collect();
    VelocityCurve::new(knots)
}

/// Mean absolute velocity difference over the samples of `taxis`.
pub fn vmae(auto: &VelocityCurve, manual: &VelocityCurve, taxis: &TimeAxis) -> f64 {
    let times = taxis.times();
    times.iter().map(|&t| (auto.value_at(t) - manual.value_at(t)).abs()).sum::<f64>() / times.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QcReport {
    /// Against manual picks, when available.
    pub vmae: Option<f64>,
    /// Squared offset sum per time row, summed over cdps.
    pub row_power: Vec<f64>,
    /// Stacked traces, one column per cdp.
    #[serde(skip)]
    pub section: Grid2D,
}

impl QcReport {
    pub fn total_power(&self) -> f64 {
        self.row_power.iter().sum()
    }
}

/// NMO-corrects each gather with its curve and stacks.
pub fn qc(gathers: &[&CmpGather], curves: &[VelocityCurve]) -> Result<QcReport> {
    if gathers.len() != curves.len() || gathers.is_empty() {
        return Err(Error::Shape(format!("{} gathers but {} curves", gathers.len(), curves.len())));
    }
    let n_t = gathers[0].geometry.taxis.n_t;
    if gathers.iter().any(|g| g.geometry.taxis.n_t != n_t) {
        return Err(Error::Shape("gathers on a line must share their time axis".into()));
    }
    let stacks: Vec<Vec<f64>> = gathers
        .par_iter()
        .zip(curves.par_iter())
        .map(|(g, c)| nmo_correct(g, c).stack())
        .collect();
    let row_power = (0..n_t).map(|r| stacks.iter().map(|s| s[r] * s[r]).sum()).collect();
    let section = Grid2D::from_fn(n_t, stacks.len(), |r, c| stacks[c][r] as f32);
    Ok(QcReport {
        vmae: None,
        row_power,
        section,
    })
}

/// QC with the mean VMAE of the picks against manual curves.
pub fn qc_with_truth(
    gathers: &[&CmpGather],
    curves: &[VelocityCurve],
    manual: &[VelocityCurve],
    taxis: &TimeAxis,
) -> Result<QcReport> {
    if manual.len() != curves.len() {
        return Err(Error::Shape(format!("{} picked curves but {} manual", curves.len(), manual.len())));
    }
    let mut report = qc(gathers, curves)?;
    let total: f64 = curves.iter().zip(manual).map(|(a, m)| vmae(a, m, taxis)).sum();
    report.vmae = Some(total / curves.len() as f64);
    Ok(report)
}

/// Velocity field: one column per curve, one row per time sample.
pub fn velocity_field(curves: &[VelocityCurve], taxis: &TimeAxis) -> Result<Grid2D> {
    if curves.is_empty() {
        return Err(Error::Shape("velocity field of no curves".into()));
    }
    let times = taxis.times();
    Ok(Grid2D::from_fn(taxis.n_t, curves.len(), |r, c| curves[c].value_at(times[r]) as f32))
}
