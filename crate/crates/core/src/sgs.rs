//! Stacked gather slices over a CMP neighbourhood and velocity-curve masks.

use std::path::Path;

use log::warn;
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::grid::{Grid2D, TimeAxis, VelocityAxis, VelocityCurve};
use crate::io::{self, Array};
use crate::spectrum::{nmo_correct, CmpGather};

pub const DEFAULT_PERCENTAGES: [f64; 5] = [0.8, 0.9, 1.0, 1.1, 1.2];
pub const DEFAULT_K: usize = 5;

/// Curves scanned around a reference and their stacked slices, one `T x k`
/// slice per curve, jointly scaled to a peak magnitude of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SgsPack {
    pub reference: VelocityCurve,
    pub percentages: Vec<f64>,
    pub curves: Vec<VelocityCurve>,
    pub slices: Vec<Grid2D>,
    /// Gather time axis shared by every slice row.
    pub taxis: TimeAxis,
}

impl SgsPack {
    pub fn m(&self) -> usize {
        self.curves.len()
    }

    pub fn k(&self) -> usize {
        self.slices[0].cols()
    }

    pub fn t(&self) -> usize {
        self.slices[0].rows()
    }
}

/// Reference curve with every velocity multiplied by each percentage.
pub fn scan_curves(reference: &VelocityCurve, percentages: &[f64]) -> Result<Vec<VelocityCurve>> {
    if percentages.is_empty() {
        return domain("empty percentage list");
    }
    percentages
        .iter()
        .map(|&p| {
            if !(p > 0.0 && p.is_finite()) {
                return domain(format!("scan percentage must be positive, got {p}"));
            }
            reference.scaled(p)
        })
        .collect()
}

/// Indices of the `k` cdps centred on `centre` in a line of `n` cdps; the
/// window slides inwards at the line ends.
pub fn neighborhood(n: usize, centre: usize, k: usize) -> Result<std::ops::Range<usize>> {
    if k == 0 || k > n || centre >= n {
        return domain(format!("cannot take {k} neighbours around cdp {centre} of a {n}-cdp line"));
    }
    let start = centre.saturating_sub(k / 2).min(n - k);
    Ok(start..start + k)
}

/// NMO-corrects every neighbour with every curve and stacks over offsets.
pub fn build_sgs(neighbours: &[&CmpGather], reference: &VelocityCurve, percentages: &[f64]) -> Result<SgsPack> {
    let curves = scan_curves(reference, percentages)?;
    let first = neighbours
        .first()
        .ok_or_else(|| Error::Domain("empty neighbourhood".into()))?;
    for g in neighbours {
        if g.geometry != first.geometry {
            return domain("neighbouring gathers do not share one acquisition geometry");
        }
    }
    let taxis = first.geometry.taxis;
    let k = neighbours.len();
    let stacks: Vec<Vec<Vec<f64>>> = curves
        .par_iter()
        .map(|c| neighbours.iter().map(|g| nmo_correct(g, c).stack()).collect())
        .collect();
    let peak = stacks
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 1e-12 { 1.0 / peak } else { 0.0 };
    let slices = stacks
        .iter()
        .map(|cols| Grid2D::from_fn(taxis.n_t, k, |r, c| (cols[c][r] * scale) as f32))
        .collect();
    Ok(SgsPack {
        reference: reference.clone(),
        percentages: percentages.to_vec(),
        curves,
        slices,
        taxis,
    })
}

/// Default coarse mask height for a spectrum of `rows` time samples.
pub fn coarse_rows(rows: usize) -> usize {
    (rows / 2).max(2)
}

/// Velocity-curve mask on the spectrum grid: `h` points sampled evenly in
/// time each light one cell of an `h x n_v` grid, which is then bilinearly
/// resized to `n_t x n_v`.
pub fn rasterize_vc(curve: &VelocityCurve, taxis: &TimeAxis, vaxis: &VelocityAxis, h: usize) -> Result<Grid2D> {
    if h < 2 {
        return domain(format!("coarse mask needs at least 2 rows, got {h}"));
    }
    let w = vaxis.n_v;
    let step = taxis.span() / (h - 1) as f64;
    let mut coarse = Grid2D::zeros(h, w);
    let mut clamped = 0;
    for p in 0..h {
        let v = curve.value_at(taxis.t_start + p as f64 * step);
        let q = vaxis.position(v).round();
        if q < 0.0 || q > (w - 1) as f64 {
            clamped += 1;
        }
        coarse.set(p, q.clamp(0.0, (w - 1) as f64) as usize, 1.0);
    }
    if clamped > 0 {
        warn!("velocity curve leaves the velocity axis at {clamped} of {h} mask rows; clamped to the edge columns");
    }
    Ok(coarse.resized(taxis.n_t, w))
}

/// Pointwise average of curves, one knot per sample of `taxis`.
pub fn mean_curve(curves: &[VelocityCurve], taxis: &TimeAxis) -> Result<VelocityCurve> {
    if curves.is_empty() {
        return domain("mean of no curves");
    }
    let mut acc = vec![0.0; taxis.n_t];
    for c in curves {
        for (a, t) in acc.iter_mut().zip(taxis.times()) {
            *a += c.value_at(t);
        }
    }
    let n = curves.len() as f64;
    VelocityCurve::new(taxis.times().into_iter().zip(acc.into_iter().map(|a| a / n)).collect())
}

/// Reference curve by constant-velocity scanning: the time range is cut
/// into `windows` bands and each band takes the trial velocity whose NMO
/// stack carries the most power there.
pub fn constant_velocity_scan(gather: &CmpGather, vaxis: &VelocityAxis, windows: usize) -> Result<VelocityCurve> {
    if windows == 0 {
        return domain("constant-velocity scan needs at least one window");
    }
    let taxis = gather.geometry.taxis;
    let powers: Vec<Vec<f64>> = (0..vaxis.n_v)
        .into_par_iter()
        .map(|j| {
            let v = vaxis.velocity(j);
            let flat = nmo_correct(gather, &VelocityCurve::constant(taxis.t_start, taxis.t_end(), v).expect("valid constant curve"));
            flat.stack().into_iter().map(|s| s * s).collect()
        })
        .collect();
    let mut knots = Vec::with_capacity(windows);
    for b in 0..windows {
        let lo = b * taxis.n_t / windows;
        let hi = ((b + 1) * taxis.n_t / windows).max(lo + 1).min(taxis.n_t);
        let band: Vec<f64> = powers.iter().map(|p| p[lo..hi].iter().sum()).collect();
        let best = (0..band.len()).fold(0, |a, j| if band[j] > band[a] { j } else { a });
        let t = taxis.time(lo) + 0.5 * (hi - lo - 1) as f64 * taxis.dt;
        knots.push((t, vaxis.velocity(best)));
    }
    knots.dedup_by(|a, b| a.0 <= b.0);
    VelocityCurve::new(knots)
}

/// Records: slices `m x T x k`, reference knots `K x 2` (ms, m/s),
/// percentages times 100, gather time axis `[t_start_ms, dt_ms]`.
pub fn write_pack(path: impl AsRef<Path>, pack: &SgsPack) -> Result<()> {
    let (m, t, k) = (pack.m(), pack.t(), pack.k());
    let mut values = Vec::with_capacity(m * t * k);
    for s in &pack.slices {
        values.extend_from_slice(s.values());
    }
    let knots: Vec<f32> = pack
        .reference
        .points()
        .iter()
        .flat_map(|&(t, v)| [(t * 1000.0) as f32, v as f32])
        .collect();
    io::write_vpk(
        path,
        &[
            Array::new(vec![m, t, k], values)?,
            Array::new(vec![pack.reference.len(), 2], knots)?,
            Array::vector(pack.percentages.iter().map(|p| (p * 100.0) as f32).collect()),
            io::time_record(&pack.taxis),
        ],
    )
}

pub fn read_pack(path: impl AsRef<Path>) -> Result<SgsPack> {
    let arrays = io::read_vpk(&path)?;
    io::expect_records(&arrays, 4, "SGS pack")?;
    let (m, t, k) = match arrays[0].dims[..] {
        [m, t, k] if m > 0 => (m, t, k),
        _ => return Err(Error::Format(format!("SGS slices must be m x T x k, got {:?}", arrays[0].dims))),
    };
    if arrays[1].dims.len() != 2 || arrays[1].dims[1] != 2 || arrays[2].values.len() != m {
        return Err(Error::Format("SGS pack curve records do not match the slices".into()));
    }
    let reference = VelocityCurve::new(
        arrays[1]
            .values
            .chunks_exact(2)
            .map(|p| (io::decimal(p[0]) / 1000.0, io::decimal(p[1])))
            .collect(),
    )?;
    let percentages: Vec<f64> = arrays[2].values.iter().map(|p| io::decimal(*p) / 100.0).collect();
    let taxis = io::parse_time(&arrays[3], t)?;
    let slices = arrays[0]
        .values
        .chunks_exact(t * k)
        .map(|c| Grid2D::new(t, k, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SgsPack {
        curves: scan_curves(&reference, &percentages)?,
        reference,
        percentages,
        slices,
        taxis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use crate::spectrum::AcquisitionGeometry;
    use crate::synth::{make_line, LayerModel, LineParams, Noise};

    fn line(n: usize) -> Vec<(CmpGather, VelocityCurve)> {
        let model = LayerModel::from_layers(&[(0.4, 1900.0), (0.8, 2400.0), (1.2, 2900.0)]).unwrap();
        let g = AcquisitionGeometry::regular(16, 100.0, 2000.0, 0.004, 350).unwrap();
        make_line(&model, &g, &LineParams { n_cdp: n, drift: 0.002, min_cdp: 1 }, Noise::None, SeedTree::new(5)).unwrap()
    }

    #[test]
    fn scan_examples() {
        let r = VelocityCurve::new(vec![(0.5, 2000.0), (1.0, 2500.0)]).unwrap();
        assert_eq!(scan_curves(&r, &[1.0]).unwrap(), vec![r.clone()]);
        let cs = scan_curves(&r, &DEFAULT_PERCENTAGES).unwrap();
        assert_eq!(cs.len(), 5);
        for c in &cs {
            let times: Vec<f64> = c.points().iter().map(|p| p.0).collect();
            assert_eq!(times, vec![0.5, 1.0]);
        }
        assert!(scan_curves(&r, &[0.0]).is_err());
        assert!(scan_curves(&r, &[]).is_err());
    }

    #[test]
    fn neighbourhood_slides_at_ends() {
        assert_eq!(neighborhood(21, 10, 5).unwrap(), 8..13);
        assert_eq!(neighborhood(21, 0, 5).unwrap(), 0..5);
        assert_eq!(neighborhood(21, 20, 5).unwrap(), 16..21);
        assert_eq!(neighborhood(21, 3, 1).unwrap(), 3..4);
        assert!(neighborhood(3, 1, 5).is_err());
    }

    #[test]
    fn zero_gathers_give_zero_slices() {
        let g = AcquisitionGeometry::regular(4, 0.0, 300.0, 0.004, 50).unwrap();
        let zero = CmpGather::zeros(g);
        let r = VelocityCurve::constant(0.0, 0.2, 2000.0).unwrap();
        let pack = build_sgs(&[&zero, &zero], &r, &DEFAULT_PERCENTAGES).unwrap();
        assert!(pack.slices.iter().all(|s| s.values().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn truth_curve_stacks_most_energy() {
        let data = line(5);
        let refs: Vec<&CmpGather> = data.iter().map(|d| &d.0).collect();
        let truth = &data[2].1;
        let pack = build_sgs(&refs, truth, &DEFAULT_PERCENTAGES).unwrap();
        assert_eq!((pack.m(), pack.t(), pack.k()), (5, 350, 5));
        let peak = pack.slices.iter().flat_map(|s| s.values()).fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 1e-6);
        for c in 0..5 {
            let energy: Vec<f64> = pack.slices.iter().map(|s| s.column(c).iter().map(|v| (*v as f64).powi(2)).sum()).collect();
            let best = (0..5).fold(0, |a, j| if energy[j] > energy[a] { j } else { a });
            assert_eq!(best, 2, "column {c}: {energy:?}");
        }
    }

    #[test]
    fn single_neighbour_is_an_nmo_stack() {
        let data = line(1);
        let pack = build_sgs(&[&data[0].0], &data[0].1, &[1.0]).unwrap();
        let stack = nmo_correct(&data[0].0, &data[0].1).stack();
        let peak = stack.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in pack.slices[0].column(0).iter().zip(&stack) {
            assert!((*a as f64 - b / peak).abs() < 1e-6);
        }
    }

    #[test]
    fn scaling_the_gathers_leaves_the_pack_unchanged() {
        let data = line(3);
        let refs: Vec<&CmpGather> = data.iter().map(|d| &d.0).collect();
        let scaled: Vec<CmpGather> = data.iter().map(|d| d.0.scaled(-7.5)).collect();
        let srefs: Vec<&CmpGather> = scaled.iter().collect();
        let a = build_sgs(&refs, &data[1].1, &DEFAULT_PERCENTAGES).unwrap();
        let b = build_sgs(&srefs, &data[1].1, &DEFAULT_PERCENTAGES).unwrap();
        for (x, y) in a.slices.iter().zip(&b.slices) {
            for (p, q) in x.values().iter().zip(y.values()) {
                assert!((p + q).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn constant_curve_mask() {
        let taxis = TimeAxis::new(0.0, 0.02, 40).unwrap();
        let vaxis = VelocityAxis::new(1500.0, 50.0, 30).unwrap();
        let c = VelocityCurve::constant(0.0, 1.0, 2000.0).unwrap();
        let mask = rasterize_vc(&c, &taxis, &vaxis, 20).unwrap();
        assert_eq!(mask.dims(), (40, 30));
        for r in 0..40 {
            let row = mask.row(r);
            let arg = (0..30).fold(0, |a, j| if row[j] > row[a] { j } else { a });
            assert_eq!(arg, 10);
        }
        assert!(mask.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn full_resolution_mask_needs_no_interpolation() {
        let taxis = TimeAxis::new(0.0, 0.02, 25).unwrap();
        let vaxis = VelocityAxis::new(1500.0, 50.0, 40).unwrap();
        let c = VelocityCurve::new(vec![(0.0, 1600.0), (0.48, 3300.0)]).unwrap();
        let mask = rasterize_vc(&c, &taxis, &vaxis, 25).unwrap();
        for r in 0..25 {
            let q = vaxis.nearest(c.value_at(taxis.time(r)));
            let row = mask.row(r);
            assert_eq!(row[q], 1.0);
            assert_eq!(row.iter().sum::<f32>(), 1.0);
        }
    }

    #[test]
    fn every_mask_row_is_lit() {
        let taxis = TimeAxis::new(0.0, 0.016, 64).unwrap();
        let vaxis = VelocityAxis::new(1500.0, 50.0, 32).unwrap();
        let c = VelocityCurve::new(vec![(0.1, 1600.0), (0.6, 2300.0), (1.0, 2600.0)]).unwrap();
        let mask = rasterize_vc(&c, &taxis, &vaxis, coarse_rows(64)).unwrap();
        for r in 0..64 {
            assert!(mask.row(r).iter().any(|v| *v > 0.0), "row {r}");
        }
        // out-of-range curves clamp to the edge
        let fast = VelocityCurve::constant(0.0, 1.0, 9000.0).unwrap();
        let mask = rasterize_vc(&fast, &taxis, &vaxis, 8).unwrap();
        assert!((0..64).all(|r| mask.get(r, 31) == 1.0));
        assert!(rasterize_vc(&c, &taxis, &vaxis, 1).is_err());
    }

    #[test]
    fn mean_and_scan_references() {
        let taxis = TimeAxis::new(0.0, 0.1, 11).unwrap();
        let a = VelocityCurve::constant(0.0, 1.0, 2000.0).unwrap();
        let b = VelocityCurve::new(vec![(0.0, 2000.0), (1.0, 3000.0)]).unwrap();
        let m = mean_curve(&[a, b], &taxis).unwrap();
        assert!((m.value_at(1.0) - 2500.0).abs() < 1e-9);
        assert!((m.value_at(0.5) - 2250.0).abs() < 1e-9);

        let data = line(1);
        let vaxis = VelocityAxis::new(1500.0, 50.0, 40).unwrap();
        let cvs = constant_velocity_scan(&data[0].0, &vaxis, 6).unwrap();
        let truth = &data[0].1;
        // windows holding a reflector pick a velocity near the truth
        let v = cvs.value_at(0.8);
        assert!((v - truth.value_at(0.8)).abs() < 250.0, "scan {v}, truth {}", truth.value_at(0.8));
    }

    #[test]
    fn pack_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = line(3);
        let refs: Vec<&CmpGather> = data.iter().map(|d| &d.0).collect();
        let pack = build_sgs(&refs, &data[1].1, &DEFAULT_PERCENTAGES).unwrap();
        write_pack(dir.path().join("p.vpk"), &pack).unwrap();
        let back = read_pack(dir.path().join("p.vpk")).unwrap();
        assert_eq!(back.slices, pack.slices);
        assert_eq!(back.percentages, pack.percentages);
        assert_eq!(back.taxis, pack.taxis);
        // knots are stored in f32
        for (a, b) in back.reference.points().iter().zip(pack.reference.points()) {
            assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-3);
        }
    }
}
