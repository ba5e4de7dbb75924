//! CMP gathers, moveout, NMO correction and semblance spectra.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::{Grid2D, TimeAxis, VelocityAxis, VelocityCurve};

/// Denominators below this give zero semblance.
pub const SEMBLANCE_EPS: f64 = 1e-12;

pub const DEFAULT_WINDOW_HALF: usize = 5;

/// Source-receiver offsets and recording time sampling of a CMP gather.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionGeometry {
    pub offsets: Vec<f64>,
    pub taxis: TimeAxis,
}

impl AcquisitionGeometry {
    pub fn new(offsets: Vec<f64>, taxis: TimeAxis) -> Result<Self> {
        let g = Self { offsets, taxis };
        g.validate()?;
        Ok(g)
    }

    /// `m` offsets evenly spaced from `near` to `far`, recorded from t = 0.
    pub fn regular(m: usize, near: f64, far: f64, dt: f64, n_t: usize) -> Result<Self> {
        if m < 2 {
            return domain(format!("a gather needs at least 2 traces, got {m}"));
        }
        let step = (far - near) / (m - 1) as f64;
        Self::new(
            (0..m).map(|i| near + i as f64 * step).collect(),
            TimeAxis::new(0.0, dt, n_t)?,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.taxis.validate()?;
        if self.offsets.len() < 2 {
            return domain(format!("a gather needs at least 2 traces, got {}", self.offsets.len()));
        }
        for (i, &x) in self.offsets.iter().enumerate() {
            if !(x >= 0.0 && x.is_finite()) {
                return domain(format!("offset {i} = {x} is not a finite non-negative distance"));
            }
            if i > 0 && x <= self.offsets[i - 1] {
                return domain(format!("offsets not strictly increasing at index {i}"));
            }
        }
        Ok(())
    }

    pub fn traces(&self) -> usize {
        self.offsets.len()
    }
}

/// Amplitudes `f[t][i]`: one row per time sample, one column per offset.
#[derive(Debug, Clone, PartialEq)]
pub struct CmpGather {
    pub geometry: AcquisitionGeometry,
    pub traces: Grid2D,
}

impl CmpGather {
    pub fn new(geometry: AcquisitionGeometry, traces: Grid2D) -> Result<Self> {
        geometry.validate()?;
        if traces.dims() != (geometry.taxis.n_t, geometry.traces()) {
            return Err(Error::Shape(format!(
                "gather traces are {}x{}, geometry expects {}x{}",
                traces.rows(),
                traces.cols(),
                geometry.taxis.n_t,
                geometry.traces()
            )));
        }
        Ok(Self { geometry, traces })
    }

    pub fn zeros(geometry: AcquisitionGeometry) -> Self {
        let traces = Grid2D::zeros(geometry.taxis.n_t, geometry.traces());
        Self { geometry, traces }
    }

    /// Amplitude of trace `i` at time `t`, linearly interpolated; zero
    /// outside the record.
    pub fn sample(&self, i: usize, t: f64) -> f64 {
        let pos = self.geometry.taxis.position(t);
        let n = self.geometry.taxis.n_t;
        let last = (n - 1) as f64;
        if !(pos >= -1e-9) || pos > last + 1e-9 {
            return 0.0;
        }
        let pos = pos.clamp(0.0, last);
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        let a = self.traces.get(lo, i) as f64;
        if frac == 0.0 || lo + 1 >= n {
            return a;
        }
        a + (self.traces.get(lo + 1, i) as f64 - a) * frac
    }

    /// Sum over offsets of every time row.
    pub fn stack(&self) -> Vec<f64> {
        (0..self.traces.rows())
            .map(|r| self.traces.row(r).iter().map(|v| *v as f64).sum())
            .collect()
    }

    pub fn scaled(&self, a: f32) -> Self {
        Self {
            geometry: self.geometry.clone(),
            traces: self.traces.map(|v| v * a),
        }
    }
}

/// Semblance image `NE(t0, v)` with its axes.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySpectrum {
    pub taxis: TimeAxis,
    pub vaxis: VelocityAxis,
    pub values: Grid2D,
}

impl VelocitySpectrum {
    pub fn new(taxis: TimeAxis, vaxis: VelocityAxis, values: Grid2D) -> Result<Self> {
        taxis.validate()?;
        vaxis.validate()?;
        if values.dims() != (taxis.n_t, vaxis.n_v) {
            return Err(Error::Shape(format!(
                "spectrum values are {}x{}, axes expect {}x{}",
                values.rows(),
                values.cols(),
                taxis.n_t,
                vaxis.n_v
            )));
        }
        if let Some(v) = values.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return domain(format!("semblance value {v} outside [0, 1]"));
        }
        Ok(Self { taxis, vaxis, values })
    }

    /// Grid cell `(row, col)` of the largest value; first wins on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let vals = self.values.values();
        let mut best = 0;
        for (k, v) in vals.iter().enumerate() {
            if *v > vals[best] {
                best = k;
            }
        }
        (best / self.values.cols(), best % self.values.cols())
    }
}

/// Two-way traveltime of the hyperbola with zero-offset time `t0`.
pub fn nmo_time(t0: f64, x: f64, v: f64) -> Result<f64> {
    if !(v > 0.0) {
        return domain(format!("moveout velocity must be positive, got {v}"));
    }
    if !(t0 >= 0.0) {
        return domain(format!("zero-offset time must be non-negative, got {t0}"));
    }
    Ok((t0 * t0 + (x * x) / (v * v)).sqrt())
}

fn hyperbola(t0: f64, x: f64, v: f64) -> f64 {
    (t0 * t0 + (x * x) / (v * v)).sqrt()
}

/// Flattens moveout with the velocity `curve(t0)`.
pub fn nmo_correct(gather: &CmpGather, curve: &VelocityCurve) -> CmpGather {
    let taxis = gather.geometry.taxis;
    let m = gather.geometry.traces();
    let mut out = Grid2D::zeros(taxis.n_t, m);
    for r in 0..taxis.n_t {
        let t0 = taxis.time(r);
        if t0 < 0.0 {
            continue;
        }
        let v = curve.value_at(t0);
        for (i, &x) in gather.geometry.offsets.iter().enumerate() {
            out.set(r, i, gather.sample(i, hyperbola(t0, x, v)) as f32);
        }
    }
    CmpGather {
        geometry: gather.geometry.clone(),
        traces: out,
    }
}

/// Semblance spectrum of `gather` over the given axes. The coherence sums
/// run over `2 * window_half + 1` samples of the gather's own sampling,
/// shifted along every trace around its moveout time for `t0`.
pub fn semblance(
    gather: &CmpGather,
    taxis: &TimeAxis,
    vaxis: &VelocityAxis,
    window_half: usize,
) -> Result<VelocitySpectrum> {
    taxis.validate()?;
    if vaxis.n_v == 0 {
        return domain("empty velocity axis");
    }
    vaxis.validate()?;
    let m = gather.geometry.traces();
    let dt = gather.geometry.taxis.dt;
    let wh = window_half as i64;
    let columns: Vec<Vec<f32>> = (0..vaxis.n_v)
        .into_par_iter()
        .map(|j| {
            let v = vaxis.velocity(j);
            let mut col = Vec::with_capacity(taxis.n_t);
            let mut arrivals = vec![0.0; m];
            for r in 0..taxis.n_t {
                let t0 = taxis.time(r);
                for (a, &x) in arrivals.iter_mut().zip(&gather.geometry.offsets) {
                    *a = hyperbola(t0, x, v);
                }
                let (mut num, mut den) = (0.0f64, 0.0f64);
                for w in -wh..=wh {
                    let shift = w as f64 * dt;
                    let mut s = 0.0;
                    for (i, a) in arrivals.iter().enumerate() {
                        let f = gather.sample(i, a + shift);
                        s += f;
                        den += f * f;
                    }
                    num += s * s;
                }
                let den = m as f64 * den;
                col.push(if den < SEMBLANCE_EPS { 0.0 } else { (num / den).min(1.0) as f32 });
            }
            col
        })
        .collect();
    let values = Grid2D::from_fn(taxis.n_t, vaxis.n_v, |r, j| columns[j][r]);
    VelocitySpectrum::new(*taxis, *vaxis, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geometry(m: usize, n_t: usize) -> AcquisitionGeometry {
        AcquisitionGeometry::regular(m, 0.0, 2900.0, 0.004, n_t).unwrap()
    }

    #[test]
    fn moveout_examples() {
        assert_eq!(nmo_time(1.0, 0.0, 1234.0).unwrap(), 1.0);
        assert!((nmo_time(1.0, 2000.0, 2000.0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((nmo_time(0.0, 1500.0, 3000.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(nmo_time(1.0, 10.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(nmo_time(1.0, 10.0, -5.0), Err(Error::Domain(_))));
    }

    #[test]
    fn geometry_validation() {
        let axis = TimeAxis::new(0.0, 0.004, 10).unwrap();
        assert!(AcquisitionGeometry::new(vec![0.0], axis).is_err());
        assert!(AcquisitionGeometry::new(vec![0.0, 0.0], axis).is_err());
        assert!(AcquisitionGeometry::new(vec![-1.0, 10.0], axis).is_err());
        assert!(AcquisitionGeometry::new(vec![0.0, 10.0], axis).is_ok());
    }

    #[test]
    fn zero_offset_trace_unchanged_by_nmo() {
        let g = geometry(4, 50);
        let traces = Grid2D::from_fn(50, 4, |r, c| ((r * 7 + c * 3) % 11) as f32 - 5.0);
        let gather = CmpGather::new(g, traces).unwrap();
        let out = nmo_correct(&gather, &VelocityCurve::constant(0.0, 1.0, 2000.0).unwrap());
        assert_eq!(out.traces.column(0), gather.traces.column(0));
    }

    #[test]
    fn infinite_velocity_is_identity() {
        let g = geometry(5, 40);
        let traces = Grid2D::from_fn(40, 5, |r, c| (r as f32 * 0.3 + c as f32).sin());
        let gather = CmpGather::new(g, traces).unwrap();
        let out = nmo_correct(&gather, &VelocityCurve::constant(0.0, 1.0, 1e12).unwrap());
        for (a, b) in out.traces.values().iter().zip(gather.traces.values()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_gather_is_perfectly_coherent() {
        // short offsets keep every trajectory inside the record
        let g = AcquisitionGeometry::regular(6, 0.0, 100.0, 0.004, 60).unwrap();
        let gather = CmpGather::new(g, Grid2D::from_fn(60, 6, |_, _| 0.7)).unwrap();
        let taxis = TimeAxis::new(0.008, 0.004, 20).unwrap();
        let vaxis = VelocityAxis::new(1500.0, 250.0, 8).unwrap();
        let s = semblance(&gather, &taxis, &vaxis, 2).unwrap();
        assert!(s.values.values().iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn on_grid_reflector_peaks_at_its_node() {
        let model = crate::synth::LayerModel::from_layers(&[(0.5, 2100.0)]).unwrap();
        let g = AcquisitionGeometry::regular(24, 100.0, 2400.0, 0.004, 500).unwrap();
        let gather = crate::synth::clean_gather(&model, &g).unwrap();
        let taxis = TimeAxis::new(0.0, 0.004, 250).unwrap();
        let vaxis = VelocityAxis::new(1900.0, 100.0, 5).unwrap();
        let s = semblance(&gather, &taxis, &vaxis, 5).unwrap();
        assert_eq!(s.argmax(), (125, 2));
        assert!(s.values.get(125, 2) > 0.99);
    }

    #[test]
    fn zero_gather_gives_zero_spectrum() {
        let gather = CmpGather::zeros(geometry(3, 20));
        let taxis = TimeAxis::new(0.0, 0.004, 20).unwrap();
        let vaxis = VelocityAxis::new(1500.0, 100.0, 4).unwrap();
        let s = semblance(&gather, &taxis, &vaxis, 5).unwrap();
        assert!(s.values.values().iter().all(|v| *v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn semblance_bounded_and_scale_invariant(
            vals in proptest::collection::vec(-1.0f32..1.0, 30 * 4),
            a in prop_oneof![Just(0.1f32), Just(10.0f32), Just(-3.0f32)],
        ) {
            let gather = CmpGather::new(geometry(4, 30), Grid2D::new(30, 4, vals).unwrap()).unwrap();
            let taxis = TimeAxis::new(0.0, 0.008, 15).unwrap();
            let vaxis = VelocityAxis::new(1500.0, 500.0, 5).unwrap();
            let s = semblance(&gather, &taxis, &vaxis, 2).unwrap();
            let t = semblance(&gather.scaled(a), &taxis, &vaxis, 2).unwrap();
            for (x, y) in s.values.values().iter().zip(t.values.values()) {
                prop_assert!((0.0..=1.0).contains(x));
                prop_assert!((x - y).abs() < 1e-5);
            }
        }

        #[test]
        fn moveout_monotone(t0 in 0.01f64..4.0, x in 0.0f64..5000.0, dx in 1.0f64..500.0, v in 1000.0f64..6000.0, dv in 1.0f64..500.0) {
            prop_assert!(nmo_time(t0, x + dx, v).unwrap() > nmo_time(t0, x, v).unwrap());
            prop_assert!(nmo_time(t0, x + 1.0, v + dv).unwrap() < nmo_time(t0, x + 1.0, v).unwrap());
        }
    }
}
