//! Axes, velocity curves and the time-major 2-D grid shared by every stage.

use serde::{Deserialize, Serialize};
use velopick_autograd::ops::resize_plane;

use crate::error::{domain, Error, Result};

/// Uniform time sampling: `t_i = t_start + i * dt` for `i < n_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAxis {
    pub t_start: f64,
    pub dt: f64,
    pub n_t: usize,
}

impl TimeAxis {
    pub fn new(t_start: f64, dt: f64, n_t: usize) -> Result<Self> {
        let axis = Self { t_start, dt, n_t };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite() && self.t_start.is_finite()) {
            return domain(format!("time axis needs finite dt > 0, got dt={}", self.dt));
        }
        if self.n_t < 2 {
            return domain(format!("time axis needs at least 2 samples, got {}", self.n_t));
        }
        Ok(())
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t_start + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n_t - 1)
    }

    pub fn span(&self) -> f64 {
        self.t_end() - self.t_start
    }

    /// Fractional sample index of `t`.
    pub fn position(&self, t: f64) -> f64 {
        (t - self.t_start) / self.dt
    }

    /// Nearest sample index, clamped into the axis.
    pub fn nearest(&self, t: f64) -> usize {
        self.position(t).round().clamp(0.0, (self.n_t - 1) as f64) as usize
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_t).map(|i| self.time(i)).collect()
    }
}

/// Uniform trial-velocity sampling: `v_j = v_min + j * dv` for `j < n_v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityAxis {
    pub v_min: f64,
    pub dv: f64,
    pub n_v: usize,
}

impl VelocityAxis {
    pub fn new(v_min: f64, dv: f64, n_v: usize) -> Result<Self> {
        let axis = Self { v_min, dv, n_v };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_min > 0.0 && self.dv > 0.0 && self.v_min.is_finite() && self.dv.is_finite()) {
            return domain(format!(
                "velocity axis needs v_min > 0 and dv > 0, got v_min={} dv={}",
                self.v_min, self.dv
            ));
        }
        if self.n_v < 2 {
            return domain(format!("velocity axis needs at least 2 samples, got {}", self.n_v));
        }
        Ok(())
    }

    pub fn velocity(&self, j: usize) -> f64 {
        self.v_min + j as f64 * self.dv
    }

    pub fn v_max(&self) -> f64 {
        self.velocity(self.n_v - 1)
    }

    pub fn position(&self, v: f64) -> f64 {
        (v - self.v_min) / self.dv
    }

    pub fn nearest(&self, v: f64) -> usize {
        self.position(v).round().clamp(0.0, (self.n_v - 1) as f64) as usize
    }

    pub fn contains(&self, v: f64) -> bool {
        let p = self.position(v);
        p >= -0.5 && p <= self.n_v as f64 - 0.5
    }

    pub fn velocities(&self) -> Vec<f64> {
        (0..self.n_v).map(|j| self.velocity(j)).collect()
    }
}

/// Piecewise-linear stacking-velocity function of two-way time.
///
/// Knot times are strictly increasing and velocities positive. Evaluation
/// holds the end values constant outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityCurve {
    points: Vec<(f64, f64)>,
}

impl VelocityCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidCurve("no knots".into()));
        }
        for (i, &(t, v)) in points.iter().enumerate() {
            if !t.is_finite() || !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidCurve(format!("knot {i} = ({t}, {v}) is not a valid (t, v > 0)")));
            }
            if i > 0 && t <= points[i - 1].0 {
                return Err(Error::InvalidCurve(format!("knot times not strictly increasing at index {i}")));
            }
        }
        Ok(Self { points })
    }

    /// Constant velocity on `[t0, t1]`.
    pub fn constant(t0: f64, t1: f64, v: f64) -> Result<Self> {
        Self::new(vec![(t0, v), (t1, v)])
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn t_first(&self) -> f64 {
        self.points[0].0
    }

    pub fn t_last(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    /// Linear interpolation with constant extension beyond the end knots.
    pub fn value_at(&self, t: f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let hi = pts.partition_point(|p| p.0 <= t);
        let (t0, v0) = pts[hi - 1];
        let (t1, v1) = pts[hi];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Dense velocity series on `axis`.
    pub fn sample(&self, axis: &TimeAxis) -> Result<Vec<f64>> {
        interp_curve(self, axis)
    }

    /// Same knot times, every velocity multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.points.iter().map(|&(t, v)| (t, v * factor)).collect())
    }

    /// Curve with one knot per axis sample.
    pub fn resampled(&self, axis: &TimeAxis) -> Result<Self> {
        let values = self.sample(axis)?;
        Self::new(axis.times().into_iter().zip(values).collect())
    }
}

/// Dense velocity series of `curve` at every sample of `axis`: exact at
/// knots, linear between them, constant beyond the outermost knots.
pub fn interp_curve(curve: &VelocityCurve, axis: &TimeAxis) -> Result<Vec<f64>> {
    if curve.len() < 2 {
        return Err(Error::InvalidCurve(format!(
            "interpolation needs at least 2 knots, got {}",
            curve.len()
        )));
    }
    Ok(axis.times().into_iter().map(|t| curve.value_at(t)).collect())
}

/// Dense row-major (time-major) matrix of `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl Grid2D {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} grid given {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite grid value at flat index {i}")));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
    }

    /// Converts `f64` values, rejecting non-finite entries.
    pub fn from_f64(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::new(rows, cols, values.iter().map(|v| *v as f32).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f32> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Bilinear resize (align-corners = false).
    pub fn resized(&self, rows: usize, cols: usize) -> Self {
        let out = resize_plane(&self.values, self.rows, self.cols, rows, cols);
        Self {
            rows,
            cols,
            values: out.into_iter().map(|v| v as f32).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(points: &[(f64, f64)]) -> VelocityCurve {
        VelocityCurve::new(points.to_vec()).unwrap()
    }

    #[test]
    fn interpolation_examples() {
        let c = curve(&[(1.0, 2000.0), (2.0, 3000.0)]);
        assert_eq!(c.value_at(1.5), 2500.0);
        assert_eq!(c.value_at(1.0), 2000.0);
        assert_eq!(c.value_at(0.2), 2000.0);
        assert_eq!(c.value_at(9.0), 3000.0);
        // hand oracle: 2200 + (1.25 - 1.0) / (2.0 - 1.0) * (2600 - 2200)
        let c = curve(&[(0.5, 1800.0), (1.0, 2200.0), (2.0, 2600.0)]);
        assert_eq!(c.value_at(1.25), 2300.0);
    }

    #[test]
    fn dense_series_covers_axis() {
        let c = curve(&[(1.0, 2000.0), (2.0, 3000.0)]);
        let axis = TimeAxis::new(0.5, 0.5, 5).unwrap();
        assert_eq!(interp_curve(&c, &axis).unwrap(), vec![2000.0, 2000.0, 2500.0, 3000.0, 3000.0]);
    }

    #[test]
    fn single_knot_cannot_be_interpolated() {
        let c = curve(&[(1.0, 2000.0)]);
        let axis = TimeAxis::new(0.0, 0.1, 10).unwrap();
        assert!(matches!(interp_curve(&c, &axis), Err(Error::InvalidCurve(_))));
    }

    #[test]
    fn curve_validation() {
        assert!(VelocityCurve::new(vec![]).is_err());
        assert!(VelocityCurve::new(vec![(1.0, 2000.0), (1.0, 2100.0)]).is_err());
        assert!(VelocityCurve::new(vec![(1.0, 2000.0), (0.5, 2100.0)]).is_err());
        assert!(VelocityCurve::new(vec![(1.0, -5.0), (2.0, 2100.0)]).is_err());
    }

    #[test]
    fn axis_validation() {
        assert!(TimeAxis::new(0.0, 0.0, 10).is_err());
        assert!(TimeAxis::new(0.0, 0.004, 1).is_err());
        assert!(VelocityAxis::new(0.0, 50.0, 10).is_err());
        assert!(VelocityAxis::new(1500.0, -1.0, 10).is_err());
        assert!(VelocityAxis::new(1500.0, 50.0, 2).is_ok());
    }

    #[test]
    fn grid_checks_dims_and_finiteness() {
        assert!(Grid2D::new(3, 4, vec![0.0; 11]).is_err());
        assert!(Grid2D::new(1, 2, vec![0.0, f32::NAN]).is_err());
        let g = Grid2D::from_fn(3, 4, |r, c| (r * 10 + c) as f32);
        assert_eq!(g.row(1), &[10.0, 11.0, 12.0, 13.0]);
        assert_eq!(g.column(2), vec![2.0, 12.0, 22.0]);
        assert_eq!(g.resized(3, 4), g);
    }

    proptest! {
        #[test]
        fn interpolation_idempotent_on_own_knots(
            start in 0.0f64..1.0,
            steps in proptest::collection::vec((0.01f64..0.5, 1000.0f64..5000.0), 2..12),
        ) {
            let mut t = start;
            let pts: Vec<(f64, f64)> = steps.iter().map(|&(dt, v)| { t += dt; (t, v) }).collect();
            let c = VelocityCurve::new(pts.clone()).unwrap();
            for &(t, v) in &pts {
                prop_assert!((c.value_at(t) - v).abs() <= 1e-9 * v);
            }
            // a curve rebuilt from its own samples at the knots evaluates identically
            let again = VelocityCurve::new(pts.iter().map(|&(t, _)| (t, c.value_at(t))).collect()).unwrap();
            for &(t, _) in &pts {
                prop_assert_eq!(again.value_at(t), c.value_at(t));
            }
        }

        #[test]
        fn axis_conversions_invert_within_a_cell(
            t_start in -1.0f64..1.0, dt in 0.001f64..0.1, n in 2usize..500, frac in 0.0f64..1.0,
        ) {
            let axis = TimeAxis::new(t_start, dt, n).unwrap();
            let i = ((n - 1) as f64 * frac) as usize;
            prop_assert_eq!(axis.nearest(axis.time(i)), i);
            let t = t_start + frac * axis.span();
            prop_assert!((axis.time(axis.nearest(t)) - t).abs() <= dt * 0.5 + 1e-12);

            let vaxis = VelocityAxis::new(1000.0 + t_start.abs() * 100.0, dt * 1000.0, n).unwrap();
            prop_assert_eq!(vaxis.nearest(vaxis.velocity(i)), i);
            let v = vaxis.v_min + frac * (vaxis.v_max() - vaxis.v_min);
            prop_assert!((vaxis.velocity(vaxis.nearest(v)) - v).abs() <= vaxis.dv * 0.5 + 1e-9);
        }
    }
}
