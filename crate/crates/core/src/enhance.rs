//! Spectrum feature extraction: column smoothing, power inflation,
//! layer-wise normalization and amplitude limiting, and the stack of nine
//! enhanced observations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::grid::Grid2D;
use crate::spectrum::VelocitySpectrum;

/// Layer maxima at or below this are left unnormalized.
pub const LAYER_EPS: f64 = 1e-12;

pub const LOWER_BOUND: f64 = 0.2;
pub const UPPER_BOUND: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhanceParams {
    /// Moving-average window length in samples.
    pub ws: usize,
    /// Number of smoothing passes.
    pub st: usize,
    /// Power exponent.
    pub eec: f64,
    /// Number of normalization layers.
    pub ln: usize,
    pub lb: f64,
    pub ub: f64,
}

impl EnhanceParams {
    pub const IDENTITY: EnhanceParams = EnhanceParams {
        ws: 1,
        st: 1,
        eec: 1.0,
        ln: 1,
        lb: 0.0,
        ub: 1.0,
    };

    pub const fn row(ws: usize, st: usize, eec: f64, ln: usize) -> Self {
        Self {
            ws,
            st,
            eec,
            ln,
            lb: LOWER_BOUND,
            ub: UPPER_BOUND,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ws < 1 || self.st < 1 || self.ln < 1 {
            return domain(format!("ws, st and ln must be >= 1, got {self:?}"));
        }
        if !(self.eec >= 1.0 && self.eec.is_finite()) {
            return domain(format!("eec must be >= 1, got {}", self.eec));
        }
        if !(0.0 <= self.lb && self.lb < self.ub && self.ub <= 1.0) {
            return domain(format!("bounds need 0 <= lb < ub <= 1, got lb={} ub={}", self.lb, self.ub));
        }
        Ok(())
    }
}

/// The nine multi-scale observation settings, rows 0 to 8.
pub const PARAMETER_GRID: [EnhanceParams; 9] = [
    EnhanceParams::row(5, 1, 1.0, 5),
    EnhanceParams::row(5, 2, 1.5, 8),
    EnhanceParams::row(5, 3, 2.0, 12),
    EnhanceParams::row(10, 1, 1.0, 5),
    EnhanceParams::row(10, 2, 1.5, 8),
    EnhanceParams::row(10, 3, 2.0, 12),
    EnhanceParams::row(15, 1, 1.0, 5),
    EnhanceParams::row(15, 2, 1.5, 8),
    EnhanceParams::row(15, 3, 2.0, 12),
];

pub const STACK_CHANNELS: usize = 1 + PARAMETER_GRID.len();

/// Working copy in f64, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Plane {
    pub fn from_grid(g: &Grid2D) -> Self {
        Self {
            rows: g.rows(),
            cols: g.cols(),
            values: g.values().iter().map(|v| *v as f64).collect(),
        }
    }

    pub fn to_grid(&self) -> Grid2D {
        Grid2D::from_fn(self.rows, self.cols, |r, c| self.values[r * self.cols + c] as f32)
    }
}

/// `st` passes of a length-`ws` moving average down every column. The
/// window of row `r` spans `r - ws/2 ..= r + (ws-1)/2`, truncated at the
/// edges and averaged over the samples it actually covers.
pub fn smooth_columns(p: &mut Plane, ws: usize, st: usize) {
    if ws <= 1 {
        return;
    }
    let (rows, cols) = (p.rows, p.cols);
    let before = ws / 2;
    let after = (ws - 1) / 2;
    let mut col = vec![0.0; rows];
    let mut prefix = vec![0.0; rows + 1];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = p.values[r * cols + c];
        }
        for _ in 0..st {
            for r in 0..rows {
                prefix[r + 1] = prefix[r] + col[r];
            }
            for r in 0..rows {
                let lo = r.saturating_sub(before);
                let hi = (r + after).min(rows - 1);
                col[r] = (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64;
            }
        }
        for r in 0..rows {
            p.values[r * cols + c] = col[r];
        }
    }
}

/// Element-wise `x^eec`.
pub fn inflate(p: &mut Plane, eec: f64) {
    if eec == 1.0 {
        return;
    }
    for v in &mut p.values {
        *v = v.max(0.0).powf(eec);
    }
}

/// Row ranges of `ln` contiguous layers; the first `rows % ln` layers get
/// one extra row.
pub fn layer_bounds(rows: usize, ln: usize) -> Vec<std::ops::Range<usize>> {
    let base = rows / ln;
    let extra = rows % ln;
    let mut out = Vec::with_capacity(ln);
    let mut start = 0;
    for k in 0..ln {
        let len = base + usize::from(k < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Divides every layer by its own maximum.
pub fn normalize_layers(p: &mut Plane, ln: usize) {
    let cols = p.cols;
    for range in layer_bounds(p.rows, ln) {
        let slice = &mut p.values[range.start * cols..range.end * cols];
        let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max > LAYER_EPS {
            for v in slice {
                *v /= max;
            }
        }
    }
}

/// Zeroes values below `lb` and caps values above `ub`.
pub fn limit(p: &mut Plane, lb: f64, ub: f64) {
    for v in &mut p.values {
        if *v < lb {
            *v = 0.0;
        } else if *v > ub {
            *v = ub;
        }
    }
}

pub fn enhance(spec: &VelocitySpectrum, p: &EnhanceParams) -> Result<Grid2D> {
    enhance_grid(&spec.values, p)
}

pub fn enhance_grid(g: &Grid2D, p: &EnhanceParams) -> Result<Grid2D> {
    p.validate()?;
    let mut plane = Plane::from_grid(g);
    smooth_columns(&mut plane, p.ws, p.st);
    inflate(&mut plane, p.eec);
    normalize_layers(&mut plane, p.ln);
    limit(&mut plane, p.lb, p.ub);
    Ok(plane.to_grid())
}

/// Original spectrum followed by its nine enhanced observations.
pub fn multiscale_stack(spec: &VelocitySpectrum) -> Vec<Grid2D> {
    multiscale_grid(&spec.values)
}

pub fn multiscale_grid(g: &Grid2D) -> Vec<Grid2D> {
    let mut out = vec![g.clone()];
    out.par_extend(
        PARAMETER_GRID
            .par_iter()
            .map(|p| enhance_grid(g, p).expect("grid rows are valid")),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Plane {
        let mut values = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Plane { rows, cols, values }
    }

    #[test]
    fn grid_rows_match_published_values() {
        assert_eq!(PARAMETER_GRID[0], EnhanceParams::row(5, 1, 1.0, 5));
        assert_eq!(PARAMETER_GRID[4], EnhanceParams::row(10, 2, 1.5, 8));
        assert_eq!(PARAMETER_GRID[8], EnhanceParams::row(15, 3, 2.0, 12));
        for p in PARAMETER_GRID {
            p.validate().unwrap();
            assert_eq!((p.lb, p.ub), (0.2, 0.8));
        }
    }

    #[test]
    fn limit_examples() {
        let mut p = plane(1, 3, |_, c| [0.1, 0.5, 0.9][c]);
        limit(&mut p, 0.2, 0.8);
        assert_eq!(p.values, vec![0.0, 0.5, 0.8]);
    }

    #[test]
    fn identity_parameters() {
        let g = Grid2D::from_fn(7, 5, |r, c| ((r * 5 + c) % 9) as f32 / 8.0);
        assert_eq!(enhance_grid(&g, &EnhanceParams::IDENTITY).unwrap(), g);
    }

    #[test]
    fn moving_average_edges() {
        // window [r-1, r+1] truncated at both ends
        let mut p = plane(4, 1, |r, _| [3.0, 0.0, 6.0, 0.0][r]);
        smooth_columns(&mut p, 3, 1);
        assert_eq!(p.values, vec![1.5, 3.0, 2.0, 3.0]);
        // even window [r-2, r+1]
        let mut p = plane(4, 1, |r, _| [4.0, 0.0, 0.0, 8.0][r]);
        smooth_columns(&mut p, 4, 1);
        assert_eq!(p.values, vec![2.0, 4.0 / 3.0, 3.0, 8.0 / 3.0]);
    }

    #[test]
    fn layer_split() {
        assert_eq!(layer_bounds(10, 3), vec![0..4, 4..7, 7..10]);
        assert_eq!(layer_bounds(3, 5), vec![0..1, 1..2, 2..3, 3..3, 3..3]);
        let mut p = plane(6, 2, |r, c| (r * 2 + c) as f64 + 1.0);
        normalize_layers(&mut p, 2);
        assert_eq!(p.values[5], 1.0);
        assert_eq!(p.values[11], 1.0);
        assert_eq!(p.values[0], 1.0 / 6.0);
        let mut z = plane(4, 2, |_, _| 0.0);
        normalize_layers(&mut z, 2);
        assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stack_has_ten_bounded_channels() {
        let g = Grid2D::from_fn(40, 12, |r, c| (((r * 13 + c * 7) % 17) as f32 / 16.0).powi(2));
        let stack = multiscale_grid(&g);
        assert_eq!(stack.len(), STACK_CHANNELS);
        assert_eq!(stack[0], g);
        for ch in &stack[1..] {
            assert!(ch.values().iter().all(|v| (0.0..=0.8).contains(v)));
        }
    }
}
