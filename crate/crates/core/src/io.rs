//! On-disk formats.
//!
//! `VPK1` files hold one or more little-endian `f32` arrays: the 4-byte
//! magic, then per array a `u8` rank, `u32` dims and the values, repeated
//! until end of file. A single-array file is a plain `VPK1` array. Axis
//! metadata is written in milliseconds and m/s so typical sampling values
//! are exact in `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, TimeAxis, VelocityAxis, VelocityCurve};
use crate::spectrum::{AcquisitionGeometry, CmpGather, VelocitySpectrum};

pub const VPK_MAGIC: &[u8; 4] = b"VPK1";

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl Array {
    pub fn new(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        if dims.iter().product::<usize>() != values.len() {
            return Err(Error::Format(format!("dims {dims:?} do not match {} values", values.len())));
        }
        Ok(Self { dims, values })
    }

    pub fn vector(values: Vec<f32>) -> Self {
        Self {
            dims: vec![values.len()],
            values,
        }
    }

    pub fn from_grid(g: &Grid2D) -> Self {
        Self {
            dims: vec![g.rows(), g.cols()],
            values: g.values().to_vec(),
        }
    }

    pub fn into_grid(self) -> Result<Grid2D> {
        match self.dims[..] {
            [rows, cols] => Grid2D::new(rows, cols, self.values),
            _ => Err(Error::Format(format!("expected a 2-D array, got dims {:?}", self.dims))),
        }
    }

    fn expect_len(&self, n: usize, what: &str) -> Result<()> {
        if self.values.len() != n {
            return Err(Error::Format(format!("{what}: expected {n} values, got {}", self.values.len())));
        }
        Ok(())
    }
}

pub fn encode_vpk(arrays: &[Array]) -> Result<Vec<u8>> {
    let mut buf = Vec::from(&VPK_MAGIC[..]);
    for a in arrays {
        if a.dims.iter().product::<usize>() != a.values.len() {
            return Err(Error::Format(format!("dims {:?} do not match {} values", a.dims, a.values.len())));
        }
        let rank = u8::try_from(a.dims.len()).map_err(|_| Error::Format("rank exceeds 255".into()))?;
        buf.push(rank);
        for &d in &a.dims {
            let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &a.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("truncated while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn decode_vpk(bytes: &[u8]) -> Result<Vec<Array>> {
    if bytes.len() < 4 || &bytes[..4] != VPK_MAGIC {
        return Err(Error::Format("bad magic, expected VPK1".into()));
    }
    let mut r = &bytes[4..];
    let mut out = Vec::new();
    while !r.is_empty() {
        let rank = take(&mut r, 1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(take(&mut r, 4, "dims")?.try_into().unwrap()) as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("dims {dims:?} overflow")))?;
        let values = take(&mut r, n, "values")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(Array { dims, values });
    }
    if out.is_empty() {
        return Err(Error::Format("VPK1 file holds no arrays".into()));
    }
    Ok(out)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn write_vpk(path: impl AsRef<Path>, arrays: &[Array]) -> Result<()> {
    write_bytes(path.as_ref(), &encode_vpk(arrays)?)
}

pub fn read_vpk(path: impl AsRef<Path>) -> Result<Vec<Array>> {
    decode_vpk(&read_bytes(path.as_ref())?)
        .map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.as_ref().display())),
            e => e,
        })
}

pub fn write_grid(path: impl AsRef<Path>, grid: &Grid2D) -> Result<()> {
    write_vpk(path, &[Array::from_grid(grid)])
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid2D> {
    read_vpk(path)?.swap_remove(0).into_grid()
}

pub(crate) fn time_record(axis: &TimeAxis) -> Array {
    Array::vector(vec![(axis.t_start * 1000.0) as f32, (axis.dt * 1000.0) as f32])
}

/// The f64 closest to the shortest decimal that prints as `v`, so values
/// written from short decimals such as 15.6 come back unchanged.
pub(crate) fn decimal(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

pub(crate) fn parse_time(a: &Array, n_t: usize) -> Result<TimeAxis> {
    a.expect_len(2, "time axis record")?;
    TimeAxis::new(decimal(a.values[0]) / 1000.0, decimal(a.values[1]) / 1000.0, n_t)
}

fn velocity_record(axis: &VelocityAxis) -> Array {
    Array::vector(vec![axis.v_min as f32, axis.dv as f32])
}

fn parse_velocity(a: &Array, n_v: usize) -> Result<VelocityAxis> {
    a.expect_len(2, "velocity axis record")?;
    VelocityAxis::new(decimal(a.values[0]), decimal(a.values[1]), n_v)
}

pub(crate) fn expect_records(arrays: &[Array], n: usize, what: &str) -> Result<()> {
    if arrays.len() != n {
        return Err(Error::Format(format!("{what} file needs {n} arrays, found {}", arrays.len())));
    }
    Ok(())
}

/// Records: traces `n_t x M`, offsets `M`, time axis `[t_start_ms, dt_ms]`.
pub fn gather_arrays(g: &CmpGather) -> Vec<Array> {
    vec![
        Array::from_grid(&g.traces),
        Array::vector(g.geometry.offsets.iter().map(|x| *x as f32).collect()),
        time_record(&g.geometry.taxis),
    ]
}

pub fn gather_from_arrays(mut arrays: Vec<Array>) -> Result<CmpGather> {
    expect_records(&arrays, 3, "gather")?;
    let time = arrays.pop().unwrap();
    let offsets = arrays.pop().unwrap();
    let traces = arrays.pop().unwrap().into_grid()?;
    let taxis = parse_time(&time, traces.rows())?;
    offsets.expect_len(traces.cols(), "offsets record")?;
    let geometry = AcquisitionGeometry::new(offsets.values.iter().map(|x| decimal(*x)).collect(), taxis)?;
    CmpGather::new(geometry, traces)
}

pub fn write_gather(path: impl AsRef<Path>, g: &CmpGather) -> Result<()> {
    write_vpk(path, &gather_arrays(g))
}

pub fn read_gather(path: impl AsRef<Path>) -> Result<CmpGather> {
    gather_from_arrays(read_vpk(path)?)
}

/// Records: values `n_t x n_v`, time axis `[t_start_ms, dt_ms]`, velocity
/// axis `[v_min, dv]`.
pub fn spectrum_arrays(s: &VelocitySpectrum) -> Vec<Array> {
    vec![Array::from_grid(&s.values), time_record(&s.taxis), velocity_record(&s.vaxis)]
}

pub fn spectrum_from_arrays(mut arrays: Vec<Array>) -> Result<VelocitySpectrum> {
    expect_records(&arrays, 3, "spectrum")?;
    let vel = arrays.pop().unwrap();
    let time = arrays.pop().unwrap();
    let values = arrays.pop().unwrap().into_grid()?;
    let taxis = parse_time(&time, values.rows())?;
    let vaxis = parse_velocity(&vel, values.cols())?;
    VelocitySpectrum::new(taxis, vaxis, values)
}

pub fn write_spectrum(path: impl AsRef<Path>, s: &VelocitySpectrum) -> Result<()> {
    write_vpk(path, &spectrum_arrays(s))
}

pub fn read_spectrum(path: impl AsRef<Path>) -> Result<VelocitySpectrum> {
    spectrum_from_arrays(read_vpk(path)?)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CurveRow {
    t_ms: f64,
    v_mps: f64,
}

/// CSV with header `t_ms,v_mps`.
pub fn write_curve(path: impl AsRef<Path>, curve: &VelocityCurve) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for &(t, v) in curve.points() {
            w.serialize(CurveRow { t_ms: t * 1000.0, v_mps: v })?;
        }
        w.flush()?;
    }
    write_bytes(path.as_ref(), &buf)
}

pub fn read_curve(path: impl AsRef<Path>) -> Result<VelocityCurve> {
    let bytes = read_bytes(path.as_ref())?;
    let mut r = csv::Reader::from_reader(&bytes[..]);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t_ms", "v_mps"] {
        return Err(Error::Format(format!(
            "{}: curve header must be `t_ms,v_mps`",
            path.as_ref().display()
        )));
    }
    let mut points = Vec::new();
    for row in r.deserialize() {
        let row: CurveRow = row?;
        points.push((row.t_ms / 1000.0, row.v_mps));
    }
    VelocityCurve::new(points)
}

/// Binary greyscale image, `lo` mapped to black and `hi` to white. A
/// degenerate range renders everything black.
pub fn write_pgm(path: impl AsRef<Path>, grid: &Grid2D, lo: f32, hi: f32) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", grid.cols(), grid.rows()).into_bytes();
    let span = hi - lo;
    buf.extend(grid.values().iter().map(|v| {
        if span > 0.0 {
            (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
        } else {
            0
        }
    }));
    write_bytes(path.as_ref(), &buf)
}

/// PGM scaled to the grid's own value range.
pub fn write_pgm_auto(path: impl AsRef<Path>, grid: &Grid2D) -> Result<()> {
    write_pgm(path, grid, grid.min(), grid.max())
}

pub fn write_json<T: serde::Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_bytes(path.as_ref(), serde_json::to_string_pretty(value)?.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_slice(&read_bytes(path.as_ref())?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.vpk");
        let g = Grid2D::from_fn(3, 4, |r, c| r as f32 * 0.1 - c as f32 * 1e-3);
        write_grid(&p, &g).unwrap();
        assert_eq!(read_grid(&p).unwrap(), g);
    }

    #[test]
    fn truncated_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.vpk");
        write_grid(&p, &Grid2D::zeros(3, 4)).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_grid(&p), Err(Error::Format(_))));
        fs::write(&p, b"VPK2").unwrap();
        assert!(matches!(read_grid(&p), Err(Error::Format(_))));
        assert!(matches!(read_grid(dir.path().join("nope.vpk")), Err(Error::MissingFile(_))));
    }

    #[test]
    fn gather_and_spectrum_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let geometry = AcquisitionGeometry::regular(3, 50.0, 550.0, 0.004, 5).unwrap();
        let g = CmpGather::new(geometry, Grid2D::from_fn(5, 3, |r, c| (r + c) as f32)).unwrap();
        write_gather(dir.path().join("a.vpk"), &g).unwrap();
        assert_eq!(read_gather(dir.path().join("a.vpk")).unwrap(), g);

        let taxis = TimeAxis::new(0.1, 0.02, 4).unwrap();
        let vaxis = VelocityAxis::new(1500.0, 50.0, 3).unwrap();
        let s = VelocitySpectrum::new(taxis, vaxis, Grid2D::from_fn(4, 3, |r, c| (r * 3 + c) as f32 / 12.0)).unwrap();
        write_spectrum(dir.path().join("s.vpk"), &s).unwrap();
        assert_eq!(read_spectrum(dir.path().join("s.vpk")).unwrap(), s);
        // a spectrum is not a gather
        assert!(read_gather(dir.path().join("s.vpk")).is_err());
    }

    #[test]
    fn curve_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let c = VelocityCurve::new(vec![(0.25, 1800.0), (1.0, 2412.5), (1.75, 3000.25)]).unwrap();
        write_curve(&p, &c).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t_ms,v_mps\n250"));
        assert_eq!(read_curve(&p).unwrap(), c);
        fs::write(&p, "t,v\n1,2\n").unwrap();
        assert!(matches!(read_curve(&p), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_header_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        write_pgm_auto(&p, &Grid2D::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap()).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n3 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    }

    proptest! {
        #[test]
        fn multi_record_round_trip_is_bit_exact(
            a in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..30),
            b in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 0..30),
        ) {
            let arrays = vec![Array::vector(a), Array::vector(b)];
            let back = decode_vpk(&encode_vpk(&arrays).unwrap()).unwrap();
            prop_assert_eq!(back.len(), 2);
            for (x, y) in back.iter().zip(&arrays) {
                prop_assert_eq!(&x.dims, &y.dims);
                let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(&x.values), bits(&y.values));
            }
        }
    }
}
