//! Dataset directories: `manifest.json` plus one file per array.
//!
//! ```text
//! manifest.json
//! gathers/L000_C0003.vpk
//! spectra/L000_C0003.vpk
//! labels/L000_C0003.csv
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{TimeAxis, VelocityAxis, VelocityCurve};
use crate::io;
use crate::spectrum::{AcquisitionGeometry, CmpGather, VelocitySpectrum};

pub const MANIFEST: &str = "manifest.json";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub line: u32,
    pub cdp: u32,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gather: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Entry {
    /// Entry with the conventional relative paths for every artifact.
    pub fn conventional(line: u32, cdp: u32, split: Split) -> Self {
        let stem = format!("L{line:03}_C{cdp:04}");
        Self {
            line,
            cdp,
            split,
            gather: Some(format!("gathers/{stem}.vpk")),
            spectrum: Some(format!("spectra/{stem}.vpk")),
            label: Some(format!("labels/{stem}.csv")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    /// Spectrum time axis.
    pub taxis: TimeAxis,
    pub vaxis: VelocityAxis,
    /// Recording geometry shared by every gather.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<AcquisitionGeometry>,
    pub entries: Vec<Entry>,
}

impl DatasetManifest {
    pub fn new(taxis: TimeAxis, vaxis: VelocityAxis, geometry: Option<AcquisitionGeometry>) -> Self {
        Self {
            version: VERSION,
            taxis,
            vaxis,
            geometry,
            entries: Vec::new(),
        }
    }
}

/// Arrays of one entry, written to the entry's paths.
#[derive(Debug, Clone, Default)]
pub struct EntryData {
    pub gather: Option<CmpGather>,
    pub spectrum: Option<VelocitySpectrum>,
    pub label: Option<VelocityCurve>,
}

/// Writes every array of `data` (parallel to `manifest.entries`) and then
/// the manifest.
pub fn write_dataset(root: impl AsRef<Path>, manifest: &DatasetManifest, data: &[EntryData]) -> Result<()> {
    let root = root.as_ref();
    if data.len() != manifest.entries.len() {
        return Err(Error::Shape(format!(
            "{} entries but {} data items",
            manifest.entries.len(),
            data.len()
        )));
    }
    for (e, d) in manifest.entries.iter().zip(data) {
        if let (Some(path), Some(g)) = (&e.gather, &d.gather) {
            check_gather(manifest, g, path)?;
            io::write_gather(root.join(path), g)?;
        }
        if let (Some(path), Some(s)) = (&e.spectrum, &d.spectrum) {
            check_spectrum(manifest, s, path)?;
            io::write_spectrum(root.join(path), s)?;
        }
        if let (Some(path), Some(c)) = (&e.label, &d.label) {
            io::write_curve(root.join(path), c)?;
        }
    }
    io::write_json(root.join(MANIFEST), manifest)
}

fn check_gather(m: &DatasetManifest, g: &CmpGather, path: &str) -> Result<()> {
    match &m.geometry {
        Some(geo) if geo.traces() == g.geometry.traces() && geo.taxis.n_t == g.geometry.taxis.n_t => Ok(()),
        Some(geo) => Err(Error::Format(format!(
            "{path}: gather is {}x{}, manifest declares {}x{}",
            g.traces.rows(),
            g.traces.cols(),
            geo.taxis.n_t,
            geo.traces()
        ))),
        None => Err(Error::Format(format!("{path}: manifest declares no gather geometry"))),
    }
}

fn check_spectrum(m: &DatasetManifest, s: &VelocitySpectrum, path: &str) -> Result<()> {
    if s.values.dims() != (m.taxis.n_t, m.vaxis.n_v) {
        return Err(Error::Format(format!(
            "{path}: spectrum is {}x{}, manifest declares {}x{}",
            s.values.rows(),
            s.values.cols(),
            m.taxis.n_t,
            m.vaxis.n_v
        )));
    }
    Ok(())
}

/// An opened, validated dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

/// Reads the manifest and checks that every referenced file exists, parses
/// and matches the declared dimensions.
pub fn read_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref().to_path_buf();
    let manifest: DatasetManifest = io::read_json(root.join(MANIFEST))?;
    if manifest.version != VERSION {
        return Err(Error::Format(format!("unsupported manifest version {}", manifest.version)));
    }
    manifest.taxis.validate()?;
    manifest.vaxis.validate()?;
    let ds = Dataset { root, manifest };
    for i in 0..ds.len() {
        let e = &ds.manifest.entries[i];
        if let Some(path) = &e.gather {
            check_gather(&ds.manifest, &ds.gather(i)?, path)?;
        }
        if let Some(path) = &e.spectrum {
            check_spectrum(&ds.manifest, &ds.spectrum(i)?, path)?;
        }
        if e.label.is_some() {
            ds.label(i)?;
        }
    }
    Ok(ds)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    pub fn entry(&self, i: usize) -> &Entry {
        &self.manifest.entries[i]
    }

    fn need<'a>(&self, i: usize, path: &'a Option<String>, what: &str) -> Result<&'a str> {
        path.as_deref().ok_or_else(|| {
            let e = self.entry(i);
            Error::Format(format!("line {} cdp {} has no {what}", e.line, e.cdp))
        })
    }

    pub fn gather(&self, i: usize) -> Result<CmpGather> {
        let p = self.need(i, &self.entry(i).gather, "gather")?;
        io::read_gather(self.root.join(p))
    }

    pub fn spectrum(&self, i: usize) -> Result<VelocitySpectrum> {
        let p = self.need(i, &self.entry(i).spectrum, "spectrum")?;
        io::read_spectrum(self.root.join(p))
    }

    pub fn label(&self, i: usize) -> Result<VelocityCurve> {
        let p = self.need(i, &self.entry(i).label, "label")?;
        io::read_curve(self.root.join(p))
    }

    pub fn has_label(&self, i: usize) -> bool {
        self.entry(i).label.is_some()
    }

    pub fn lines(&self) -> Vec<u32> {
        self.manifest.entries.iter().map(|e| e.line).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Entry indices of `line`, ordered by cdp.
    pub fn line_entries(&self, line: u32) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.entry(i).line == line).collect();
        idx.sort_by_key(|&i| self.entry(i).cdp);
        idx
    }

    pub fn split_entries(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.entry(i).split == split).collect()
    }

    pub fn find(&self, line: u32, cdp: u32) -> Option<usize> {
        (0..self.len()).find(|&i| self.entry(i).line == line && self.entry(i).cdp == cdp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;

    fn sample() -> (DatasetManifest, Vec<EntryData>) {
        let taxis = TimeAxis::new(0.0, 0.02, 4).unwrap();
        let vaxis = VelocityAxis::new(1500.0, 100.0, 3).unwrap();
        let geometry = AcquisitionGeometry::regular(2, 0.0, 100.0, 0.004, 6).unwrap();
        let mut m = DatasetManifest::new(taxis, vaxis, Some(geometry.clone()));
        m.entries.push(Entry::conventional(0, 1, Split::Train));
        let data = EntryData {
            gather: Some(CmpGather::new(geometry, Grid2D::from_fn(6, 2, |r, c| (r * 2 + c) as f32)).unwrap()),
            spectrum: Some(VelocitySpectrum::new(taxis, vaxis, Grid2D::from_fn(4, 3, |r, c| (r + c) as f32 / 6.0)).unwrap()),
            label: Some(VelocityCurve::new(vec![(0.0, 1600.0), (0.06, 1700.0)]).unwrap()),
        };
        (m, vec![data])
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (m, data) = sample();
        write_dataset(dir.path(), &m, &data).unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.manifest, m);
        assert_eq!(&ds.gather(0).unwrap(), data[0].gather.as_ref().unwrap());
        assert_eq!(&ds.spectrum(0).unwrap(), data[0].spectrum.as_ref().unwrap());
        assert_eq!(&ds.label(0).unwrap(), data[0].label.as_ref().unwrap());
        assert_eq!(ds.lines(), vec![0]);
        assert_eq!(ds.find(0, 1), Some(0));
    }

    #[test]
    fn missing_and_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let (m, data) = sample();
        write_dataset(dir.path(), &m, &data).unwrap();
        std::fs::remove_file(dir.path().join("labels/L000_C0001.csv")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::MissingFile(_))));

        let (mut m, data) = sample();
        write_dataset(dir.path(), &m, &data).unwrap();
        m.vaxis.n_v = 5;
        io::write_json(dir.path().join(MANIFEST), &m).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format(_))));
    }
}
