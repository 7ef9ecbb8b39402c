//! Windowed multi-band rasters on a [`GridSpec`], stored as flat binary files.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic       8 bytes "GSRASTR1"
//! header_len  u64
//! header      JSON {spec, window, dtype, sentinel, bands}
//! data        bands × window.rows × window.cols values of `dtype`, row-major per band
//! ```
//!
//! Missing values are stored as `sentinel`, never NaN.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AncillaryRecord, AncillarySource, TargetSource, LANDCOVER_CLASSES};
use crate::geogrid::{CellIndex, GridSpec};
use crate::{is_missing, MISSING};

const MAGIC: &[u8; 8] = b"GSRASTR1";

/// Band order of the 3 km ancillary raster.
pub const ANCILLARY_BANDS: [&str; 9 + LANDCOVER_CLASSES] = [
    "elevation_m",
    "elevation_std_m",
    "slope_deg",
    "slope_std_deg",
    "ndvi",
    "vwc_kg_m2",
    "water_fraction",
    "clay_fraction",
    "sand_fraction",
    "lc01",
    "lc02",
    "lc03",
    "lc04",
    "lc05",
    "lc06",
    "lc07",
    "lc08",
    "lc09",
    "lc10",
    "lc11",
    "lc12",
    "lc13",
    "lc14",
    "lc15",
    "lc16",
    "lc17",
];

/// Band order of a daily 9 km target raster.
pub const TARGET_BANDS: [&str; 2] = ["soil_moisture", "retrieval_flags"];

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: not a raster file")]
    BadMagic { path: String },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterWindow {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl RasterWindow {
    pub fn full(spec: &GridSpec) -> Self {
        Self { row0: 0, col0: 0, rows: spec.rows, cols: spec.cols }
    }

    /// Offset of `cell` within the window, if inside.
    pub fn offset(&self, cell: CellIndex) -> Option<usize> {
        let r = cell.row.checked_sub(self.row0)?;
        let c = cell.col.checked_sub(self.col0)?;
        (r < self.rows && c < self.cols).then_some(r * self.cols + c)
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.rows)
            .flat_map(move |r| (0..self.cols).map(move |c| CellIndex::new(self.row0 + r, self.col0 + c)))
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterDType {
    F32,
    F64,
    U32,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: GridSpec,
    window: RasterWindow,
    dtype: RasterDType,
    sentinel: f64,
    bands: Vec<String>,
}

/// In memory every value is held as f64 (exact for all stored dtypes).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub spec: GridSpec,
    pub window: RasterWindow,
    pub dtype: RasterDType,
    pub sentinel: f64,
    pub bands: Vec<String>,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(spec: GridSpec, window: RasterWindow, dtype: RasterDType, bands: &[&str]) -> Self {
        Self {
            spec,
            window,
            dtype,
            sentinel: MISSING,
            bands: bands.iter().map(|b| b.to_string()).collect(),
            data: vec![MISSING; bands.len() * window.len()],
        }
    }

    pub fn band_index(&self, name: &str) -> Option<usize> {
        self.bands.iter().position(|b| b == name)
    }

    /// Value at `cell`, `None` outside the window or where missing.
    pub fn get(&self, band: usize, cell: CellIndex) -> Option<f64> {
        let off = self.window.offset(cell)?;
        let v = self.data[band * self.window.len() + off];
        (v != self.sentinel && !v.is_nan()).then_some(v)
    }

    pub fn set(&mut self, band: usize, cell: CellIndex, v: f64) -> bool {
        match self.window.offset(cell) {
            Some(off) => {
                let n = self.window.len();
                self.data[band * n + off] = if v.is_nan() { self.sentinel } else { v };
                true
            }
            None => false,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            spec: self.spec,
            window: self.window,
            dtype: self.dtype,
            sentinel: self.sentinel,
            bands: self.bands.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for &v in &self.data {
            match self.dtype {
                RasterDType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                RasterDType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                RasterDType::U32 => {
                    let u = if v == self.sentinel { u32::MAX } else { v as u32 };
                    out.extend_from_slice(&u.to_le_bytes())
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self, RasterError> {
        let fmt = |msg: &str| RasterError::Format { path: path.to_string(), msg: msg.to_string() };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(RasterError::BadMagic { path: path.to_string() });
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let hbytes = bytes.get(16..16 + hlen).ok_or_else(|| fmt("truncated header"))?;
        let h: Header = serde_json::from_slice(hbytes).map_err(|e| fmt(&e.to_string()))?;
        h.spec.validate().map_err(|e| fmt(&e.to_string()))?;
        let n = h.bands.len() * h.window.len();
        let body = &bytes[16 + hlen..];
        let width = match h.dtype {
            RasterDType::F32 | RasterDType::U32 => 4,
            RasterDType::F64 => 8,
        };
        if body.len() != n * width {
            return Err(fmt(&format!("expected {} data bytes, found {}", n * width, body.len())));
        }
        let data = body
            .chunks_exact(width)
            .map(|c| match h.dtype {
                RasterDType::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                RasterDType::F64 => f64::from_le_bytes(c.try_into().unwrap()),
                RasterDType::U32 => match u32::from_le_bytes(c.try_into().unwrap()) {
                    u32::MAX => h.sentinel,
                    u => u as f64,
                },
            })
            .collect();
        Ok(Self { spec: h.spec, window: h.window, dtype: h.dtype, sentinel: h.sentinel, bands: h.bands, data })
    }

    pub fn write(&self, path: &Path) -> Result<(), RasterError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|source| RasterError::Io { path: dir.display().to_string(), source })?;
        }
        fs::write(path, self.to_bytes()).map_err(|source| RasterError::Io { path: path.display().to_string(), source })
    }

    pub fn read(path: &Path) -> Result<Self, RasterError> {
        let bytes = fs::read(path).map_err(|source| RasterError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// The 3 km ancillary raster viewed as an [`AncillarySource`].
#[derive(Debug, Clone)]
pub struct AncillaryRasterStore {
    pub raster: Raster,
}

impl AncillaryRasterStore {
    pub fn new(raster: Raster) -> Result<Self, RasterError> {
        if raster.bands.iter().map(String::as_str).ne(ANCILLARY_BANDS.iter().copied()) {
            return Err(RasterError::Format { path: "<ancillary>".into(), msg: "unexpected band layout".into() });
        }
        Ok(Self { raster })
    }

    pub fn open(path: &Path) -> Result<Self, RasterError> {
        let r = Raster::read(path)?;
        Self::new(r).map_err(|_| RasterError::Format {
            path: path.display().to_string(),
            msg: "unexpected band layout".into(),
        })
    }
}

impl AncillarySource for AncillaryRasterStore {
    fn record_at(&self, cell: CellIndex) -> AncillaryRecord {
        let bands: Vec<f64> =
            (0..ANCILLARY_BANDS.len()).map(|b| self.raster.get(b, cell).unwrap_or(MISSING)).collect();
        AncillaryRecord::from_bands(&bands)
    }
}

/// Daily 9 km target rasters keyed by calendar day.
#[derive(Debug, Clone, Default)]
pub struct TargetRasterStore {
    days: BTreeMap<NaiveDate, Raster>,
}

impl TargetRasterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, day: NaiveDate, raster: Raster) {
        self.days.insert(day, raster);
    }

    pub fn day(&self, day: NaiveDate) -> Option<&Raster> {
        self.days.get(&day)
    }

    pub fn file_name(day: NaiveDate) -> String {
        format!("target_{}.gsr", day.format("%Y%m%d"))
    }

    /// Loads every `target_YYYYMMDD.gsr` present in `dir` for days in `[first, last]`.
    pub fn load_dir(dir: &Path, first: NaiveDate, last: NaiveDate) -> Result<Self, RasterError> {
        let mut store = Self::new();
        for day in crate::timeutil::days_inclusive(first, last) {
            let path = dir.join(Self::file_name(day));
            if path.exists() {
                store.insert(day, Raster::read(&path)?);
            }
        }
        Ok(store)
    }
}

impl TargetSource for TargetRasterStore {
    fn target_at(&self, day: NaiveDate, cell: CellIndex) -> Option<(f64, u32)> {
        let r = self.days.get(&day)?;
        let sm = r.get(0, cell)?;
        if is_missing(sm) {
            return None;
        }
        let flags = r.get(1, cell).unwrap_or(0.0) as u32;
        Some((sm, flags))
    }
}
