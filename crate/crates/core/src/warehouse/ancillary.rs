use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::LANDCOVER_CLASSES;
use crate::geogrid::{CellIndex, GeoPoint, GridSpec};
use crate::{is_missing, MISSING};

#[derive(Debug, Error, PartialEq)]
pub enum LandcoverError {
    #[error("pixel ({row}, {col}) has class {class}, expected 1..=17 or 0 (missing)")]
    InvalidClass { row: usize, col: usize, class: u8 },
    #[error("class raster has {got} pixels, expected {rows}x{cols}")]
    Shape { got: usize, rows: usize, cols: usize },
}

/// High-resolution IGBP class raster on a regular lat/lon lattice.
/// Class 0 marks a missing pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRaster {
    /// Latitude of the northern edge.
    pub north: f64,
    /// Longitude of the western edge.
    pub west: f64,
    pub pixel_deg: f64,
    pub rows: usize,
    pub cols: usize,
    pub classes: Vec<u8>,
}

impl ClassRaster {
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.north - (row as f64 + 0.5) * self.pixel_deg,
            self.west + (col as f64 + 0.5) * self.pixel_deg,
        )
    }
}

/// Per-cell land-cover fractions: pixels of class k over valid pixels in the cell.
/// Every cell that receives at least one pixel appears in the output; cells with
/// no valid pixel carry the sentinel vector.
pub fn derive_fractional_landcover(
    class_map: &ClassRaster,
    spec: &GridSpec,
) -> Result<BTreeMap<CellIndex, [f64; LANDCOVER_CLASSES]>, LandcoverError> {
    if class_map.classes.len() != class_map.rows * class_map.cols {
        return Err(LandcoverError::Shape { got: class_map.classes.len(), rows: class_map.rows, cols: class_map.cols });
    }
    let mut counts: BTreeMap<CellIndex, ([u64; LANDCOVER_CLASSES], u64)> = BTreeMap::new();
    for row in 0..class_map.rows {
        for col in 0..class_map.cols {
            let class = class_map.classes[row * class_map.cols + col];
            if class as usize > LANDCOVER_CLASSES {
                return Err(LandcoverError::InvalidClass { row, col, class });
            }
            let (lat, lon) = class_map.pixel_center(row, col);
            let Ok(p) = GeoPoint::new(lat, lon) else { continue };
            let Ok(cell) = spec.cell_of(p) else { continue };
            let entry = counts.entry(cell).or_insert(([0; LANDCOVER_CLASSES], 0));
            if class > 0 {
                entry.0[class as usize - 1] += 1;
                entry.1 += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(cell, (hist, valid))| {
            let frac = if valid == 0 {
                [MISSING; LANDCOVER_CLASSES]
            } else {
                hist.map(|n| n as f64 / valid as f64)
            };
            (cell, frac)
        })
        .collect())
}

/// Per-class stem factors (kg/m²) and the bare-soil NDVI anchor of the VWC curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemFactorLut {
    pub factors: [f64; LANDCOVER_CLASSES],
    pub ndvi0: f64,
}

impl Default for StemFactorLut {
    /// Illustrative factors ordered by IGBP class id; forests highest, barren/ice/water zero.
    fn default() -> Self {
        Self {
            factors: [
                15.96, 19.15, 7.98, 9.58, 12.75, // forests
                2.5, 1.5, 3.2, 2.0, 1.8, // shrubland, savanna, grassland
                2.0, 3.0, 0.5, 2.5, // wetlands, cropland, urban, mosaic
                0.0, 0.0, 0.0, // snow/ice, barren, water
            ],
            ndvi0: 0.1,
        }
    }
}

impl StemFactorLut {
    /// VWC for a pure cell of class index `k` (0-based).
    pub fn vwc_class(&self, ndvi: f64, k: usize) -> f64 {
        self.factors[k] * (ndvi - self.ndvi0).max(0.0) / (1.0 - self.ndvi0)
    }
}

/// Fractional blend of the per-class NDVI→VWC curves, clamped at zero.
pub fn derive_vwc(ndvi: f64, landcover_frac: &[f64; LANDCOVER_CLASSES], stem_lut: &StemFactorLut) -> f64 {
    if is_missing(ndvi) || landcover_frac.iter().any(|v| is_missing(*v)) {
        return MISSING;
    }
    let v: f64 = landcover_frac.iter().enumerate().map(|(k, f)| f * stem_lut.vwc_class(ndvi, k)).sum();
    v.max(0.0)
}
