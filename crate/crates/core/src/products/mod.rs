//! Trackwise (L2) and gridded (L3) soil-moisture products.

mod files;
mod generate;
mod grid;
mod naming;

pub use files::{
    decode_l2, decode_l3, encode_l2, encode_l3, read_l2, read_l3, write_l2_day, write_l3, ProductError, WriteMode,
};
pub use generate::{generate_l2_day, retrieve, L2DayOutput, RetrievalContext};
pub use grid::{daily_window, grid_l3, hourly_windows, GridMethod, L3Grid, TimeWindow};
pub use naming::{l2_path, l3_path, parse_product_path, Cadence, ProductKind, ProductName};

use serde::{Deserialize, Serialize};

use crate::geogrid::{great_circle_km, CellIndex, GeoPoint};
use crate::is_missing;
use crate::timeutil::Timestamp;
use crate::warehouse::{AncillaryRecord, Raster};

/// `surface_flag` bit positions.
pub mod surface_bits {
    pub const COASTAL: u8 = 1 << 0;
    pub const URBAN: u8 = 1 << 1;
    pub const PERMANENT_ICE: u8 = 1 << 2;
    /// Retrieval is suppressed when set.
    pub const HIGH_ELEVATION: u8 = 1 << 3;
    pub const DENSE_VEGETATION: u8 = 1 << 4;
}

pub const COASTAL_KM: f64 = 10.0;
pub const URBAN_FRACTION: f64 = 0.25;
/// IGBP "snow and ice".
pub const ICE_CLASS: u8 = 15;
pub const URBAN_CLASS: u8 = 13;
pub const ELEVATION_M: f64 = 3000.0;
pub const VWC_KG_M2: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFlagInputs {
    pub coastal_distance_km: f64,
    pub urban_fraction: f64,
    pub dominant_igbp_class: u8,
    pub elevation_m: f64,
    pub vwc_kg_m2: f64,
}

impl SurfaceFlagInputs {
    /// Inputs from a 3 km ancillary record; `None` if any needed field is missing.
    pub fn from_ancillary(anc: &AncillaryRecord, coastal_distance_km: f64) -> Option<Self> {
        let urban = anc.landcover_frac[URBAN_CLASS as usize - 1];
        if is_missing(urban) || is_missing(anc.elevation_m) || is_missing(anc.vwc_kg_m2) {
            return None;
        }
        Some(Self {
            coastal_distance_km,
            urban_fraction: urban,
            dominant_igbp_class: anc.dominant_class()?,
            elevation_m: anc.elevation_m,
            vwc_kg_m2: anc.vwc_kg_m2,
        })
    }
}

/// Table of strict-inequality surface conditions; bits 5 to 7 stay clear.
pub fn compute_surface_flags(x: &SurfaceFlagInputs) -> u8 {
    use surface_bits::*;
    let mut w = 0;
    if x.coastal_distance_km < COASTAL_KM {
        w |= COASTAL;
    }
    if x.urban_fraction > URBAN_FRACTION {
        w |= URBAN;
    }
    if x.dominant_igbp_class == ICE_CLASS {
        w |= PERMANENT_ICE;
    }
    if x.elevation_m > ELEVATION_M {
        w |= HIGH_ELEVATION;
    }
    if x.vwc_kg_m2 > VWC_KG_M2 {
        w |= DENSE_VEGETATION;
    }
    w
}

pub fn retrieval_suppressed(flag: u8) -> bool {
    flag & surface_bits::HIGH_ELEVATION != 0
}

/// Distance to the nearest water cell (water fraction > 0.5), bucketed by
/// whole degrees. Exact up to [`CoastIndex::SEARCH_KM`]; farther points
/// report `SEARCH_KM`.
#[derive(Debug, Clone, Default)]
pub struct CoastIndex {
    buckets: std::collections::BTreeMap<(i32, i32), Vec<GeoPoint>>,
}

impl CoastIndex {
    pub const SEARCH_KM: f64 = 100.0;
    pub const WATER_THRESHOLD: f64 = 0.5;

    pub fn from_points(points: impl IntoIterator<Item = GeoPoint>) -> Self {
        let mut idx = Self::default();
        for p in points {
            idx.buckets.entry(Self::key(p)).or_default().push(p);
        }
        idx
    }

    /// Water cells of an ancillary raster (band `water_fraction`).
    pub fn from_raster(r: &Raster) -> Self {
        let Some(band) = r.band_index("water_fraction") else {
            return Self::default();
        };
        let cells: Vec<CellIndex> = r.window.cells().collect();
        Self::from_points(
            cells
                .into_iter()
                .filter(|c| r.get(band, *c).is_some_and(|w| w > Self::WATER_THRESHOLD))
                .filter_map(|c| r.spec.center_of(c).ok()),
        )
    }

    fn key(p: GeoPoint) -> (i32, i32) {
        (p.lat().floor() as i32, p.lon().floor() as i32)
    }

    pub fn distance_km(&self, p: GeoPoint) -> f64 {
        let (klat, klon) = Self::key(p);
        // One degree of latitude is ~111 km; longitude buckets shrink with cos(lat).
        let coslat = (p.lat().abs() + 1.0).min(89.0).to_radians().cos();
        let dlon = ((1.5 / coslat).ceil() as i32).min(180);
        let mut best = Self::SEARCH_KM;
        for a in klat - 1..=klat + 1 {
            for b in klon - dlon..=klon + dlon {
                let b = (b + 180).rem_euclid(360) - 180;
                if let Some(v) = self.buckets.get(&(a, b)) {
                    for q in v {
                        best = best.min(great_circle_km(p, *q));
                    }
                }
            }
        }
        best
    }
}

/// One retrieval with its propagated context (the DDM itself is dropped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Record {
    pub timestamp: Timestamp,
    pub sp: GeoPoint,
    /// m³/m³, or the missing sentinel.
    pub sm: f64,
    pub quality_flags: u32,
    pub spacecraft_id: u8,
    pub prn: u8,
    pub incidence_deg: f64,
    pub ddm_snr: f64,
    pub sp_rx_gain: f64,
    pub reflectivity_db: f64,
    pub anc: AncillaryRecord,
    pub surface_flag: u8,
    /// Training target for the same cell and day, when one exists.
    pub target_sm: Option<f64>,
}
