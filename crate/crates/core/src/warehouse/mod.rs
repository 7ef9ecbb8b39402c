//! Sample warehouse: L1 ingest, ancillary matchup and derived surface fields.

mod ancillary;
mod archive;
mod metrics;
mod raster;
mod store;

pub use ancillary::{derive_fractional_landcover, derive_vwc, ClassRaster, LandcoverError, StemFactorLut};
pub use archive::{
    decode_l1_file, encode_l1_file, ingest_l1_day, l1_file_name, satellite_label, ArchiveError, ArchiveFile,
    FileIngestReport, IngestError, IngestedDay, LocalDirArchive, ObservationArchive, RemoteArchiveStub,
};
pub use metrics::{compute_ddm_metrics, ReflectivityCalibration, GPS_L1_WAVELENGTH_M, NOISE_ROWS};
pub use raster::{
    AncillaryRasterStore, Raster, RasterDType, RasterError, RasterWindow, TargetRasterStore, ANCILLARY_BANDS,
    TARGET_BANDS,
};
pub use store::{WarehouseError, WarehouseStore};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::geogrid::{CellIndex, Ease2Res, GeoError, GeoPoint, GridSpec};
use crate::timeutil::{day_of, Timestamp};
use crate::{is_missing, MISSING};

pub const DDM_DELAY_ROWS: usize = 17;
pub const DDM_DOPPLER_COLS: usize = 11;
pub const DDM_BINS: usize = DDM_DELAY_ROWS * DDM_DOPPLER_COLS;
pub const LANDCOVER_CLASSES: usize = 17;

/// Delay-Doppler map in watts, `bins[delay_row][doppler_col]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ddm {
    pub bins: [[f64; DDM_DOPPLER_COLS]; DDM_DELAY_ROWS],
}

impl Ddm {
    pub fn zeros() -> Self {
        Self { bins: [[0.0; DDM_DOPPLER_COLS]; DDM_DELAY_ROWS] }
    }

    pub fn filled(v: f64) -> Self {
        Self { bins: [[v; DDM_DOPPLER_COLS]; DDM_DELAY_ROWS] }
    }

    pub fn from_flat(values: &[f64]) -> Option<Self> {
        if values.len() != DDM_BINS {
            return None;
        }
        let mut d = Self::zeros();
        for (i, v) in values.iter().enumerate() {
            d.bins[i / DDM_DOPPLER_COLS][i % DDM_DOPPLER_COLS] = *v;
        }
        Some(d)
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.bins.iter().flat_map(|r| r.iter().copied())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    pub fn max(&self) -> f64 {
        self.iter().fold(0.0, f64::max)
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut d = self.clone();
        d.bins.iter_mut().flatten().for_each(|v| *v *= k);
        d
    }

    pub fn is_valid(&self) -> bool {
        self.iter().all(|v| v.is_finite() && v >= 0.0)
    }
}

/// One GNSS-R measurement with its geometry and quality metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdmObservation {
    pub timestamp: Timestamp,
    pub sp: GeoPoint,
    pub ddm: Ddm,
    pub ddm_snr: f64,
    pub sp_rx_gain: f64,
    pub incidence_deg: f64,
    pub spacecraft_id: u8,
    pub prn: u8,
    /// (transmitter to specular point, specular point to receiver), meters.
    pub rx_tx_ranges_m: (f64, f64),
    pub quality_flags: u32,
    pub sample_rate_hz: u8,
}

impl DdmObservation {
    /// Checks the record-level invariants; `Err` carries the violated rule.
    pub fn validate(&self) -> Result<(), String> {
        if !self.timestamp.is_finite() {
            return Err("timestamp not finite".into());
        }
        if !self.ddm.is_valid() {
            return Err("ddm has negative or non-finite bins".into());
        }
        if !(0.0..90.0).contains(&self.incidence_deg) {
            return Err(format!("incidence {} outside [0, 90)", self.incidence_deg));
        }
        if !(self.rx_tx_ranges_m.0 > 0.0 && self.rx_tx_ranges_m.1 > 0.0) {
            return Err("ranges must be positive".into());
        }
        if !(self.ddm_snr.is_finite() && self.sp_rx_gain.is_finite()) {
            return Err("snr/gain not finite".into());
        }
        if !matches!(self.sample_rate_hz, 1 | 2) {
            return Err(format!("sample rate {} Hz", self.sample_rate_hz));
        }
        if !(1..=8).contains(&self.spacecraft_id) {
            return Err(format!("spacecraft id {}", self.spacecraft_id));
        }
        Ok(())
    }

    pub fn day(&self) -> NaiveDate {
        day_of(self.timestamp)
    }
}

/// Static/climatological surface context for one 3 km cell. Missing values are [`MISSING`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AncillaryRecord {
    pub elevation_m: f64,
    pub elevation_std_m: f64,
    pub slope_deg: f64,
    pub slope_std_deg: f64,
    pub ndvi: f64,
    pub vwc_kg_m2: f64,
    pub water_fraction: f64,
    pub clay_fraction: f64,
    pub sand_fraction: f64,
    pub landcover_frac: [f64; LANDCOVER_CLASSES],
}

impl AncillaryRecord {
    pub fn missing() -> Self {
        Self {
            elevation_m: MISSING,
            elevation_std_m: MISSING,
            slope_deg: MISSING,
            slope_std_deg: MISSING,
            ndvi: MISSING,
            vwc_kg_m2: MISSING,
            water_fraction: MISSING,
            clay_fraction: MISSING,
            sand_fraction: MISSING,
            landcover_frac: [MISSING; LANDCOVER_CLASSES],
        }
    }

    /// Scalar fields in band order (see [`ANCILLARY_BANDS`]).
    pub fn to_bands(&self) -> Vec<f64> {
        let mut v = vec![
            self.elevation_m,
            self.elevation_std_m,
            self.slope_deg,
            self.slope_std_deg,
            self.ndvi,
            self.vwc_kg_m2,
            self.water_fraction,
            self.clay_fraction,
            self.sand_fraction,
        ];
        v.extend_from_slice(&self.landcover_frac);
        v
    }

    pub fn from_bands(b: &[f64]) -> Self {
        let mut lc = [MISSING; LANDCOVER_CLASSES];
        lc.copy_from_slice(&b[9..9 + LANDCOVER_CLASSES]);
        Self {
            elevation_m: b[0],
            elevation_std_m: b[1],
            slope_deg: b[2],
            slope_std_deg: b[3],
            ndvi: b[4],
            vwc_kg_m2: b[5],
            water_fraction: b[6],
            clay_fraction: b[7],
            sand_fraction: b[8],
            landcover_frac: lc,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.to_bands().iter().all(|v| !is_missing(*v))
    }

    /// Dominant IGBP class id (1-based), ties to the lower id.
    pub fn dominant_class(&self) -> Option<u8> {
        if self.landcover_frac.iter().any(|v| is_missing(*v)) {
            return None;
        }
        let mut best = 0;
        for k in 1..LANDCOVER_CLASSES {
            if self.landcover_frac[k] > self.landcover_frac[best] {
                best = k;
            }
        }
        Some(best as u8 + 1)
    }
}

/// DDM-derived surface metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdmMetrics {
    pub peak_power_w: f64,
    pub noise_floor_w: f64,
    /// Specular reflectivity in dB, or [`MISSING`] for an all-zero DDM.
    pub reflectivity_db: f64,
}

/// One warehouse row: observation, surface context and (optionally) the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub obs: DdmObservation,
    pub anc: AncillaryRecord,
    pub metrics: DdmMetrics,
    pub cell_3km: CellIndex,
    pub cell_9km: CellIndex,
    pub cell_36km: CellIndex,
    pub target_sm: Option<f64>,
    pub target_flags: Option<u32>,
}

/// Read access to 3 km ancillary surface fields.
pub trait AncillarySource: Sync {
    fn record_at(&self, cell_3km: CellIndex) -> AncillaryRecord;
}

/// Read access to the 9 km daily retrieval target: `(soil moisture, flag word)`.
pub trait TargetSource: Sync {
    fn target_at(&self, day: NaiveDate, cell_9km: CellIndex) -> Option<(f64, u32)>;
}

/// No targets at all (operational inference without a training target).
pub struct NoTargets;

impl TargetSource for NoTargets {
    fn target_at(&self, _day: NaiveDate, _cell: CellIndex) -> Option<(f64, u32)> {
        None
    }
}

/// Cells of `p` on the 3/9/36 km grids.
pub fn cell_triplet(p: GeoPoint) -> Result<(CellIndex, CellIndex, CellIndex), GeoError> {
    Ok((
        GridSpec::ease2(Ease2Res::Km3).cell_of(p)?,
        GridSpec::ease2(Ease2Res::Km9).cell_of(p)?,
        GridSpec::ease2(Ease2Res::Km36).cell_of(p)?,
    ))
}

/// Joins observations to ancillary context (3 km, direct indexing) and to the
/// same-calendar-day 9 km target. Output order follows input order; observations
/// outside the projection's latitude span are dropped.
pub fn build_samples(
    obs: &[DdmObservation],
    anc_store: &dyn AncillarySource,
    target_store: &dyn TargetSource,
    cal: &ReflectivityCalibration,
) -> Vec<Sample> {
    let g3 = GridSpec::ease2(Ease2Res::Km3);
    let g9 = GridSpec::ease2(Ease2Res::Km9);
    let g36 = GridSpec::ease2(Ease2Res::Km36);
    obs.iter()
        .filter_map(|o| {
            let c3 = g3.cell_of(o.sp).ok()?;
            let c9 = g9.cell_of(o.sp).ok()?;
            let c36 = g36.cell_of(o.sp).ok()?;
            let anc = anc_store.record_at(c3);
            let target = target_store
                .target_at(o.day(), c9)
                .filter(|(sm, _)| !is_missing(*sm) && (0.0..=1.0).contains(sm));
            Some(Sample {
                metrics: compute_ddm_metrics(o, cal),
                obs: o.clone(),
                anc,
                cell_3km: c3,
                cell_9km: c9,
                cell_36km: c36,
                target_sm: target.map(|t| t.0),
                target_flags: target.map(|t| t.1),
            })
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn obs_at(lat: f64, lon: f64, t: Timestamp) -> DdmObservation {
        let mut ddm = Ddm::filled(1e-18);
        ddm.bins[8][5] = 1e-16;
        DdmObservation {
            timestamp: t,
            sp: GeoPoint::new(lat, lon).unwrap(),
            ddm,
            ddm_snr: 10.0,
            sp_rx_gain: 8.0,
            incidence_deg: 30.0,
            spacecraft_id: 3,
            prn: 12,
            rx_tx_ranges_m: (2.1e7, 6.0e5),
            quality_flags: 0,
            sample_rate_hz: 2,
        }
    }

    pub fn complete_anc() -> AncillaryRecord {
        let mut lc = [0.0; LANDCOVER_CLASSES];
        lc[6] = 1.0;
        AncillaryRecord {
            elevation_m: 100.0,
            elevation_std_m: 5.0,
            slope_deg: 1.0,
            slope_std_deg: 0.5,
            ndvi: 0.4,
            vwc_kg_m2: 1.0,
            water_fraction: 0.0,
            clay_fraction: 0.2,
            sand_fraction: 0.5,
            landcover_frac: lc,
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::testutil::*;
    use super::*;
    use crate::timeutil::day_start;

    struct ConstAnc;
    impl AncillarySource for ConstAnc {
        fn record_at(&self, _c: CellIndex) -> AncillaryRecord {
            complete_anc()
        }
    }

    struct MapTargets(HashMap<(NaiveDate, CellIndex), (f64, u32)>);
    impl TargetSource for MapTargets {
        fn target_at(&self, day: NaiveDate, c: CellIndex) -> Option<(f64, u32)> {
            self.0.get(&(day, c)).copied()
        }
    }

    #[test]
    fn target_attached_only_for_populated_same_day_cell() {
        let day = NaiveDate::from_ymd_opt(2022, 5, 18).unwrap();
        let t = day_start(day) + 3600.0;
        let o1 = obs_at(30.0, 10.0, t);
        let o2 = obs_at(31.0, 10.0, t);
        let o3 = obs_at(30.0, 10.0, t + 86_400.0);
        let (_, c9, _) = cell_triplet(o1.sp).unwrap();
        let stores = MapTargets(HashMap::from([((day, c9), (0.271, 0u32))]));
        let s = build_samples(&[o1, o2, o3], &ConstAnc, &stores, &ReflectivityCalibration::default());
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].target_sm, Some(0.271));
        assert_eq!(s[1].target_sm, None);
        assert_eq!(s[2].target_sm, None);
        assert_eq!(s[0].cell_9km, c9);
    }

    #[test]
    fn perturbation_within_cell_keeps_target() {
        let day = NaiveDate::from_ymd_opt(2022, 5, 18).unwrap();
        let g9 = GridSpec::ease2(Ease2Res::Km9);
        let c9 = CellIndex::new(400, 2000);
        let center = g9.center_of(c9).unwrap();
        let stores = MapTargets(HashMap::from([((day, c9), (0.2, 0u32))]));
        for (dl, dn) in [(0.0, 0.0), (0.03, 0.03), (-0.03, 0.04), (0.02, -0.04)] {
            let o = obs_at(center.lat() + dl, center.lon() + dn, day_start(day) + 10.0);
            let s = build_samples(&[o], &ConstAnc, &stores, &ReflectivityCalibration::default());
            assert_eq!(s[0].cell_9km, c9);
            assert_eq!(s[0].target_sm, Some(0.2));
        }
    }

    #[test]
    fn ancillary_bands_round_trip() {
        let a = complete_anc();
        assert_eq!(AncillaryRecord::from_bands(&a.to_bands()), a);
        assert!(a.is_complete());
        assert!(!AncillaryRecord::missing().is_complete());
        assert_eq!(a.dominant_class(), Some(7));
    }
}
