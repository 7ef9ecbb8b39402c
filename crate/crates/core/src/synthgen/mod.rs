//! Deterministic synthetic world: soil-moisture truth, ancillary rasters,
//! orbit-like tracks, DDMs from a closed-form forward model and daily
//! SMAP-like targets. Writes the same files the warehouse ingests.

mod field;
mod forward;
mod surface;
mod target;
mod tracks;

pub use field::{xyz_km, FourierField, RainEvent, SmField, SM_CEIL, SM_FLOOR};
pub use forward::{ForwardModel, SurfaceState, SynthDdm, FIRST_SIGNAL_ROW, SPECULAR_COL, SPECULAR_ROW};
pub use surface::ancillary_window;
pub use target::{cell_mean_truth, in_swath, injected_flags, synthesize_target, target_window, TRUTH_HOURS};
pub use tracks::{
    destination, ranges_for, simulate_tracks, TrackPoint, GROUND_SPEED_KM_S, MAX_INCIDENCE_DEG, RECEIVER_ALTITUDE_M,
    TRANSMITTER_ALTITUDE_M,
};

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditioning::l1_flags;
use crate::geogrid::{Ease2Res, GeoPoint, GridSpec};
use crate::timeutil::{day_start, days_inclusive};
use crate::validation::InSituSite;
use crate::warehouse::{
    build_samples, cell_triplet, compute_ddm_metrics, AncillaryRasterStore, AncillaryRecord, AncillarySource, Ddm,
    DdmObservation, LocalDirArchive, ReflectivityCalibration, Sample, TargetRasterStore, DDM_DELAY_ROWS,
    LANDCOVER_CLASSES,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Archive(#[from] crate::warehouse::ArchiveError),
    #[error("{0}")]
    Raster(#[from] crate::warehouse::RasterError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmFieldConfig {
    pub mean: f64,
    pub spatial_std: f64,
    /// Length scale of the Gaussian spatial covariance, km.
    pub correlation_km: f64,
    pub fourier_features: usize,
    pub seasonal_amplitude: f64,
    /// Expected rain events per day over the whole box.
    pub rain_events_per_day: f64,
    pub rain_radius_km: f64,
    /// Typical wet-up, m³/m³.
    pub rain_amount: f64,
    /// Dry-down e-folding time.
    pub drydown_days: f64,
}

impl Default for SmFieldConfig {
    fn default() -> Self {
        Self {
            mean: 0.22,
            spatial_std: 0.07,
            correlation_km: 150.0,
            fourier_features: 256,
            seasonal_amplitude: 0.04,
            rain_events_per_day: 2.0,
            rain_radius_km: 100.0,
            rain_amount: 0.1,
            drydown_days: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    pub tracks_per_day: usize,
    pub samples_per_track: usize,
    pub sample_rate_hz: u8,
    /// Probability an observation carries a rejecting L1 quality flag.
    pub l1_flag_rate: f64,
    /// Probability a DDM carries a full-column interference stripe.
    pub rfi_rate: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self { tracks_per_day: 200, samples_per_track: 240, sample_rate_hz: 2, l1_flag_rate: 0.01, rfi_rate: 0.005 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    /// Fraction of cells under the daily swaths, (0, 1].
    pub coverage: f64,
    pub swath_period_km: f64,
    pub bias: f64,
    pub noise_std: f64,
    pub unsuccessful_rate: f64,
    pub not_recommended_rate: f64,
    pub precipitation_rate: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            coverage: 0.3,
            swath_period_km: 150.0,
            bias: 0.0,
            noise_std: 0.01,
            unsuccessful_rate: 0.02,
            not_recommended_rate: 0.05,
            precipitation_rate: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
    pub sm: SmFieldConfig,
    pub tracks: TrackConfig,
    /// Relative per-bin DDM noise standard deviation.
    pub ddm_noise: f64,
    pub forward: ForwardModel,
    pub target: TargetConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            lat_min: 25.0,
            lat_max: 35.0,
            lon_min: -105.0,
            lon_max: -92.0,
            first_day: NaiveDate::from_ymd_opt(2020, 6, 1).unwrap(),
            last_day: NaiveDate::from_ymd_opt(2020, 6, 30).unwrap(),
            sm: SmFieldConfig::default(),
            tracks: TrackConfig::default(),
            ddm_noise: 0.03,
            forward: ForwardModel::default(),
            target: TargetConfig::default(),
        }
    }
}

impl WorldConfig {
    /// A few-degree box over a few days; quick to generate.
    pub fn small(seed: u64) -> Self {
        Self {
            seed,
            lat_min: 30.0,
            lat_max: 34.0,
            lon_min: -100.0,
            lon_max: -94.0,
            first_day: NaiveDate::from_ymd_opt(2020, 6, 1).unwrap(),
            last_day: NaiveDate::from_ymd_opt(2020, 6, 3).unwrap(),
            tracks: TrackConfig { tracks_per_day: 24, samples_per_track: 120, ..TrackConfig::default() },
            ..Self::default()
        }
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        days_inclusive(self.first_day, self.last_day)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if !(-40.0..=40.0).contains(&self.lat_min) || !(-40.0..=40.0).contains(&self.lat_max) || self.lat_min >= self.lat_max {
            return bad(format!("latitude band [{}, {}] must be ordered and within ±40°", self.lat_min, self.lat_max));
        }
        if !(-180.0..=180.0).contains(&self.lon_min) || !(-180.0..=180.0).contains(&self.lon_max) || self.lon_min >= self.lon_max {
            return bad(format!("longitude band [{}, {}] must be ordered within ±180°", self.lon_min, self.lon_max));
        }
        if self.first_day > self.last_day {
            return bad("first_day after last_day".into());
        }
        let s = &self.sm;
        for (name, v) in [
            ("correlation_km", s.correlation_km),
            ("rain_events_per_day", s.rain_events_per_day),
            ("rain_radius_km", s.rain_radius_km),
            ("drydown_days", s.drydown_days),
            ("swath_period_km", self.target.swath_period_km),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if s.fourier_features == 0 {
            return bad("fourier_features must be positive".into());
        }
        if !matches!(self.tracks.sample_rate_hz, 1 | 2) {
            return bad(format!("sample_rate_hz {} not in {{1, 2}}", self.tracks.sample_rate_hz));
        }
        let t = &self.target;
        if !(t.coverage > 0.0 && t.coverage <= 1.0) {
            return bad(format!("coverage {} outside (0, 1]", t.coverage));
        }
        for (name, v) in [
            ("l1_flag_rate", self.tracks.l1_flag_rate),
            ("rfi_rate", self.tracks.rfi_rate),
            ("unsuccessful_rate", t.unsuccessful_rate),
            ("not_recommended_rate", t.not_recommended_rate),
            ("precipitation_rate", t.precipitation_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if !(self.ddm_noise >= 0.0 && t.noise_std >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        Ok(())
    }
}

pub(crate) fn splitmix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn unit_interval(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Independent stream for `(seed, path…)`.
pub(crate) fn rng_for(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(path.iter().fold(splitmix(seed, 0), |h, p| splitmix(h, *p)))
}

/// One synthetic L1 observation and the soil moisture that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticObservation {
    pub obs: DdmObservation,
    pub sm_true: f64,
}

pub struct World {
    pub cfg: WorldConfig,
    pub field: SmField,
    pub ancillary: AncillaryRasterStore,
    pub cal: ReflectivityCalibration,
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World, SynthError> {
    cfg.validate()?;
    let field = SmField::generate(cfg);
    let surface = surface::SurfaceFields::new(cfg);
    let ancillary = surface::build_ancillary(cfg, &surface);
    Ok(World { cfg: cfg.clone(), field, ancillary, cal: ReflectivityCalibration::default() })
}

/// Paths written by [`write_world`].
#[derive(Debug, Clone, PartialEq)]
pub struct WorldFiles {
    pub ancillary: PathBuf,
    pub l1_root: PathBuf,
    pub target_dir: PathBuf,
}

impl WorldFiles {
    pub fn under(root: &Path) -> Self {
        Self { ancillary: root.join("ancillary.gsr"), l1_root: root.join("l1"), target_dir: root.join("targets") }
    }
}

impl World {
    pub fn surface(&self, p: GeoPoint) -> AncillaryRecord {
        let cell = GridSpec::ease2(Ease2Res::Km3).cell_of(p).expect("inside projection");
        self.ancillary.record_at(cell)
    }

    /// Observations of `day` in track order, with their truth.
    pub fn observations(&self, day: NaiveDate) -> Vec<SyntheticObservation> {
        let pts = simulate_tracks(&self.cfg, day);
        let day_key = day.num_days_from_ce() as u64;
        pts.par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut r = rng_for(self.cfg.seed, &[6, day_key, i as u64]);
                self.observe(p, &mut r)
            })
            .collect()
    }

    fn observe(&self, p: &TrackPoint, r: &mut ChaCha8Rng) -> SyntheticObservation {
        let anc = self.surface(p.sp);
        let surf = SurfaceState {
            vwc_kg_m2: if anc.vwc_kg_m2 >= 0.0 { anc.vwc_kg_m2 } else { 0.0 },
            elevation_std_m: if anc.elevation_std_m >= 0.0 { anc.elevation_std_m } else { 0.0 },
        };
        let sm_true = self.field.at(p.timestamp, p.sp);
        let mut obs = DdmObservation {
            timestamp: p.timestamp,
            sp: p.sp,
            ddm: Ddm::zeros(),
            ddm_snr: 0.0,
            sp_rx_gain: p.sp_rx_gain,
            incidence_deg: p.incidence_deg,
            spacecraft_id: p.spacecraft_id,
            prn: p.prn,
            rx_tx_ranges_m: p.rx_tx_ranges_m,
            quality_flags: 0,
            sample_rate_hz: p.sample_rate_hz,
        };
        let s = self.cfg.forward.synthesize(sm_true, surf, &obs, &self.cal, self.cfg.ddm_noise, r);
        obs.ddm = s.ddm;
        obs.ddm_snr = s.ddm_snr;
        if r.random::<f64>() < self.cfg.tracks.rfi_rate {
            let stripe = 20.0 * self.cfg.forward.noise_floor_w;
            let col = r.random_range(0..obs.ddm.bins[0].len());
            (0..DDM_DELAY_ROWS).for_each(|i| obs.ddm.bins[i][col] += stripe);
        }
        if r.random::<f64>() < self.cfg.tracks.l1_flag_rate {
            obs.quality_flags |= l1_flags::POOR_OVERALL_QUALITY;
        }
        if anc.water_fraction > 0.5 {
            obs.quality_flags |= l1_flags::SP_OVER_OCEAN;
        }
        SyntheticObservation { obs, sm_true }
    }

    pub fn target(&self, day: NaiveDate) -> crate::warehouse::Raster {
        synthesize_target(&self.field, &self.cfg, day)
    }

    pub fn targets(&self) -> TargetRasterStore {
        let mut store = TargetRasterStore::new();
        for day in self.cfg.days() {
            store.insert(day, self.target(day));
        }
        store
    }

    /// Warehouse samples for `day`, built exactly as ingest would.
    pub fn samples(&self, day: NaiveDate, targets: &TargetRasterStore) -> Vec<Sample> {
        let obs: Vec<DdmObservation> = self.observations(day).into_iter().map(|o| o.obs).collect();
        build_samples(&obs, &self.ancillary, targets, &self.cal)
    }

    /// Hourly 5 cm probes at random locations: truth plus Gaussian noise.
    pub fn insitu_sites(&self, n: usize, noise_std: f64) -> Vec<InSituSite> {
        let mut r = rng_for(self.cfg.seed, &[7]);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let p = GeoPoint::new(
                r.random_range(self.cfg.lat_min..=self.cfg.lat_max),
                r.random_range(self.cfg.lon_min..=self.cfg.lon_max),
            )
            .expect("box validated");
            let anc = self.surface(p);
            if !(anc.water_fraction < 0.01) {
                continue;
            }
            let series = self
                .cfg
                .days()
                .flat_map(|d| (0..24).map(move |h| day_start(d) + h as f64 * 3600.0))
                .map(|t| {
                    let e: f64 = r.sample(StandardNormal);
                    (t, (self.field.at(t, p) + noise_std * e).clamp(0.0, 1.0))
                })
                .collect();
            let id = format!("SYN{:03}", out.len() + 1);
            let lc = anc.dominant_class().unwrap_or(10);
            out.push(InSituSite::new(&id, p, "SYNTH", 5.0, series, lc).expect("valid synthetic site"));
        }
        out
    }
}

/// Writes the ancillary raster, one L1 file per satellite and day, and the
/// daily target rasters.
pub fn write_world(world: &World, files: &WorldFiles) -> Result<(), SynthError> {
    if let Some(dir) = files.ancillary.parent() {
        fs::create_dir_all(dir).map_err(|source| SynthError::Io { path: dir.to_path_buf(), source })?;
    }
    world.ancillary.raster.write(&files.ancillary)?;
    fs::create_dir_all(&files.target_dir).map_err(|source| SynthError::Io { path: files.target_dir.clone(), source })?;
    let archive = LocalDirArchive::new(&files.l1_root);
    for day in world.cfg.days() {
        let obs: Vec<DdmObservation> = world.observations(day).into_iter().map(|o| o.obs).collect();
        for sat in 1..=8u8 {
            let mine: Vec<DdmObservation> = obs.iter().filter(|o| o.spacecraft_id == sat).cloned().collect();
            if !mine.is_empty() {
                archive.write_day_file(sat, day, &mine)?;
            }
        }
        world.target(day).write(&files.target_dir.join(TargetRasterStore::file_name(day)))?;
    }
    Ok(())
}

/// Samples whose target depends on the DDM alone: fixed link geometry, no
/// surface attenuation in the forward model, and ancillary inputs drawn as
/// independent noise.
pub fn ddm_only_samples(seed: u64, n: usize, ddm_noise: f64) -> Vec<Sample> {
    let model = ForwardModel::default();
    let cal = ReflectivityCalibration::default();
    let flat = SurfaceState { vwc_kg_m2: 0.0, elevation_std_m: 0.0 };
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng_for(seed, &[8, i as u64]);
            let sp = GeoPoint::new(r.random_range(-30.0..30.0), r.random_range(-120.0..120.0)).unwrap();
            let mut lc = [0.0; LANDCOVER_CLASSES];
            lc.iter_mut().take(16).for_each(|v| *v = r.random_range(0.0..1.0));
            let total: f64 = lc.iter().sum();
            lc.iter_mut().for_each(|v| *v /= total);
            let anc = AncillaryRecord {
                elevation_m: r.random_range(0.0..2000.0),
                elevation_std_m: r.random_range(0.0..50.0),
                slope_deg: r.random_range(0.0..10.0),
                slope_std_deg: r.random_range(0.0..3.0),
                ndvi: r.random_range(0.0..0.8),
                vwc_kg_m2: r.random_range(0.0..5.0),
                water_fraction: r.random_range(0.0..0.009),
                clay_fraction: r.random_range(0.05..0.45),
                sand_fraction: r.random_range(0.1..0.5),
                landcover_frac: lc,
            };
            let sm = r.random_range(0.05..0.45);
            let mut obs = DdmObservation {
                timestamp: day_start(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()) + i as f64,
                sp,
                ddm: Ddm::zeros(),
                ddm_snr: 0.0,
                sp_rx_gain: 8.0,
                incidence_deg: r.random_range(0.0..60.0),
                spacecraft_id: r.random_range(1..=8),
                prn: r.random_range(1..=32),
                rx_tx_ranges_m: ranges_for(30.0),
                quality_flags: 0,
                sample_rate_hz: 2,
            };
            let s = model.synthesize(sm, flat, &obs, &cal, ddm_noise, &mut r);
            obs.ddm = s.ddm;
            obs.ddm_snr = s.ddm_snr;
            let (c3, c9, c36) = cell_triplet(sp).expect("inside projection");
            Sample {
                metrics: compute_ddm_metrics(&obs, &cal),
                obs,
                anc,
                cell_3km: c3,
                cell_9km: c9,
                cell_36km: c36,
                target_sm: Some(sm),
                target_flags: Some(0),
            }
        })
        .collect()
}
