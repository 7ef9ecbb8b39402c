//! Input normalization statistics and their application.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::is_missing;
use crate::warehouse::{Sample, DDM_BINS};

/// Variance floor; applied relative to the squared mean so inputs carried in
/// small physical units (watts) are not mistaken for constants.
pub const VARIANCE_EPS: f64 = 1e-12;

const CHUNK: usize = 4096;

/// Scalar model input. Land-cover classes are 1-based IGBP ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Feature {
    Lat,
    Lon,
    Incidence,
    SpRxGain,
    DdmSnr,
    Reflectivity,
    PeakPower,
    Elevation,
    ElevationStd,
    Slope,
    SlopeStd,
    Ndvi,
    Vwc,
    WaterFraction,
    Clay,
    Sand,
    Landcover(u8),
}

pub const ALL_FEATURES: [Feature; 33] = {
    use Feature::*;
    [
        Lat,
        Lon,
        Incidence,
        SpRxGain,
        DdmSnr,
        Reflectivity,
        PeakPower,
        Elevation,
        ElevationStd,
        Slope,
        SlopeStd,
        Ndvi,
        Vwc,
        WaterFraction,
        Clay,
        Sand,
        Landcover(1),
        Landcover(2),
        Landcover(3),
        Landcover(4),
        Landcover(5),
        Landcover(6),
        Landcover(7),
        Landcover(8),
        Landcover(9),
        Landcover(10),
        Landcover(11),
        Landcover(12),
        Landcover(13),
        Landcover(14),
        Landcover(15),
        Landcover(16),
        Landcover(17),
    ]
};

impl Feature {
    pub fn name(self) -> String {
        match self {
            Feature::Lat => "sp_lat".into(),
            Feature::Lon => "sp_lon".into(),
            Feature::Incidence => "sp_inc_angle".into(),
            Feature::SpRxGain => "sp_rx_gain".into(),
            Feature::DdmSnr => "ddm_snr".into(),
            Feature::Reflectivity => "reflectivity".into(),
            Feature::PeakPower => "peak_power".into(),
            Feature::Elevation => "elevation".into(),
            Feature::ElevationStd => "elevation_std".into(),
            Feature::Slope => "slope".into(),
            Feature::SlopeStd => "slope_std".into(),
            Feature::Ndvi => "ndvi".into(),
            Feature::Vwc => "vwc".into(),
            Feature::WaterFraction => "water_fraction".into(),
            Feature::Clay => "clay_fraction".into(),
            Feature::Sand => "sand_fraction".into(),
            Feature::Landcover(k) => format!("landcover_{k:02}"),
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        if let Some(k) = s.strip_prefix("landcover_") {
            return k.parse::<u8>().ok().filter(|k| (1..=17).contains(k)).map(Feature::Landcover);
        }
        ALL_FEATURES.iter().copied().find(|f| f.name() == s)
    }

    /// Raw value for this input, possibly the missing sentinel.
    pub fn value(self, s: &Sample) -> f64 {
        let a = &s.anc;
        match self {
            Feature::Lat => s.obs.sp.lat(),
            Feature::Lon => s.obs.sp.lon(),
            Feature::Incidence => s.obs.incidence_deg,
            Feature::SpRxGain => s.obs.sp_rx_gain,
            Feature::DdmSnr => s.obs.ddm_snr,
            Feature::Reflectivity => s.metrics.reflectivity_db,
            Feature::PeakPower => s.metrics.peak_power_w,
            Feature::Elevation => a.elevation_m,
            Feature::ElevationStd => a.elevation_std_m,
            Feature::Slope => a.slope_deg,
            Feature::SlopeStd => a.slope_std_deg,
            Feature::Ndvi => a.ndvi,
            Feature::Vwc => a.vwc_kg_m2,
            Feature::WaterFraction => a.water_fraction,
            Feature::Clay => a.clay_fraction,
            Feature::Sand => a.sand_fraction,
            Feature::Landcover(k) => a.landcover_frac[k as usize - 1],
        }
    }

    /// Writes `v` back into the sample field this input reads.
    pub fn set_value(self, s: &mut Sample, v: f64) {
        let a = &mut s.anc;
        match self {
            Feature::Lat | Feature::Lon => {
                let (lat, lon) = match self {
                    Feature::Lat => (v.clamp(-90.0, 90.0), s.obs.sp.lon()),
                    _ => (s.obs.sp.lat(), v),
                };
                s.obs.sp = crate::geogrid::GeoPoint::new(lat, lon).expect("clamped point is valid");
            }
            Feature::Incidence => s.obs.incidence_deg = v,
            Feature::SpRxGain => s.obs.sp_rx_gain = v,
            Feature::DdmSnr => s.obs.ddm_snr = v,
            Feature::Reflectivity => s.metrics.reflectivity_db = v,
            Feature::PeakPower => s.metrics.peak_power_w = v,
            Feature::Elevation => a.elevation_m = v,
            Feature::ElevationStd => a.elevation_std_m = v,
            Feature::Slope => a.slope_deg = v,
            Feature::SlopeStd => a.slope_std_deg = v,
            Feature::Ndvi => a.ndvi = v,
            Feature::Vwc => a.vwc_kg_m2 = v,
            Feature::WaterFraction => a.water_fraction = v,
            Feature::Clay => a.clay_fraction = v,
            Feature::Sand => a.sand_fraction = v,
            Feature::Landcover(k) => a.landcover_frac[k as usize - 1] = v,
        }
    }

    /// Bounded inputs map to [0, 1]; the rest are standardized.
    pub fn default_kind_is_minmax(self) -> bool {
        matches!(
            self,
            Feature::Lat
                | Feature::Lon
                | Feature::Incidence
                | Feature::Ndvi
                | Feature::WaterFraction
                | Feature::Clay
                | Feature::Sand
                | Feature::Landcover(_)
        )
    }

    /// Scalar inputs computed from the DDM itself.
    pub fn is_ddm_derived(self) -> bool {
        matches!(self, Feature::DdmSnr | Feature::Reflectivity | Feature::PeakPower)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl From<Feature> for String {
    fn from(f: Feature) -> String {
        f.name()
    }
}

impl TryFrom<String> for Feature {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        Feature::from_name(&s).ok_or_else(|| format!("unknown feature {s:?}"))
    }
}

/// Mergeable first/second moments plus extremes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for Moments {
    fn default() -> Self {
        Self { n: 0, mean: 0.0, m2: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY }
    }
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64 * o.n as f64 / n as f64);
        self.n = n;
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0)
        }
    }
}

fn variance_floor(mean: f64) -> f64 {
    if mean != 0.0 {
        VARIANCE_EPS * mean * mean
    } else {
        VARIANCE_EPS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DdmStatsMode {
    /// One mean/variance over all 187 bins.
    #[default]
    Pooled,
    PerBin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdmStats {
    pub count: u64,
    /// Length 1 (pooled) or 187 (per bin).
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformKind {
    MinMax { min: f64, max: f64 },
    Standardize { mean: f64, std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub feature: Feature,
    #[serde(flatten)]
    pub kind: TransformKind,
    /// True when the range or variance hit the floor.
    pub clamped: bool,
}

impl FeatureTransform {
    pub fn apply(&self, x: f64) -> f64 {
        match self.kind {
            TransformKind::MinMax { min, max } => (x - min) / (max - min),
            TransformKind::Standardize { mean, std } => (x - mean) / std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub ddm_mode: DdmStatsMode,
    pub ddm: BTreeMap<u8, DdmStats>,
    pub features: Vec<FeatureTransform>,
    pub sample_count: u64,
}

impl NormStats {
    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.feature.name()).collect()
    }

    pub fn any_clamped(&self) -> bool {
        self.features.iter().any(|f| f.clamped) || self.ddm.values().any(|d| d.clamped)
    }
}

/// Model-ready inputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    /// Standardized 17×11 DDM, row-major.
    pub ddm: Vec<f64>,
    /// Normalized scalar inputs in `NormStats::features` order.
    pub ancillary: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum NormError {
    #[error("no training samples to fit normalization")]
    Empty,
    #[error("missing value for input {feature}")]
    MissingInput { feature: String },
    #[error("no DDM statistics for spacecraft {0}")]
    UnknownSpacecraft(u8),
}

#[derive(Clone)]
struct Acc {
    ddm: BTreeMap<u8, Vec<Moments>>,
    feats: Vec<Moments>,
}

impl Acc {
    fn new(nf: usize) -> Self {
        Self { ddm: BTreeMap::new(), feats: vec![Moments::default(); nf] }
    }

    fn merge(&mut self, o: &Acc) {
        for (sc, m) in &o.ddm {
            let slot = self.ddm.entry(*sc).or_insert_with(|| vec![Moments::default(); m.len()]);
            slot.iter_mut().zip(m).for_each(|(a, b)| a.merge(b));
        }
        self.feats.iter_mut().zip(&o.feats).for_each(|(a, b)| a.merge(b));
    }
}

/// Fits per-spacecraft DDM statistics and per-input transforms on training
/// samples. Chunks are reduced in a fixed order so the result does not depend
/// on thread scheduling.
pub fn fit_normalization(samples: &[Sample], features: &[Feature], mode: DdmStatsMode) -> Result<NormStats, NormError> {
    if samples.is_empty() {
        return Err(NormError::Empty);
    }
    let bins = match mode {
        DdmStatsMode::Pooled => 1,
        DdmStatsMode::PerBin => DDM_BINS,
    };
    let partials: Vec<Result<Acc, NormError>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Acc::new(features.len());
            for s in chunk {
                let m = acc.ddm.entry(s.obs.spacecraft_id).or_insert_with(|| vec![Moments::default(); bins]);
                for (i, v) in s.obs.ddm.iter().enumerate() {
                    m[i % bins].push(v);
                }
                for (f, m) in features.iter().zip(acc.feats.iter_mut()) {
                    let v = f.value(s);
                    if is_missing(v) {
                        return Err(NormError::MissingInput { feature: f.name() });
                    }
                    m.push(v);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = Acc::new(features.len());
    for p in partials {
        total.merge(&p?);
    }
    let ddm = total
        .ddm
        .into_iter()
        .map(|(sc, ms)| {
            let mut clamped = false;
            let mean: Vec<f64> = ms.iter().map(|m| m.mean).collect();
            let var = ms
                .iter()
                .map(|m| {
                    let floor = variance_floor(m.mean);
                    let v = m.variance();
                    if v < floor {
                        clamped = true;
                        floor
                    } else {
                        v
                    }
                })
                .collect();
            (sc, DdmStats { count: ms[0].n / (DDM_BINS / bins) as u64, mean, var, clamped })
        })
        .collect();
    let features = features
        .iter()
        .zip(&total.feats)
        .map(|(f, m)| {
            if f.default_kind_is_minmax() {
                let range = m.max - m.min;
                let scale = m.max.abs().max(m.min.abs());
                let floor = if scale > 0.0 { VARIANCE_EPS.sqrt() * scale } else { VARIANCE_EPS.sqrt() };
                let clamped = range < floor;
                let max = if clamped { m.min + floor } else { m.max };
                FeatureTransform { feature: *f, kind: TransformKind::MinMax { min: m.min, max }, clamped }
            } else {
                let floor = variance_floor(m.mean);
                let v = m.variance();
                let clamped = v < floor;
                let std = if clamped { floor.sqrt() } else { v.sqrt() };
                FeatureTransform { feature: *f, kind: TransformKind::Standardize { mean: m.mean, std }, clamped }
            }
        })
        .collect();
    Ok(NormStats { ddm_mode: mode, ddm, features, sample_count: samples.len() as u64 })
}

pub fn apply_normalization(s: &Sample, stats: &NormStats) -> Result<FeatureBundle, NormError> {
    let d = stats.ddm.get(&s.obs.spacecraft_id).ok_or(NormError::UnknownSpacecraft(s.obs.spacecraft_id))?;
    let k = d.mean.len();
    let ddm = s
        .obs
        .ddm
        .iter()
        .enumerate()
        .map(|(i, v)| (v - d.mean[i % k]) / d.var[i % k].sqrt())
        .collect();
    let ancillary = stats
        .features
        .iter()
        .map(|t| {
            let v = t.feature.value(s);
            if is_missing(v) {
                Err(NormError::MissingInput { feature: t.feature.name() })
            } else {
                Ok(t.apply(v))
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(FeatureBundle { ddm, ancillary })
}
