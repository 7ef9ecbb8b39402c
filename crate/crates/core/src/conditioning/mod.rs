//! Quality control, target screening, temporal splits, along-track
//! decimation and input normalization.

mod normalize;
mod split;

pub use normalize::{
    apply_normalization, fit_normalization, DdmStats, DdmStatsMode, Feature, FeatureBundle, FeatureTransform,
    Moments, NormError, NormStats, TransformKind, ALL_FEATURES, VARIANCE_EPS,
};
pub use split::{downsample_alongtrack, split_by_window, Partitions, SplitWindows, Window, WindowError, TRACK_GAP_S};

use serde::{Deserialize, Serialize};

use crate::is_missing;
use crate::warehouse::{Ddm, Sample, DDM_DELAY_ROWS, DDM_DOPPLER_COLS};

/// Source flag bits of the L1 quality word.
pub mod l1_flags {
    pub const POOR_OVERALL_QUALITY: u32 = 1 << 0;
    pub const S_BAND_POWERED_UP: u32 = 1 << 1;
    pub const SMALL_SC_ATTITUDE_ERR: u32 = 1 << 2;
    pub const LARGE_SC_ATTITUDE_ERR: u32 = 1 << 3;
    pub const BLACK_BODY_DDM: u32 = 1 << 4;
    pub const DDMI_RECONFIGURED: u32 = 1 << 5;
    pub const SPACECRAFT_NUM_UNKNOWN: u32 = 1 << 6;
    pub const SP_OVER_OCEAN: u32 = 1 << 7;
    pub const LOW_CONFIDENCE_GPS_EIRP: u32 = 1 << 8;
    pub const NAVIGATION_ERROR: u32 = 1 << 9;
    pub const DIRECT_SIGNAL_IN_DDM: u32 = 1 << 10;

    /// Flags that remove an observation from retrieval by default.
    pub const DEFAULT_MASK: u32 = POOR_OVERALL_QUALITY
        | S_BAND_POWERED_UP
        | LARGE_SC_ATTITUDE_ERR
        | BLACK_BODY_DDM
        | DDMI_RECONFIGURED
        | SPACECRAFT_NUM_UNKNOWN
        | SP_OVER_OCEAN
        | NAVIGATION_ERROR
        | DIRECT_SIGNAL_IN_DDM;
}

/// Target retrieval flag bits.
pub mod target_flags {
    pub const UNSUCCESSFUL: u32 = 1 << 0;
    pub const NOT_RECOMMENDED: u32 = 1 << 1;
    pub const PRECIPITATION: u32 = 1 << 2;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_ddm_snr_db: f64,
    pub min_sp_rx_gain_db: f64,
    pub max_incidence_deg: f64,
    pub max_water_fraction: f64,
    pub max_elevation_m: f64,
    pub rfi_column_factor: f64,
    pub source_flag_mask: u32,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_ddm_snr_db: 1.0,
            min_sp_rx_gain_db: 1.0,
            max_incidence_deg: 65.0,
            max_water_fraction: 0.01,
            max_elevation_m: 3000.0,
            rfi_column_factor: 5.0,
            source_flag_mask: l1_flags::DEFAULT_MASK,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), String> {
        let vals = [
            self.min_ddm_snr_db,
            self.min_sp_rx_gain_db,
            self.max_incidence_deg,
            self.max_water_fraction,
            self.max_elevation_m,
            self.rfi_column_factor,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err("filter thresholds must be finite".into());
        }
        if self.rfi_column_factor <= 1.0 {
            return Err(format!("rfi_column_factor {} must exceed 1", self.rfi_column_factor));
        }
        Ok(())
    }
}

/// Rules in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    SourceFlags,
    Snr,
    Gain,
    Incidence,
    Rfi,
    Water,
    Elevation,
    MissingAncillary,
}

impl RejectReason {
    pub const ALL: [RejectReason; 8] = [
        RejectReason::SourceFlags,
        RejectReason::Snr,
        RejectReason::Gain,
        RejectReason::Incidence,
        RejectReason::Rfi,
        RejectReason::Water,
        RejectReason::Elevation,
        RejectReason::MissingAncillary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RejectReason::SourceFlags => "source_flags",
            RejectReason::Snr => "snr",
            RejectReason::Gain => "gain",
            RejectReason::Incidence => "incidence",
            RejectReason::Rfi => "rfi",
            RejectReason::Water => "water",
            RejectReason::Elevation => "elevation",
            RejectReason::MissingAncillary => "missing_ancillary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterVerdict {
    Keep,
    Reject(RejectReason),
}

/// True iff some Doppler column lies entirely above `factor * noise_floor`.
/// With a zero noise floor any strictly positive column counts.
pub fn detect_rfi(ddm: &Ddm, noise_floor: f64, factor: f64) -> bool {
    let thr = factor * noise_floor;
    (0..DDM_DOPPLER_COLS).any(|c| (0..DDM_DELAY_ROWS).all(|r| ddm.bins[r][c] > thr))
}

/// First failing rule, or keep. Order: source flags, SNR, gain, incidence,
/// RFI, water, elevation, then completeness of the remaining model inputs.
pub fn apply_observation_filters(s: &Sample, cfg: &FilterConfig) -> FilterVerdict {
    use FilterVerdict::Reject;
    let o = &s.obs;
    if o.quality_flags & cfg.source_flag_mask != 0 {
        return Reject(RejectReason::SourceFlags);
    }
    if !(o.ddm_snr > cfg.min_ddm_snr_db) {
        return Reject(RejectReason::Snr);
    }
    if !(o.sp_rx_gain > cfg.min_sp_rx_gain_db) {
        return Reject(RejectReason::Gain);
    }
    if !(o.incidence_deg <= cfg.max_incidence_deg) {
        return Reject(RejectReason::Incidence);
    }
    if detect_rfi(&o.ddm, s.metrics.noise_floor_w, cfg.rfi_column_factor) {
        return Reject(RejectReason::Rfi);
    }
    let water = s.anc.water_fraction;
    if is_missing(water) {
        return Reject(RejectReason::MissingAncillary);
    }
    if !(water < cfg.max_water_fraction) {
        return Reject(RejectReason::Water);
    }
    let elev = s.anc.elevation_m;
    if is_missing(elev) {
        return Reject(RejectReason::MissingAncillary);
    }
    if elev > cfg.max_elevation_m {
        return Reject(RejectReason::Elevation);
    }
    if !s.anc.is_complete() || is_missing(s.metrics.reflectivity_db) {
        return Reject(RejectReason::MissingAncillary);
    }
    FilterVerdict::Keep
}

/// Attrition table with first-failing-rule attribution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total_in: usize,
    pub kept: usize,
    pub rejected: std::collections::BTreeMap<RejectReason, usize>,
}

impl FilterReport {
    pub fn record(&mut self, v: FilterVerdict) {
        self.total_in += 1;
        match v {
            FilterVerdict::Keep => self.kept += 1,
            FilterVerdict::Reject(r) => *self.rejected.entry(r).or_default() += 1,
        }
    }

    pub fn rejected_by(&self, r: RejectReason) -> usize {
        self.rejected.get(&r).copied().unwrap_or(0)
    }

    pub fn fraction(&self, r: RejectReason) -> f64 {
        if self.total_in == 0 {
            0.0
        } else {
            self.rejected_by(r) as f64 / self.total_in as f64
        }
    }

    pub fn balanced(&self) -> bool {
        self.kept + self.rejected.values().sum::<usize>() == self.total_in
    }

    pub fn merge(&mut self, other: &FilterReport) {
        self.total_in += other.total_in;
        self.kept += other.kept;
        for (r, n) in &other.rejected {
            *self.rejected.entry(*r).or_default() += n;
        }
    }
}

/// Runs the filter chain, returning survivors in input order.
pub fn filter_samples(samples: Vec<Sample>, cfg: &FilterConfig) -> (Vec<Sample>, FilterReport) {
    let mut report = FilterReport::default();
    let kept = samples
        .into_iter()
        .filter(|s| {
            let v = apply_observation_filters(s, cfg);
            report.record(v);
            v == FilterVerdict::Keep
        })
        .collect();
    (kept, report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetStripReason {
    Unsuccessful,
    Precipitation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetVerdict {
    Keep,
    Strip(TargetStripReason),
    /// No target attached.
    Absent,
}

/// Decides whether the attached target is usable for training. The
/// not-recommended flag alone is retained.
pub fn apply_target_filters(s: &Sample) -> TargetVerdict {
    if s.target_sm.is_none() {
        return TargetVerdict::Absent;
    }
    let f = s.target_flags.unwrap_or(0);
    if f & target_flags::UNSUCCESSFUL != 0 {
        TargetVerdict::Strip(TargetStripReason::Unsuccessful)
    } else if f & target_flags::PRECIPITATION != 0 {
        TargetVerdict::Strip(TargetStripReason::Precipitation)
    } else {
        TargetVerdict::Keep
    }
}

/// Applies [`apply_target_filters`] in place, removing stripped targets.
pub fn screen_targets(samples: &mut [Sample]) -> usize {
    let mut stripped = 0;
    for s in samples.iter_mut() {
        if let TargetVerdict::Strip(_) = apply_target_filters(s) {
            s.target_sm = None;
            s.target_flags = None;
            stripped += 1;
        }
    }
    stripped
}
