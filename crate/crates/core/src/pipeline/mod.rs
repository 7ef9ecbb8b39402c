//! Orchestration: configuration, on-disk layout, the daily production loop
//! and the offline train / study / validate / report commands.
//!
//! Layout under the data root (every path is configurable):
//!
//! ```text
//! lake/        ancillary.gsr, l1/YYYY-MM-DD/*.l1.jsonl, targets/target_*.gsr, insitu.csv
//! warehouse/   CYxxx/CYxxx_YYYYMMDD_samples.nc4
//! products/    <version>/... L2 and L3 product trees
//! models/      model.gsw (+ ensemble members)
//! runs/        run reports and provenance records (JSON)
//! studies/     study results (JSON)
//! ```

pub mod cli;
mod commands;
mod daily;

pub use commands::{
    cmd_convert, cmd_report, cmd_study, cmd_synth, cmd_train, cmd_validate, ReportSummary, SynthReport, TrainReport,
    ValidationReport,
};
pub use daily::{cmd_daily, DailyRequest, DayReport, DayState, FileRecord, RunReport};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::conditioning::{
    downsample_alongtrack, filter_samples, screen_targets, split_by_window, DdmStatsMode, Feature, FilterConfig,
    FilterReport, Partitions, SplitWindows, Window,
};
use crate::geogrid::{Ease2Res, GeoPoint, GridSpec};
use crate::model::{build_network, NetworkConfig, TrainConfig};
use crate::products::GridMethod;
use crate::synthgen::WorldFiles;
use crate::timeutil::days_inclusive;
use crate::warehouse::{
    build_samples, ingest_l1_day, AncillaryRasterStore, LocalDirArchive, RasterWindow, ReflectivityCalibration, Sample,
    TargetRasterStore, WarehouseStore,
};

/// Environment variable overriding the data root.
pub const DATA_ROOT_ENV: &str = "GNSSR_DATA_ROOT";
/// Config file looked up in the data root when no path is given.
pub const DEFAULT_CONFIG_FILE: &str = "gnssr.toml";
pub const WEIGHTS_FILE: &str = "model.gsw";
pub const SOFTWARE: &str = concat!("gnssr-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] anyhow::Error),
}

impl PipelineError {
    /// Process exit code for a command that failed with this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Run(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub lake: PathBuf,
    pub warehouse: PathBuf,
    pub products: PathBuf,
    pub models: PathBuf,
    pub runs: PathBuf,
    pub studies: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            lake: "lake".into(),
            warehouse: "warehouse".into(),
            products: "products".into(),
            models: "models".into(),
            runs: "runs".into(),
            studies: "studies".into(),
        }
    }
}

/// Latitude/longitude box of the gridded products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for Region {
    fn default() -> Self {
        Self { lat_min: 25.0, lat_max: 35.0, lon_min: -105.0, lon_max: -92.0 }
    }
}

impl Region {
    /// Cells of `res` whose centers' containing box covers the region.
    pub fn window(&self, res: Ease2Res) -> Result<RasterWindow> {
        let spec = GridSpec::ease2(res);
        let cell = |lat, lon| {
            GeoPoint::new(lat, lon).and_then(|p| spec.cell_of(p)).map_err(|e| config_err(format!("region: {e}")))
        };
        let nw = cell(self.lat_max, self.lon_min)?;
        let se = cell(self.lat_min, self.lon_max)?;
        Ok(RasterWindow { row0: nw.row, col0: nw.col, rows: se.row - nw.row + 1, cols: se.col - nw.col + 1 })
    }
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid literal date")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Product version tag, `v<major>.<minor>`.
    pub version: String,
    pub backfill_days: u32,
    /// Days processed concurrently by `daily`.
    pub workers: usize,
    /// Keep every n-th sample along each track when building training sets.
    pub downsample_factor: usize,
    /// In-situ site table, relative to the lake.
    pub insitu_file: PathBuf,
    pub paths: Paths,
    pub region: Region,
    pub filter: FilterConfig,
    pub split: SplitWindows,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub gridding: GridMethod,
    pub ddm_stats: DdmStatsMode,
    pub calibration: ReflectivityCalibration,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: "v1.0".into(),
            backfill_days: 7,
            workers: 1,
            downsample_factor: 1,
            insitu_file: "insitu.csv".into(),
            paths: Paths::default(),
            region: Region::default(),
            filter: FilterConfig::default(),
            split: SplitWindows {
                train: Window::new(date(2020, 6, 1), date(2020, 6, 21)),
                dev: Window::new(date(2020, 6, 21), date(2020, 6, 26)),
                validation: Window::new(date(2020, 6, 26), date(2020, 7, 1)),
            },
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            gridding: GridMethod::Equal,
            ddm_stats: DdmStatsMode::Pooled,
            calibration: ReflectivityCalibration::default(),
        }
    }
}

/// `v<digits>.<digits>` exactly.
pub fn valid_version(v: &str) -> bool {
    let Some(rest) = v.strip_prefix('v') else { return false };
    let mut parts = rest.split('.');
    let digits = |s: Option<&str>| s.is_some_and(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()));
    digits(parts.next()) && digits(parts.next()) && parts.next().is_none()
}

fn normalized(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            c => out.push(c),
        }
    }
    out
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !valid_version(&self.version) {
            return Err(config_err(format!("version {:?} must look like v1.0", self.version)));
        }
        if self.backfill_days < 1 {
            return Err(config_err("backfill_days must be at least 1"));
        }
        if self.workers < 1 || self.downsample_factor < 1 {
            return Err(config_err("workers and downsample_factor must be at least 1"));
        }
        let p = &self.paths;
        let all = [&p.lake, &p.warehouse, &p.products, &p.models, &p.runs, &p.studies];
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if normalized(a) == normalized(b) {
                    return Err(config_err(format!("paths must be distinct: {} appears twice", a.display())));
                }
            }
        }
        let r = &self.region;
        if !(r.lat_min < r.lat_max && r.lon_min < r.lon_max) {
            return Err(config_err("region bounds must satisfy min < max"));
        }
        self.region.window(Ease2Res::Km9)?;
        self.filter.validate().map_err(config_err)?;
        self.split.validate().map_err(|e| config_err(e.to_string()))?;
        self.train.validate().map_err(|e| config_err(e.to_string()))?;
        for f in &self.network.ancillary_inputs {
            if Feature::from_name(f).is_none() {
                return Err(config_err(format!("network input {f:?} is not a known feature")));
            }
        }
        build_network::<f32>(&self.network).map_err(|e| config_err(e.to_string()))?;
        if let GridMethod::Idw { power } = self.gridding {
            if !(power.is_finite() && power > 0.0) {
                return Err(config_err(format!("IDW power {power} must be positive")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn features(&self) -> Vec<Feature> {
        self.network.ancillary_inputs.iter().filter_map(|f| Feature::from_name(f)).collect()
    }

    /// Reads TOML `text`, applies `key.path=value` overrides, validates.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = doc.try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

/// `a.b.c=value`; the value is parsed as a TOML value, falling back to a string.
fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| config_err(format!("override {spec:?} is not key=value")))?;
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| config_err(format!("override {key:?}: {p} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Absolute directories for one data root.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub root: PathBuf,
    pub lake: PathBuf,
    pub warehouse: PathBuf,
    pub products: PathBuf,
    pub models: PathBuf,
    pub runs: PathBuf,
    pub studies: PathBuf,
    pub insitu: PathBuf,
}

impl Layout {
    pub fn new(root: &Path, cfg: &PipelineConfig) -> Self {
        let j = |p: &Path| root.join(p);
        let lake = j(&cfg.paths.lake);
        Self {
            root: root.to_path_buf(),
            insitu: lake.join(&cfg.insitu_file),
            lake,
            warehouse: j(&cfg.paths.warehouse),
            products: j(&cfg.paths.products),
            models: j(&cfg.paths.models),
            runs: j(&cfg.paths.runs),
            studies: j(&cfg.paths.studies),
        }
    }

    pub fn world_files(&self) -> WorldFiles {
        WorldFiles::under(&self.lake)
    }

    pub fn weights(&self) -> PathBuf {
        self.models.join(WEIGHTS_FILE)
    }
}

/// Loads the config (`path`, else `<root>/gnssr.toml` when present, else
/// defaults) with overrides applied.
pub fn load_config(root: &Path, path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig> {
    let file = path.map(Path::to_path_buf).unwrap_or_else(|| root.join(DEFAULT_CONFIG_FILE));
    let text = if file.exists() {
        fs::read_to_string(&file).map_err(|e| config_err(format!("{}: {e}", file.display())))?
    } else if path.is_some() {
        return Err(config_err(format!("config file {} not found", file.display())));
    } else {
        String::new()
    };
    PipelineConfig::from_toml_with(&text, overrides)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    use anyhow::Context;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    crate::container::write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Static inputs every day of processing shares.
pub(crate) struct LakeInputs {
    pub ancillary: AncillaryRasterStore,
    pub archive: LocalDirArchive,
    pub target_dir: PathBuf,
}

impl LakeInputs {
    pub fn open(layout: &Layout) -> anyhow::Result<Self> {
        use anyhow::Context;
        let files = layout.world_files();
        let ancillary = AncillaryRasterStore::open(&files.ancillary)
            .with_context(|| format!("opening ancillary raster {}", files.ancillary.display()))?;
        Ok(Self { ancillary, archive: LocalDirArchive::new(files.l1_root), target_dir: files.target_dir })
    }

    pub fn targets_for(&self, day: NaiveDate) -> anyhow::Result<TargetRasterStore> {
        use anyhow::Context;
        TargetRasterStore::load_dir(&self.target_dir, day, day).with_context(|| format!("loading target for {day}"))
    }
}

/// Ingests one day's L1 files, joins ancillary context and the day's target,
/// and stores the samples in the warehouse (one file per satellite).
pub(crate) fn ingest_day(
    cfg: &PipelineConfig,
    lake: &LakeInputs,
    warehouse: &WarehouseStore,
    day: NaiveDate,
) -> anyhow::Result<BTreeMap<u8, (Vec<Sample>, crate::container::WriteOutcome)>> {
    use anyhow::Context;
    let ingested = ingest_l1_day(day, &lake.archive).with_context(|| format!("ingesting L1 for {day}"))?;
    let targets = lake.targets_for(day)?;
    let mut out = BTreeMap::new();
    for sat in ingested.satellites() {
        let samples = build_samples(&ingested.for_satellite(sat), &lake.ancillary, &targets, &cfg.calibration);
        let outcome = warehouse.write_day(sat, day, &samples).with_context(|| format!("warehouse write {sat} {day}"))?;
        out.insert(sat, (samples, outcome));
    }
    Ok(out)
}

/// Training, development and validation sets with their screening history.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub parts: Partitions,
    pub raw: usize,
    pub targets_stripped: usize,
    pub filter: FilterReport,
    pub without_target: usize,
}

/// Shared dataset preparation: ingest → target screening → observation
/// filters → drop untargeted → along-track downsampling → split by window.
pub fn prepare_dataset(cfg: &PipelineConfig, layout: &Layout) -> Result<Prepared> {
    let lake = LakeInputs::open(layout)?;
    let warehouse = WarehouseStore::new(&layout.warehouse);
    let s = &cfg.split;
    let first = s.train.start.min(s.dev.start).min(s.validation.start);
    let last = s.train.end.max(s.dev.end).max(s.validation.end).pred_opt().expect("date in range");
    let mut samples = Vec::new();
    for day in days_inclusive(first, last) {
        for (_, (v, _)) in ingest_day(cfg, &lake, &warehouse, day)? {
            samples.extend(v);
        }
    }
    let raw = samples.len();
    let targets_stripped = screen_targets(&mut samples);
    let (mut kept, filter) = filter_samples(samples, &cfg.filter);
    let before = kept.len();
    kept.retain(|s| s.target_sm.is_some());
    let without_target = before - kept.len();
    let kept = downsample_alongtrack(kept, cfg.downsample_factor);
    Ok(Prepared { parts: split_by_window(kept, &cfg.split), raw, targets_stripped, filter, without_target })
}
