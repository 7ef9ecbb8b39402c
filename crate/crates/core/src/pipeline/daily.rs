//! The daily production loop: ingest → samples → filter → predict → L2 → L3.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{config_err, ingest_day, write_json, LakeInputs, Layout, PipelineConfig, PipelineError, Result, SOFTWARE};
use crate::container::WriteOutcome;
use crate::geogrid::{Ease2Res, GridSpec};
use crate::model::{config_hash, load_weights};
use crate::products::{
    daily_window, generate_l2_day, grid_l3, hourly_windows, l3_path, write_l3, Cadence, CoastIndex, RetrievalContext,
    WriteMode,
};
use crate::timeutil::days_inclusive;
use crate::warehouse::WarehouseStore;
use crate::Network32;

/// Inclusive day range. `as_of` (default `end`) anchors the backfill window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DailyRequest {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub as_of: Option<NaiveDate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayState {
    Processed,
    /// No L1 files for the day.
    NoData,
    /// Older than the backfill window and already complete; left untouched.
    Frozen,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the products (or warehouse) root.
    pub path: String,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReport {
    pub day: NaiveDate,
    pub state: DayState,
    pub in_backfill_window: bool,
    pub satellites: Vec<u8>,
    pub samples: usize,
    pub retrievals: usize,
    pub warehouse: Vec<FileRecord>,
    pub products: Vec<FileRecord>,
    pub error: Option<String>,
}

impl DayReport {
    fn new(day: NaiveDate, state: DayState, in_backfill_window: bool) -> Self {
        Self {
            day,
            state,
            in_backfill_window,
            satellites: vec![],
            samples: 0,
            retrievals: 0,
            warehouse: vec![],
            products: vec![],
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub software: String,
    pub config_hash: String,
    pub weights_sha256: String,
    pub model_config_hash: String,
    pub version: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub as_of: NaiveDate,
    pub days: Vec<DayReport>,
}

impl RunReport {
    pub fn failed_days(&self) -> usize {
        self.days.iter().filter(|d| d.state == DayState::Failed).count()
    }

    /// 0 when every day succeeded, 1 when some failed.
    pub fn exit_code(&self) -> u8 {
        u8::from(self.failed_days() > 0)
    }

    /// Product and warehouse files created or rewritten by this run.
    pub fn files_written(&self) -> usize {
        self.days
            .iter()
            .flat_map(|d| d.products.iter().chain(&d.warehouse))
            .filter(|f| f.outcome != outcome_name(WriteOutcome::Unchanged))
            .count()
    }
}

fn outcome_name(o: WriteOutcome) -> String {
    match o {
        WriteOutcome::Created => "created",
        WriteOutcome::Rewritten => "rewritten",
        WriteOutcome::Unchanged => "unchanged",
    }
    .into()
}

fn rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

struct DayContext<'a> {
    cfg: &'a PipelineConfig,
    layout: &'a Layout,
    lake: LakeInputs,
    warehouse: WarehouseStore,
    net: Network32,
    ctx: RetrievalContext,
    attrs: BTreeMap<String, String>,
}

impl DayContext<'_> {
    fn run(&self, day: NaiveDate, in_window: bool) -> DayReport {
        let daily_l3 = self.layout.products.join(l3_path(&self.cfg.version, Cadence::Daily, day.and_hms_opt(0, 0, 0).unwrap()));
        if !in_window && daily_l3.exists() {
            return DayReport::new(day, DayState::Frozen, false);
        }
        let mut rep = DayReport::new(day, DayState::Processed, in_window);
        if let Err(e) = self.process(day, &mut rep) {
            rep.state = DayState::Failed;
            rep.error = Some(format!("{e:#}"));
        }
        rep
    }

    fn process(&self, day: NaiveDate, rep: &mut DayReport) -> anyhow::Result<()> {
        let ingested = ingest_day(self.cfg, &self.lake, &self.warehouse, day)?;
        if ingested.is_empty() {
            rep.state = DayState::NoData;
            return Ok(());
        }
        for (sat, (samples, outcome)) in &ingested {
            rep.satellites.push(*sat);
            rep.samples += samples.len();
            rep.warehouse.push(FileRecord {
                path: rel(&self.layout.warehouse, &self.warehouse.path(*sat, day)),
                outcome: outcome_name(*outcome),
            });
        }
        let root = &self.layout.products;
        let l2 = generate_l2_day(&self.net, &self.warehouse, day, &self.ctx, &self.cfg.version, root, WriteMode::Backfill, &self.attrs)
            .with_context(|| format!("L2 products for {day}"))?;
        let mut records = Vec::new();
        for out in l2 {
            rep.products.push(FileRecord { path: rel(root, &out.path), outcome: outcome_name(out.outcome) });
            records.extend(out.records);
        }
        rep.retrievals = records.len();
        let spec = GridSpec::ease2(Ease2Res::Km9);
        let region = self.cfg.region.window(Ease2Res::Km9).map_err(|e| anyhow::anyhow!("{e}"))?;
        // The daily file goes last: its presence marks the day complete.
        let windows = hourly_windows(day).into_iter().map(|w| (Cadence::Hourly, w)).chain([(Cadence::Daily, daily_window(day))]);
        for (cadence, w) in windows {
            let grid = grid_l3(&records, w, &spec, region, self.cfg.gridding);
            let (path, outcome) = write_l3(&grid, cadence, &self.cfg.version, root, WriteMode::Backfill, &self.attrs)
                .with_context(|| format!("L3 product for {day}"))?;
            rep.products.push(FileRecord { path: rel(root, &path), outcome: outcome_name(outcome) });
        }
        Ok(())
    }
}

/// Runs the daily loop over `[start, end]`. Days are independent: one
/// failing day is reported and the rest continue. Days inside the backfill
/// window are always reprocessed (late targets refresh the warehouse);
/// older complete days are skipped. Writes that would not change a file's
/// bytes leave it untouched.
pub fn cmd_daily(cfg: &PipelineConfig, layout: &Layout, req: DailyRequest) -> Result<RunReport> {
    let as_of = req.as_of.unwrap_or(req.end);
    let mut report = RunReport {
        software: SOFTWARE.into(),
        config_hash: cfg.hash(),
        weights_sha256: String::new(),
        model_config_hash: String::new(),
        version: cfg.version.clone(),
        start: req.start,
        end: req.end,
        as_of,
        days: vec![],
    };
    if req.start > req.end {
        return Ok(report);
    }
    let weights = load_weights::<f32>(&layout.weights())
        .map_err(|e| config_err(format!("model weights {}: {e}", layout.weights().display())))?;
    let norm = weights.metadata.norm.clone().ok_or_else(|| config_err("weights carry no normalization statistics"))?;
    let net = weights.to_network().map_err(|e| config_err(e.to_string()))?;
    report.weights_sha256 = net.weights_checksum();
    report.model_config_hash = config_hash(net.config());
    let lake = LakeInputs::open(layout)?;
    let coast = CoastIndex::from_raster(&lake.ancillary.raster);
    let attrs = BTreeMap::from([
        ("config_hash".to_string(), report.config_hash.clone()),
        ("weights_sha256".to_string(), report.weights_sha256.clone()),
        ("model_config_hash".to_string(), report.model_config_hash.clone()),
        ("software".to_string(), SOFTWARE.to_string()),
    ]);
    let dc = DayContext {
        cfg,
        layout,
        lake,
        warehouse: WarehouseStore::new(&layout.warehouse),
        net,
        ctx: RetrievalContext { filter: cfg.filter.clone(), norm, coast },
        attrs,
    };
    let window_start = as_of - Duration::days(cfg.backfill_days as i64 - 1);
    let days: Vec<NaiveDate> = days_inclusive(req.start, req.end).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Run(anyhow::anyhow!("worker pool: {e}")))?;
    report.days = pool.install(|| days.par_iter().map(|d| dc.run(*d, *d >= window_start)).collect());
    let name = format!("daily_{}_{}.json", req.start.format("%Y%m%d"), req.end.format("%Y%m%d"));
    write_json(&layout.runs.join(name), &report)?;
    Ok(report)
}
