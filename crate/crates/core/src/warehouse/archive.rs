//! Observation archives and the per-(satellite, day) L1 file format.
//!
//! An L1 file is UTF-8 JSON lines: a header object
//! `{"format":"gnssr-l1","version":1,"satellite":3,"date":"2022-05-18"}`
//! followed by one [`DdmObservation`] per line. A line that fails to parse or
//! violates the record invariants is skipped and counted.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::Mutex;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::DdmObservation;

const FORMAT_TAG: &str = "gnssr-l1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("archive has no file {0}")]
    NotFound(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot list archive for {day}: {source}")]
    Listing { day: NaiveDate, source: ArchiveError },
    #[error("unreadable L1 file {file}: {reason}")]
    Unreadable { file: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ArchiveFile {
    pub name: String,
    pub satellite: u8,
}

/// Source of per-satellite daily L1 files.
pub trait ObservationArchive: Sync {
    fn list_day(&self, day: NaiveDate) -> Result<Vec<ArchiveFile>, ArchiveError>;
    fn fetch(&self, day: NaiveDate, file: &ArchiveFile) -> Result<Vec<u8>, ArchiveError>;
}

/// `CY003` style satellite label.
pub fn satellite_label(sat: u8) -> String {
    format!("CY{sat:03}")
}

pub fn l1_file_name(sat: u8, day: NaiveDate) -> String {
    format!("{}_{}.l1.jsonl", satellite_label(sat), day.format("%Y%m%d"))
}

fn parse_file_name(name: &str) -> Option<u8> {
    let rest = name.strip_prefix("CY")?;
    let sat: u8 = rest.get(..3)?.parse().ok()?;
    name.ends_with(".l1.jsonl").then_some(sat)
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    format: String,
    version: u32,
    satellite: u8,
    date: NaiveDate,
}

pub fn encode_l1_file(sat: u8, day: NaiveDate, obs: &[DdmObservation]) -> Vec<u8> {
    let header = FileHeader { format: FORMAT_TAG.into(), version: 1, satellite: sat, date: day };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for o in obs {
        serde_json::to_writer(&mut out, o).expect("observation serializes");
        out.push(b'\n');
    }
    out
}

/// Parses a file; returns `(satellite, observations, skipped_records)`.
pub fn decode_l1_file(name: &str, bytes: &[u8]) -> Result<(u8, Vec<DdmObservation>, usize), IngestError> {
    let unreadable = |reason: String| IngestError::Unreadable { file: name.to_string(), reason };
    let text = std::str::from_utf8(bytes).map_err(|e| unreadable(e.to_string()))?;
    let mut lines = text.lines();
    let header: FileHeader = lines
        .next()
        .ok_or_else(|| unreadable("empty file".into()))
        .and_then(|l| serde_json::from_str(l).map_err(|e| unreadable(format!("bad header: {e}"))))?;
    if header.format != FORMAT_TAG || header.version != 1 {
        return Err(unreadable(format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut obs = Vec::new();
    let mut skipped = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<DdmObservation>(line) {
            Ok(o) if o.validate().is_ok() && o.spacecraft_id == header.satellite => obs.push(o),
            _ => skipped += 1,
        }
    }
    Ok((header.satellite, obs, skipped))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileIngestReport {
    pub name: String,
    pub satellite: u8,
    pub records: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestedDay {
    pub day: NaiveDate,
    /// All observations, file by file in archive listing order.
    pub observations: Vec<DdmObservation>,
    pub files: Vec<FileIngestReport>,
}

impl IngestedDay {
    pub fn skipped(&self) -> usize {
        self.files.iter().map(|f| f.skipped).sum()
    }

    pub fn satellites(&self) -> Vec<u8> {
        let mut s: Vec<u8> = self.files.iter().map(|f| f.satellite).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn for_satellite(&self, sat: u8) -> Vec<DdmObservation> {
        self.observations.iter().filter(|o| o.spacecraft_id == sat).cloned().collect()
    }
}

/// Downloads (or reads) and parses every L1 file the archive holds for `day`.
pub fn ingest_l1_day(day: NaiveDate, source: &dyn ObservationArchive) -> Result<IngestedDay, IngestError> {
    let files = source.list_day(day).map_err(|source| IngestError::Listing { day, source })?;
    let mut out = IngestedDay { day, observations: Vec::new(), files: Vec::new() };
    for f in files {
        let bytes = source
            .fetch(day, &f)
            .map_err(|e| IngestError::Unreadable { file: f.name.clone(), reason: e.to_string() })?;
        let (sat, obs, skipped) = decode_l1_file(&f.name, &bytes)?;
        out.files.push(FileIngestReport { name: f.name.clone(), satellite: sat, records: obs.len(), skipped });
        out.observations.extend(obs);
    }
    Ok(out)
}

/// Archive laid out as `root/YYYY-MM-DD/CYxxx_YYYYMMDD.l1.jsonl`.
#[derive(Debug, Clone)]
pub struct LocalDirArchive {
    pub root: PathBuf,
}

impl LocalDirArchive {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn day_dir(&self, day: NaiveDate) -> PathBuf {
        self.root.join(day.format("%Y-%m-%d").to_string())
    }

    pub fn write_day_file(&self, sat: u8, day: NaiveDate, obs: &[DdmObservation]) -> Result<PathBuf, ArchiveError> {
        let dir = self.day_dir(day);
        fs::create_dir_all(&dir).map_err(|source| ArchiveError::Io { path: dir.display().to_string(), source })?;
        let path = dir.join(l1_file_name(sat, day));
        fs::write(&path, encode_l1_file(sat, day, obs))
            .map_err(|source| ArchiveError::Io { path: path.display().to_string(), source })?;
        Ok(path)
    }
}

impl ObservationArchive for LocalDirArchive {
    fn list_day(&self, day: NaiveDate) -> Result<Vec<ArchiveFile>, ArchiveError> {
        let dir = self.day_dir(day);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let entries = fs::read_dir(&dir).map_err(|source| ArchiveError::Io { path: dir.display().to_string(), source })?;
        let mut files: Vec<ArchiveFile> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                parse_file_name(&name).map(|satellite| ArchiveFile { name, satellite })
            })
            .collect();
        files.sort();
        Ok(files)
    }

    fn fetch(&self, day: NaiveDate, file: &ArchiveFile) -> Result<Vec<u8>, ArchiveError> {
        let path = self.day_dir(day).join(&file.name);
        fs::read(&path).map_err(|source| ArchiveError::Io { path: path.display().to_string(), source })
    }
}

/// Stand-in for the remote archive: serves in-memory fixtures and records every request.
#[derive(Debug, Default)]
pub struct RemoteArchiveStub {
    fixtures: BTreeMap<NaiveDate, BTreeMap<String, Vec<u8>>>,
    requests: Mutex<Vec<String>>,
}

impl RemoteArchiveStub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_fixture(&mut self, day: NaiveDate, name: &str, bytes: Vec<u8>) {
        self.fixtures.entry(day).or_default().insert(name.to_string(), bytes);
    }

    pub fn requests(&self) -> Vec<String> {
        self.requests.lock().unwrap().clone()
    }
}

impl ObservationArchive for RemoteArchiveStub {
    fn list_day(&self, day: NaiveDate) -> Result<Vec<ArchiveFile>, ArchiveError> {
        self.requests.lock().unwrap().push(format!("LIST {}", day.format("%Y-%m-%d")));
        Ok(self
            .fixtures
            .get(&day)
            .map(|m| {
                m.keys()
                    .filter_map(|n| parse_file_name(n).map(|satellite| ArchiveFile { name: n.clone(), satellite }))
                    .collect()
            })
            .unwrap_or_default())
    }

    fn fetch(&self, day: NaiveDate, file: &ArchiveFile) -> Result<Vec<u8>, ArchiveError> {
        self.requests.lock().unwrap().push(format!("GET {}", file.name));
        self.fixtures
            .get(&day)
            .and_then(|m| m.get(&file.name))
            .cloned()
            .ok_or_else(|| ArchiveError::NotFound(file.name.clone()))
    }
}
