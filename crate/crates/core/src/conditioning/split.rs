use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeutil::day_of;
use crate::warehouse::Sample;

/// Half-open `[start, end)` calendar-day window (UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Window {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d < self.end
    }

    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days()
    }

    fn overlaps(&self, o: &Window) -> bool {
        self.start < o.end && o.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitWindows {
    pub train: Window,
    pub dev: Window,
    pub validation: Window,
}

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("{0} window is shorter than one day")]
    TooShort(&'static str),
    #[error("{0} and {1} windows overlap")]
    Overlap(&'static str, &'static str),
}

impl SplitWindows {
    pub fn validate(&self) -> Result<(), WindowError> {
        let named = [("train", self.train), ("dev", self.dev), ("validation", self.validation)];
        for (n, w) in named {
            if w.days() < 1 {
                return Err(WindowError::TooShort(n));
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                if named[i].1.overlaps(&named[j].1) {
                    return Err(WindowError::Overlap(named[i].0, named[j].0));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partitions {
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub discarded: Vec<Sample>,
}

/// Assigns each sample by the UTC day of its timestamp.
pub fn split_by_window(samples: Vec<Sample>, w: &SplitWindows) -> Partitions {
    let mut p = Partitions::default();
    for s in samples {
        let d = day_of(s.obs.timestamp);
        if w.train.contains(d) {
            p.train.push(s);
        } else if w.dev.contains(d) {
            p.dev.push(s);
        } else if w.validation.contains(d) {
            p.validation.push(s);
        } else {
            p.discarded.push(s);
        }
    }
    p
}

/// A gap longer than this splits one (spacecraft, prn) stream into separate tracks.
pub const TRACK_GAP_S: f64 = 10.0;

/// Keeps every `factor`-th sample of each contiguous (spacecraft, prn) track,
/// starting at the first. Survivors keep their input order.
pub fn downsample_alongtrack(samples: Vec<Sample>, factor: usize) -> Vec<Sample> {
    assert!(factor >= 1, "downsample factor must be at least 1");
    if factor == 1 {
        return samples;
    }
    let mut groups: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry((s.obs.spacecraft_id, s.obs.prn)).or_default().push(i);
    }
    let mut keep = vec![false; samples.len()];
    for idx in groups.values_mut() {
        idx.sort_by(|a, b| samples[*a].obs.timestamp.total_cmp(&samples[*b].obs.timestamp).then(a.cmp(b)));
        let mut pos = 0usize;
        let mut last = f64::NEG_INFINITY;
        for &i in idx.iter() {
            let t = samples[i].obs.timestamp;
            if t - last > TRACK_GAP_S {
                pos = 0;
            }
            keep[i] = pos % factor == 0;
            pos += 1;
            last = t;
        }
    }
    samples.into_iter().zip(keep).filter_map(|(s, k)| k.then_some(s)).collect()
}
