//! Windowed comparison of two daily series.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::stats::{bias, pearson, rmse, ubrmse};
use crate::MISSING;

/// Statistics over the paired days of `[start, end)`. With fewer than two
/// pairs every value is the missing sentinel; `r` is also the sentinel
/// when either side is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingPoint {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub pairs: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    /// mean_a − mean_b.
    pub diff: f64,
    pub r: f64,
    pub rmse: f64,
    pub ubrmse: f64,
}

/// Windows of `window_days` days every `step_days` days, starting on the
/// first day present in either series and continuing while the window
/// start does not pass the last day.
pub fn rolling_compare(
    a: &BTreeMap<NaiveDate, f64>,
    b: &BTreeMap<NaiveDate, f64>,
    window_days: i64,
    step_days: i64,
) -> Vec<RollingPoint> {
    assert!(window_days > 0 && step_days > 0, "window and step must be positive");
    let first = a.keys().next().into_iter().chain(b.keys().next()).min().copied();
    let last = a.keys().next_back().into_iter().chain(b.keys().next_back()).max().copied();
    let (Some(first), Some(last)) = (first, last) else { return vec![] };
    let mut out = Vec::new();
    let mut start = first;
    while start <= last {
        let end = start + Duration::days(window_days);
        let (xa, xb): (Vec<f64>, Vec<f64>) =
            a.range(start..end).filter_map(|(d, va)| b.get(d).map(|vb| (*va, *vb))).unzip();
        let n = xa.len();
        let p = if n < 2 {
            RollingPoint {
                start,
                end,
                pairs: n,
                mean_a: MISSING,
                mean_b: MISSING,
                diff: MISSING,
                r: MISSING,
                rmse: MISSING,
                ubrmse: MISSING,
            }
        } else {
            let ma = xa.iter().sum::<f64>() / n as f64;
            let mb = xb.iter().sum::<f64>() / n as f64;
            RollingPoint {
                start,
                end,
                pairs: n,
                mean_a: ma,
                mean_b: mb,
                diff: bias(&xa, &xb).unwrap(),
                r: pearson(&xa, &xb).unwrap_or(MISSING),
                rmse: rmse(&xa, &xb).unwrap(),
                ubrmse: ubrmse(&xa, &xb).unwrap(),
            }
        };
        out.push(p);
        start += Duration::days(step_days);
    }
    out
}
