//! Aggregation of L2 retrievals onto a window of the 9 km grid.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{retrieval_suppressed, L2Record};
use crate::geogrid::{great_circle_km, GeoPoint, GridSpec};
use crate::timeutil::{day_start, Timestamp};
use crate::warehouse::RasterWindow;
use crate::{is_missing, MISSING};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum GridMethod {
    Equal,
    Nearest,
    Idw { power: f64 },
}

impl GridMethod {
    pub const IDW_DEFAULT_POWER: f64 = 2.0;

    pub fn name(&self) -> &'static str {
        match self {
            GridMethod::Equal => "equal",
            GridMethod::Nearest => "nearest",
            GridMethod::Idw { .. } => "idw",
        }
    }
}

/// Half-open `[start, end)` in UTC seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeWindow {
    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }
}

pub fn daily_window(day: NaiveDate) -> TimeWindow {
    let s = day_start(day);
    TimeWindow { start: s, end: s + 86_400.0 }
}

pub fn hourly_windows(day: NaiveDate) -> Vec<TimeWindow> {
    let s = day_start(day);
    (0..24).map(|h| TimeWindow { start: s + 3600.0 * h as f64, end: s + 3600.0 * (h + 1) as f64 }).collect()
}

/// Gridded product over `region` of `spec`. Per-cell arrays are row-major
/// over the region.
#[derive(Debug, Clone, PartialEq)]
pub struct L3Grid {
    pub spec: GridSpec,
    pub region: RasterWindow,
    pub window: TimeWindow,
    pub method: GridMethod,
    /// Cell mean in m³/m³, or the missing sentinel.
    pub sm: Vec<f64>,
    /// Retrievals that entered the cell value.
    pub count: Vec<u32>,
    /// OR of the surface flags of every retrieval in the cell.
    pub surface_flag: Vec<u8>,
}

impl L3Grid {
    /// Row-center latitudes of the region.
    pub fn lat(&self) -> Vec<f64> {
        (0..self.region.rows).map(|r| self.spec.center_of(crate::geogrid::CellIndex::new(self.region.row0 + r, self.region.col0)).map_or(MISSING, |p| p.lat())).collect()
    }

    /// Column-center longitudes of the region.
    pub fn lon(&self) -> Vec<f64> {
        (0..self.region.cols).map(|c| self.spec.center_of(crate::geogrid::CellIndex::new(self.region.row0, self.region.col0 + c)).map_or(MISSING, |p| p.lon())).collect()
    }
}

#[derive(Clone, Copy)]
struct Member {
    value: f64,
    dist_km: f64,
    t: Timestamp,
    sc: u8,
}

/// Grids `retrievals` that fall in `window` and `region`. Retrievals with a
/// missing value (suppressed) only contribute their surface flags.
pub fn grid_l3(retrievals: &[L2Record], window: TimeWindow, spec: &GridSpec, region: RasterWindow, method: GridMethod) -> L3Grid {
    let n = region.len();
    let mut members: Vec<Vec<Member>> = vec![Vec::new(); n];
    let mut flags = vec![0u8; n];
    let mut centers: Vec<Option<GeoPoint>> = vec![None; n];
    for r in retrievals.iter().filter(|r| window.contains(r.timestamp)) {
        let Ok(cell) = spec.cell_of(r.sp) else { continue };
        let Some(off) = region.offset(cell) else { continue };
        flags[off] |= r.surface_flag;
        if is_missing(r.sm) {
            continue;
        }
        let c = *centers[off].get_or_insert_with(|| spec.center_of(cell).expect("cell in grid"));
        members[off].push(Member { value: r.sm, dist_km: great_circle_km(r.sp, c), t: r.timestamp, sc: r.spacecraft_id });
    }
    let mut sm = vec![MISSING; n];
    let mut count = vec![0u32; n];
    for i in 0..n {
        let m = &members[i];
        count[i] = m.len() as u32;
        if m.is_empty() || retrieval_suppressed(flags[i]) {
            continue;
        }
        sm[i] = if m.len() == 1 { m[0].value } else { aggregate(m, method) };
    }
    L3Grid { spec: *spec, region, window, method, sm, count, surface_flag: flags }
}

fn aggregate(m: &[Member], method: GridMethod) -> f64 {
    match method {
        GridMethod::Equal => m.iter().map(|x| x.value).sum::<f64>() / m.len() as f64,
        GridMethod::Nearest => {
            let mut best = m[0];
            for x in &m[1..] {
                let key = |y: &Member| (y.dist_km, y.t, y.sc);
                if key(x).partial_cmp(&key(&best)) == Some(std::cmp::Ordering::Less) {
                    best = *x;
                }
            }
            best.value
        }
        GridMethod::Idw { power } => {
            let at_center: Vec<f64> = m.iter().filter(|x| x.dist_km == 0.0).map(|x| x.value).collect();
            if !at_center.is_empty() {
                return at_center.iter().sum::<f64>() / at_center.len() as f64;
            }
            let (mut num, mut den) = (0.0, 0.0);
            for x in m {
                let w = x.dist_km.powf(-power);
                num += w * x.value;
                den += w;
            }
            num / den
        }
    }
}
