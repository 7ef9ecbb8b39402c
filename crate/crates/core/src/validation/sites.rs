//! In-situ sites and their delimited-text format.
//!
//! One reading per row, with a header:
//!
//! ```text
//! site_id,lat,lon,landcover,network,depth_cm,time,sm
//! OK-001,35.1,-97.3,10,MESONET,5,2020-01-01T06:00:00Z,0.231
//! ```
//!
//! Site attributes repeat on every row and must agree; readings of a site
//! must be in strictly increasing time order.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditioning::Window;
use crate::geogrid::GeoPoint;
use crate::products::L3Grid;
use crate::timeutil::{day_of, iso8601, Timestamp};
use crate::is_missing;

pub const SITE_DEPTH_CM: f64 = 5.0;
pub const MAX_ABS_LAT_DEG: f64 = 40.0;
/// Distinct in-window days with data a site needs.
pub const MIN_DAYS: usize = 30;

#[derive(Debug, Error)]
pub enum SiteError {
    #[error("site {id}: {msg}")]
    Invalid { id: String, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InSituSite {
    pub id: String,
    pub location: GeoPoint,
    pub network: String,
    pub depth_cm: f64,
    /// `(time, sm m³/m³)`, strictly increasing in time.
    pub series: Vec<(Timestamp, f64)>,
    /// IGBP class id.
    pub landcover: u8,
}

impl InSituSite {
    pub fn new(
        id: &str,
        location: GeoPoint,
        network: &str,
        depth_cm: f64,
        series: Vec<(Timestamp, f64)>,
        landcover: u8,
    ) -> Result<Self, SiteError> {
        let bad = |msg: String| Err(SiteError::Invalid { id: id.to_string(), msg });
        if series.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return bad("timestamps not strictly increasing".into());
        }
        if let Some((t, v)) = series.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return bad(format!("soil moisture {v} at {} outside [0, 1]", iso8601(*t)));
        }
        Ok(Self { id: id.to_string(), location, network: network.to_string(), depth_cm, series, landcover })
    }
}

/// Mean of all readings per UTC calendar day.
pub fn daily_means(site: &InSituSite) -> BTreeMap<NaiveDate, f64> {
    let mut acc: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for (t, v) in &site.series {
        let e = acc.entry(day_of(*t)).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(d, (s, n))| (d, s / n as f64)).collect()
}

/// Sites at 5 cm depth, within ±40° latitude, with at least 30 days of data in `window`.
pub fn eligible_sites<'a>(sites: &'a [InSituSite], window: &Window) -> Vec<&'a InSituSite> {
    sites
        .iter()
        .filter(|s| {
            s.depth_cm == SITE_DEPTH_CM
                && s.location.lat().abs() <= MAX_ABS_LAT_DEG
                && daily_means(s).keys().filter(|d| window.contains(**d)).count() >= MIN_DAYS
        })
        .collect()
}

/// Value of the grid cell whose center is closest to `site` (the cell
/// containing it), for comparison products on their own grid.
pub fn nearest_cell_value(grid: &L3Grid, site: GeoPoint) -> Option<f64> {
    let cell = grid.spec.cell_of(site).ok()?;
    let v = grid.sm[grid.region.offset(cell)?];
    (!is_missing(v)).then_some(v)
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    site_id: String,
    lat: f64,
    lon: f64,
    landcover: u8,
    network: String,
    depth_cm: f64,
    time: String,
    sm: f64,
}

pub fn read_sites_csv(r: impl Read) -> Result<Vec<InSituSite>, SiteError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut order: Vec<String> = Vec::new();
    let mut acc: BTreeMap<String, (Row, Vec<(Timestamp, f64)>)> = BTreeMap::new();
    for (i, row) in rd.deserialize::<Row>().enumerate() {
        let row = row?;
        let line = i as u64 + 2;
        let t = DateTime::parse_from_rfc3339(&row.time)
            .map_err(|e| SiteError::Row { line, msg: format!("time {:?}: {e}", row.time) })?
            .timestamp() as f64;
        let sm = row.sm;
        match acc.get_mut(&row.site_id) {
            Some((first, series)) => {
                if (first.lat, first.lon, first.landcover, first.depth_cm) != (row.lat, row.lon, row.landcover, row.depth_cm)
                    || first.network != row.network
                {
                    return Err(SiteError::Row { line, msg: format!("attributes of site {} changed", row.site_id) });
                }
                series.push((t, sm));
            }
            None => {
                order.push(row.site_id.clone());
                acc.insert(row.site_id.clone(), (row, vec![(t, sm)]));
            }
        }
    }
    order
        .into_iter()
        .map(|id| {
            let (row, series) = acc.remove(&id).unwrap();
            let p = GeoPoint::new(row.lat, row.lon).map_err(|e| SiteError::Invalid { id: id.clone(), msg: e.to_string() })?;
            InSituSite::new(&id, p, &row.network, row.depth_cm, series, row.landcover)
        })
        .collect()
}

pub fn write_sites_csv(sites: &[InSituSite], w: impl Write) -> Result<(), SiteError> {
    let mut wr = csv::Writer::from_writer(w);
    for s in sites {
        for (t, sm) in &s.series {
            wr.serialize(Row {
                site_id: s.id.clone(),
                lat: s.location.lat(),
                lon: s.location.lon(),
                landcover: s.landcover,
                network: s.network.clone(),
                depth_cm: s.depth_cm,
                time: iso8601(*t),
                sm: *sm,
            })?;
        }
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}
