//! Product directory layout and file names.
//!
//! ```text
//! {version}/trackwiseSoilMoisture/{sat}/{YYYY-MM-DD}/aggregateSoilMoisture_muon_{sat}_{YYYYMMDD}_{version}.nc4
//! {version}/griddedSoilMoisture/hourlySoilMoisture/CYGNSS/{YYYY-MM-DD}/hourlySoilMoisture_muon_CYGNSS_{YYYYMMDDTHH}Z_{version}.nc4
//! {version}/griddedSoilMoisture/dailySoilMoisture/CYGNSS/{YYYY-MM-DD}/dailySoilMoisture_muon_CYGNSS_{YYYYMMDD}_{version}.nc4
//! ```

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::warehouse::satellite_label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cadence {
    Hourly,
    Daily,
}

impl Cadence {
    fn file_type(self) -> &'static str {
        match self {
            Cadence::Hourly => "hourlySoilMoisture",
            Cadence::Daily => "dailySoilMoisture",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProductKind {
    /// Daily trackwise file of one spacecraft.
    L2 { satellite: u8 },
    L3(Cadence),
}

/// Parsed identity of a product file. `start` is midnight for daily files.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProductName {
    pub kind: ProductKind,
    pub start: NaiveDateTime,
    pub version: String,
}

impl ProductName {
    /// Path relative to the product root (no leading slash).
    pub fn rel_path(&self) -> String {
        let v = &self.version;
        let dir_day = self.start.format("%Y-%m-%d");
        match self.kind {
            ProductKind::L2 { satellite } => {
                let sat = satellite_label(satellite);
                format!(
                    "{v}/trackwiseSoilMoisture/{sat}/{dir_day}/aggregateSoilMoisture_muon_{sat}_{}_{v}.nc4",
                    self.start.format("%Y%m%d")
                )
            }
            ProductKind::L3(c) => {
                let stamp = match c {
                    Cadence::Hourly => self.start.format("%Y%m%dT%HZ").to_string(),
                    Cadence::Daily => self.start.format("%Y%m%d").to_string(),
                };
                let ft = c.file_type();
                format!("{v}/griddedSoilMoisture/{ft}/CYGNSS/{dir_day}/{ft}_muon_CYGNSS_{stamp}_{v}.nc4")
            }
        }
    }
}

pub fn l2_path(version: &str, satellite: u8, day: NaiveDate) -> String {
    ProductName { kind: ProductKind::L2 { satellite }, start: day.and_time(NaiveTime::MIN), version: version.into() }
        .rel_path()
}

/// `start` is truncated to the hour (hourly) or the day (daily).
pub fn l3_path(version: &str, cadence: Cadence, start: NaiveDateTime) -> String {
    let start = match cadence {
        Cadence::Hourly => start.date().and_hms_opt(start.hour(), 0, 0).unwrap(),
        Cadence::Daily => start.date().and_time(NaiveTime::MIN),
    };
    ProductName { kind: ProductKind::L3(cadence), start, version: version.into() }.rel_path()
}

/// Parses the trailing product components of `path`; any prefix (root
/// directory, leading slash) is ignored. The result must re-render to the
/// same trailing components.
pub fn parse_product_path(path: &str) -> Option<ProductName> {
    let parts: Vec<&str> = path.split('/').filter(|p| !p.is_empty()).collect();
    let file = *parts.last()?;
    let stem = file.strip_suffix(".nc4")?;
    let (kind, start, version, depth) = if let Some(rest) = stem.strip_prefix("aggregateSoilMoisture_muon_") {
        let (sat, rest) = rest.split_once('_')?;
        let (date, version) = rest.split_once('_')?;
        let satellite: u8 = sat.strip_prefix("CY")?.parse().ok()?;
        let day = NaiveDate::parse_from_str(date, "%Y%m%d").ok()?;
        (ProductKind::L2 { satellite }, day.and_time(NaiveTime::MIN), version, 5)
    } else if let Some(rest) = stem.strip_prefix("hourlySoilMoisture_muon_CYGNSS_") {
        let (stamp, version) = rest.split_once('_')?;
        let start = NaiveDateTime::parse_from_str(&format!("{stamp}0000"), "%Y%m%dT%HZ%M%S").ok()?;
        (ProductKind::L3(Cadence::Hourly), start, version, 6)
    } else if let Some(rest) = stem.strip_prefix("dailySoilMoisture_muon_CYGNSS_") {
        let (date, version) = rest.split_once('_')?;
        let day = NaiveDate::parse_from_str(date, "%Y%m%d").ok()?;
        (ProductKind::L3(Cadence::Daily), day.and_time(NaiveTime::MIN), version, 6)
    } else {
        return None;
    };
    let name = ProductName { kind, start, version: version.to_string() };
    let tail = parts.get(parts.len().checked_sub(depth)?..)?.join("/");
    (tail == name.rel_path()).then_some(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn names_follow_the_templates() {
        assert_eq!(
            l2_path("v1.0", 3, d(2022, 5, 18)),
            "v1.0/trackwiseSoilMoisture/CY003/2022-05-18/aggregateSoilMoisture_muon_CY003_20220518_v1.0.nc4"
        );
        let t = d(2022, 5, 18).and_hms_opt(7, 42, 10).unwrap();
        assert!(l3_path("v1.0", Cadence::Hourly, t).ends_with("/hourlySoilMoisture_muon_CYGNSS_20220518T07Z_v1.0.nc4"));
        assert_eq!(
            l3_path("v1.0", Cadence::Daily, t),
            "v1.0/griddedSoilMoisture/dailySoilMoisture/CYGNSS/2022-05-18/dailySoilMoisture_muon_CYGNSS_20220518_v1.0.nc4"
        );
    }

    #[test]
    fn mismatched_directory_is_rejected() {
        let p = l2_path("v1.0", 3, d(2022, 5, 18)).replace("2022-05-18/", "2022-05-19/");
        assert!(parse_product_path(&p).is_none());
        assert!(parse_product_path("/x/readme.txt").is_none());
    }

    proptest! {
        #[test]
        fn names_round_trip(sat in 1u8..=8, days in 0i64..4000, hour in 0u32..24, minor in 0u32..10, kind in 0u8..3) {
            let day = d(2017, 3, 1) + chrono::Duration::days(days);
            let version = format!("v1.{minor}");
            let (path, want) = match kind {
                0 => (l2_path(&version, sat, day), ProductKind::L2 { satellite: sat }),
                1 => (l3_path(&version, Cadence::Hourly, day.and_hms_opt(hour, 0, 0).unwrap()), ProductKind::L3(Cadence::Hourly)),
                _ => (l3_path(&version, Cadence::Daily, day.and_hms_opt(hour, 0, 0).unwrap()), ProductKind::L3(Cadence::Daily)),
            };
            let n = parse_product_path(&format!("/data/products/{path}")).unwrap();
            prop_assert_eq!(n.kind, want);
            prop_assert_eq!(&n.version, &version);
            prop_assert_eq!(n.rel_path(), path);
        }
    }
}
