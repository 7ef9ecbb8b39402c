//! Comparison of products against in-situ soil-moisture sites.

mod rolling;
mod sites;
mod stats;

pub use rolling::{rolling_compare, RollingPoint};
pub use sites::{
    daily_means, eligible_sites, nearest_cell_value, read_sites_csv, write_sites_csv, InSituSite, SiteError,
    MAX_ABS_LAT_DEG, MIN_DAYS, SITE_DEPTH_CM,
};
pub use stats::{bias, pearson, rmse, site_stats, ubrmse, SiteStats, StatsError};

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioning::Window;
use crate::geogrid::{great_circle_km, GeoPoint};
use crate::is_missing;
use crate::products::L2Record;
use crate::timeutil::day_of;

pub const FOOTPRINT_DIAMETER_KM: f64 = 36.0;

/// Mean of the `day` retrievals within `diameter_km / 2` of `site`
/// (boundary included). Values are summed in sorted order so the result does
/// not depend on record order.
pub fn upscale_daily(records: &[L2Record], site: GeoPoint, diameter_km: f64, day: NaiveDate) -> Option<f64> {
    let mut v: Vec<f64> = records
        .iter()
        .filter(|r| !is_missing(r.sm) && day_of(r.timestamp) == day && great_circle_km(site, r.sp) <= diameter_km / 2.0)
        .map(|r| r.sm)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchupRow {
    pub site_id: String,
    pub day: NaiveDate,
    pub insitu: f64,
    pub product: f64,
    /// Retrievals averaged into `product`.
    pub count: usize,
}

/// Daily pairs; only days where both sides exist.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchupTable {
    pub rows: Vec<MatchupRow>,
}

impl MatchupTable {
    pub fn for_site<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a MatchupRow> + 'a {
        self.rows.iter().filter(move |r| r.site_id == id)
    }
}

/// Builds the site-day matchups inside `window`, one site per parallel task.
pub fn build_matchups(sites: &[InSituSite], records: &[L2Record], window: &Window, diameter_km: f64) -> MatchupTable {
    let mut by_day: BTreeMap<NaiveDate, Vec<L2Record>> = BTreeMap::new();
    for r in records {
        let d = day_of(r.timestamp);
        if window.contains(d) {
            by_day.entry(d).or_default().push(r.clone());
        }
    }
    let rows: Vec<Vec<MatchupRow>> = sites
        .par_iter()
        .map(|s| {
            daily_means(s)
                .into_iter()
                .filter(|(d, _)| window.contains(*d))
                .filter_map(|(d, insitu)| {
                    let recs = by_day.get(&d)?;
                    let n = recs
                        .iter()
                        .filter(|r| !is_missing(r.sm) && great_circle_km(s.location, r.sp) <= diameter_km / 2.0)
                        .count();
                    let product = upscale_daily(recs, s.location, diameter_km, d)?;
                    Some(MatchupRow { site_id: s.id.clone(), day: d, insitu, product, count: n })
                })
                .collect()
        })
        .collect();
    MatchupTable { rows: rows.concat() }
}

/// Per-site product-vs-in-situ statistics; sites with fewer than two pairs are skipped.
pub fn stats_per_site(table: &MatchupTable) -> BTreeMap<String, SiteStats<f64>> {
    let mut pairs: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &table.rows {
        let e = pairs.entry(&r.site_id).or_default();
        e.0.push(r.product);
        e.1.push(r.insitu);
    }
    pairs
        .into_iter()
        .filter_map(|(id, (p, i))| site_stats(&p, &i).ok().map(|s| (id.to_string(), s)))
        .collect()
}

/// Mean statistics over a group of sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n_sites: usize,
    /// Mean correlation over sites where it is defined.
    pub mean_r: Option<f64>,
    pub mean_ubrmse: f64,
    pub mean_bias: f64,
    pub sites: Vec<String>,
}

fn summarize(members: &[(&String, &SiteStats<f64>)]) -> GroupSummary {
    let n = members.len() as f64;
    let rs: Vec<f64> = members.iter().filter_map(|(_, s)| s.r).collect();
    GroupSummary {
        n_sites: members.len(),
        mean_r: (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64),
        mean_ubrmse: members.iter().map(|(_, s)| s.ubrmse).sum::<f64>() / n,
        mean_bias: members.iter().map(|(_, s)| s.bias).sum::<f64>() / n,
        sites: members.iter().map(|(id, _)| (*id).clone()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandcoverBreakdown {
    pub aggregate: GroupSummary,
    /// Classes with at least two sites.
    pub by_class: BTreeMap<u8, GroupSummary>,
}

/// Groups per-site statistics by the site's land-cover class. Single-site
/// classes are left out of `by_class` but still count in `aggregate`.
/// Sites missing from `classes` are ignored.
pub fn stats_by_landcover(per_site: &BTreeMap<String, SiteStats<f64>>, classes: &BTreeMap<String, u8>) -> Option<LandcoverBreakdown> {
    let members: Vec<(&String, &SiteStats<f64>, u8)> =
        per_site.iter().filter_map(|(id, s)| classes.get(id).map(|c| (id, s, *c))).collect();
    if members.is_empty() {
        return None;
    }
    let all: Vec<(&String, &SiteStats<f64>)> = members.iter().map(|(i, s, _)| (*i, *s)).collect();
    let mut groups: BTreeMap<u8, Vec<(&String, &SiteStats<f64>)>> = BTreeMap::new();
    for (id, s, c) in &members {
        groups.entry(*c).or_default().push((id, s));
    }
    let by_class = groups.into_iter().filter(|(_, m)| m.len() > 1).map(|(c, m)| (c, summarize(&m))).collect();
    Some(LandcoverBreakdown { aggregate: summarize(&all), by_class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeutil::day_start;
    use crate::warehouse::AncillaryRecord;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(super) fn rec_at(p: GeoPoint, t: f64, sm: f64) -> L2Record {
        L2Record {
            timestamp: t,
            sp: p,
            sm,
            quality_flags: 0,
            spacecraft_id: 1,
            prn: 1,
            incidence_deg: 10.0,
            ddm_snr: 3.0,
            sp_rx_gain: 3.0,
            reflectivity_db: -10.0,
            anc: AncillaryRecord::missing(),
            surface_flag: 0,
            target_sm: None,
        }
    }

    fn day(n: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(n)
    }

    /// Point `km` due north of `p` on the authalic sphere.
    fn north(p: GeoPoint, km: f64) -> GeoPoint {
        GeoPoint::new(p.lat() + (km / crate::geogrid::EARTH_AUTHALIC_RADIUS_KM).to_degrees(), p.lon()).unwrap()
    }

    #[test]
    fn upscale_boundary_and_absence() {
        let site = GeoPoint::new(35.0, -97.0).unwrap();
        let t = day_start(day(3)) + 600.0;
        assert_eq!(upscale_daily(&[], site, 36.0, day(3)), None);
        let mut edge = north(site, 18.0);
        // Nudge onto the closed side of the boundary if rounding put it outside.
        while great_circle_km(site, edge) > 18.0 {
            edge = GeoPoint::new(edge.lat() - 1e-12, edge.lon()).unwrap();
        }
        let recs = vec![rec_at(edge, t, 0.3), rec_at(north(site, 18.5), t, 0.9), rec_at(site, t + 86_400.0, 0.9)];
        assert_eq!(upscale_daily(&recs, site, 36.0, day(3)), Some(0.3));
    }

    #[test]
    fn upscale_matches_linear_scan_and_ignores_order() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let site = GeoPoint::new(-20.0, 130.0).unwrap();
        let mut recs: Vec<L2Record> = (0..2000)
            .map(|_| {
                let p = GeoPoint::new(-20.0 + r.random_range(-0.4..0.4), 130.0 + r.random_range(-0.4..0.4)).unwrap();
                rec_at(p, day_start(day(0)) + r.random_range(0.0..3.0 * 86_400.0), r.random_range(0.0..0.6))
            })
            .collect();
        let mut sum = 0.0;
        let mut vals = vec![];
        for x in &recs {
            if day_of(x.timestamp) == day(1) && great_circle_km(site, x.sp) <= 18.0 {
                vals.push(x.sm);
                sum += x.sm;
            }
        }
        let got = upscale_daily(&recs, site, 36.0, day(1)).unwrap();
        assert!((got - sum / vals.len() as f64).abs() < 1e-14);
        recs.shuffle(&mut r);
        assert_eq!(upscale_daily(&recs, site, 36.0, day(1)).unwrap(), got);
    }

    fn stats(r: f64, u: f64, b: f64) -> SiteStats<f64> {
        SiteStats { r: Some(r), ubrmse: u, bias: b, rmse: (u * u + b * b).sqrt(), n: 40 }
    }

    #[test]
    fn landcover_grouping() {
        let per: BTreeMap<String, SiteStats<f64>> = [
            ("a", stats(0.8, 0.04, 0.01)),
            ("b", stats(0.6, 0.06, -0.01)),
            ("c", stats(0.5, 0.05, 0.02)),
            ("d", stats(0.7, 0.03, 0.0)),
            ("e", stats(0.9, 0.02, 0.03)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let one: BTreeMap<String, u8> = per.keys().map(|k| (k.clone(), 10)).collect();
        let g = stats_by_landcover(&per, &one).unwrap();
        assert_eq!(g.by_class[&10], g.aggregate);

        let classes: BTreeMap<String, u8> =
            [("a", 10), ("b", 10), ("c", 12), ("d", 12), ("e", 7)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let g = stats_by_landcover(&per, &classes).unwrap();
        assert!(!g.by_class.contains_key(&7));
        assert_eq!(g.aggregate.n_sites, 5);
        assert!(g.aggregate.sites.contains(&"e".to_string()));
        // Naive grouping oracle.
        for (class, summary) in &g.by_class {
            let ids: Vec<&String> = classes.iter().filter(|(_, c)| *c == class).map(|(i, _)| i).collect();
            let mean_r = ids.iter().map(|i| per[*i].r.unwrap()).sum::<f64>() / ids.len() as f64;
            let mean_u = ids.iter().map(|i| per[*i].ubrmse).sum::<f64>() / ids.len() as f64;
            assert!((summary.mean_r.unwrap() - mean_r).abs() < 1e-15);
            assert!((summary.mean_ubrmse - mean_u).abs() < 1e-15);
            assert_eq!(summary.n_sites, ids.len());
        }
    }

    #[test]
    fn matchups_pair_only_shared_days() {
        let loc = GeoPoint::new(35.0, -97.0).unwrap();
        let series: Vec<(f64, f64)> = (0..10).map(|d| (day_start(day(d)) + 3600.0, 0.2 + 0.01 * d as f64)).collect();
        let site = InSituSite::new("s1", loc, "net", 5.0, series, 10).unwrap();
        let recs: Vec<L2Record> = (0..10).step_by(2).map(|d| rec_at(loc, day_start(day(d)) + 7200.0, 0.25)).collect();
        let w = Window::new(day(0), day(8));
        let t = build_matchups(&[site], &recs, &w, 36.0);
        let days: Vec<NaiveDate> = t.rows.iter().map(|r| r.day).collect();
        assert_eq!(days, vec![day(0), day(2), day(4), day(6)]);
        assert!(t.rows.iter().all(|r| r.count == 1 && r.product == 0.25));
        let s = stats_per_site(&t);
        assert_eq!(s["s1"].n, 4);
    }
}
