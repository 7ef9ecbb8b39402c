//! SMAP-like daily 9 km targets with swath gaps and injected flags.

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand_distr::StandardNormal;

use super::field::SmField;
use super::{rng_for, splitmix, unit_interval, TargetConfig, WorldConfig};
use crate::conditioning::target_flags;
use crate::geogrid::{ease2_project, ease2_unproject, CellIndex, Ease2Res, GeoPoint, GridSpec};
use crate::timeutil::day_start;
use crate::warehouse::{Raster, RasterDType, RasterWindow, TARGET_BANDS};

/// Hours (UTC) averaged into the daily cell mean.
pub const TRUTH_HOURS: [f64; 4] = [3.0, 9.0, 15.0, 21.0];
/// Swath orientation against grid columns, degrees.
const SWATH_TILT_DEG: f64 = 25.0;

/// 9 km window covering the world box.
pub fn target_window(cfg: &WorldConfig) -> RasterWindow {
    let spec = GridSpec::ease2(Ease2Res::Km9);
    let nw = spec.cell_of(GeoPoint::new(cfg.lat_max, cfg.lon_min).unwrap()).unwrap();
    let se = spec.cell_of(GeoPoint::new(cfg.lat_min, cfg.lon_max).unwrap()).unwrap();
    RasterWindow { row0: nw.row, col0: nw.col, rows: se.row - nw.row + 1, cols: se.col - nw.col + 1 }
}

/// Mean of the truth over a 3×3 lattice inside the cell at the [`TRUTH_HOURS`].
pub fn cell_mean_truth(field: &SmField, spec: &GridSpec, cell: CellIndex, day: NaiveDate) -> f64 {
    let center = spec.center_of(cell).expect("cell inside grid");
    let (x, y) = ease2_project(center);
    let h = spec.cell_size_m.expect("EASE2 grid") / 3.0;
    let mut sum = 0.0;
    for dy in [-h, 0.0, h] {
        for dx in [-h, 0.0, h] {
            let p = ease2_unproject(x + dx, y + dy);
            for hour in TRUTH_HOURS {
                sum += field.at(day_start(day) + hour * 3600.0, p);
            }
        }
    }
    sum / (9 * TRUTH_HOURS.len()) as f64
}

/// Whether `cell` lies under the day's swaths.
pub fn in_swath(tc: &TargetConfig, seed: u64, day: NaiveDate, cell: CellIndex, spec: &GridSpec) -> bool {
    if tc.coverage >= 1.0 {
        return true;
    }
    let phase = unit_interval(splitmix(seed ^ 0x5a7a, day.num_days_from_ce() as u64));
    let km = spec.cell_size_m.expect("EASE2 grid") / 1000.0;
    let a = SWATH_TILT_DEG.to_radians();
    let u = (cell.col as f64 * a.cos() + cell.row as f64 * a.sin()) * km / tc.swath_period_km;
    (u + phase).rem_euclid(1.0) < tc.coverage
}

/// Independent Bernoulli flag bits per cell-day.
pub fn injected_flags(tc: &TargetConfig, seed: u64, day: NaiveDate, cell: CellIndex) -> u32 {
    let key = splitmix(splitmix(splitmix(seed, day.num_days_from_ce() as u64), cell.row as u64), cell.col as u64);
    let mut flags = 0;
    for (k, (bit, rate)) in [
        (target_flags::UNSUCCESSFUL, tc.unsuccessful_rate),
        (target_flags::NOT_RECOMMENDED, tc.not_recommended_rate),
        (target_flags::PRECIPITATION, tc.precipitation_rate),
    ]
    .into_iter()
    .enumerate()
    {
        if unit_interval(splitmix(key, k as u64 + 1)) < rate {
            flags |= bit;
        }
    }
    flags
}

/// Daily target raster: swath cells carry the cell-mean truth plus bias and
/// noise (clamped to [0, 1]); other cells are missing.
pub fn synthesize_target(field: &SmField, cfg: &WorldConfig, day: NaiveDate) -> Raster {
    let spec = GridSpec::ease2(Ease2Res::Km9);
    let tc = &cfg.target;
    let window = target_window(cfg);
    let mut raster = Raster::new(spec, window, RasterDType::F64, &TARGET_BANDS);
    let mut rng = rng_for(cfg.seed, &[5, day.num_days_from_ce() as u64]);
    for cell in window.cells() {
        if !in_swath(tc, cfg.seed, day, cell, &spec) {
            continue;
        }
        let truth = cell_mean_truth(field, &spec, cell, day);
        let e: f64 = if tc.noise_std > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
        let v = (truth + tc.bias + tc.noise_std * e).clamp(0.0, 1.0);
        raster.set(0, cell, v);
        raster.set(1, cell, injected_flags(tc, cfg.seed, day, cell) as f64);
    }
    raster
}

#[cfg(test)]
mod tests {
    use super::*;

    fn populated(r: &Raster) -> Vec<(CellIndex, f64, u32)> {
        r.window.cells().filter_map(|c| r.get(0, c).map(|v| (c, v, r.get(1, c).unwrap() as u32))).collect()
    }

    #[test]
    fn coverage_fraction_matches_config() {
        let mut cfg = WorldConfig::small(21);
        cfg.target.noise_std = 0.0;
        let field = SmField::generate(&cfg);
        for d in 0..3 {
            let day = cfg.first_day + chrono::Duration::days(d);
            let r = synthesize_target(&field, &cfg, day);
            let frac = populated(&r).len() as f64 / r.window.len() as f64;
            assert!((frac - 0.30).abs() <= 0.02, "day {d}: {frac}");
        }
    }

    #[test]
    fn full_coverage_without_noise_is_cell_mean_truth() {
        let mut cfg = WorldConfig::small(22);
        cfg.target.coverage = 1.0;
        cfg.target.noise_std = 0.0;
        cfg.target.bias = 0.0;
        let field = SmField::generate(&cfg);
        let spec = GridSpec::ease2(Ease2Res::Km9);
        let r = synthesize_target(&field, &cfg, cfg.first_day);
        let cells = populated(&r);
        assert_eq!(cells.len(), r.window.len());
        for (c, v, _) in cells.iter().step_by(37) {
            // Oracle: direct average over the nine sub-points and four hours.
            let (x, y) = ease2_project(spec.center_of(*c).unwrap());
            let h = 9008.055210146 / 3.0;
            let mut vals = Vec::new();
            for i in -1..=1 {
                for j in -1..=1 {
                    let p = ease2_unproject(x + i as f64 * h, y + j as f64 * h);
                    for hr in [3.0, 9.0, 15.0, 21.0] {
                        vals.push(field.at(day_start(cfg.first_day) + hr * 3600.0, p));
                    }
                }
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((v - m).abs() < 1e-12);
        }
    }

    #[test]
    fn flag_rates_are_respected() {
        let mut cfg = WorldConfig::small(23);
        cfg.target.coverage = 1.0;
        cfg.target.unsuccessful_rate = 0.1;
        cfg.target.precipitation_rate = 0.2;
        cfg.target.not_recommended_rate = 0.0;
        let field = SmField::generate(&cfg);
        let cells = populated(&synthesize_target(&field, &cfg, cfg.first_day));
        let n = cells.len() as f64;
        let rate = |b: u32| cells.iter().filter(|c| c.2 & b != 0).count() as f64 / n;
        assert!((rate(target_flags::UNSUCCESSFUL) - 0.1).abs() < 0.02);
        assert!((rate(target_flags::PRECIPITATION) - 0.2).abs() < 0.02);
        assert_eq!(rate(target_flags::NOT_RECOMMENDED), 0.0);
    }
}
