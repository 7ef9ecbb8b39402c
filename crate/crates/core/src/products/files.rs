//! Product file encoding on top of the array container.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use thiserror::Error;

use super::naming::{l2_path, l3_path, Cadence};
use super::{GridMethod, L2Record, L3Grid, TimeWindow};
use crate::container::{write_atomic, ArrayData, AttrValue, ContainerError, Dataset, Variable, WriteOutcome};
use crate::geogrid::{GeoPoint, GridSpec};
use crate::timeutil::{datetime_of, iso8601};
use crate::warehouse::{satellite_label, AncillaryRecord, RasterWindow, ANCILLARY_BANDS, LANDCOVER_CLASSES};
use crate::MISSING;

#[derive(Debug, Error)]
pub enum ProductError {
    #[error("{0} already exists (use backfill mode to overwrite)")]
    Exists(PathBuf),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Corrupt { path: String, msg: String },
}

/// `Create` refuses to touch an existing file; `Backfill` rewrites it
/// (and leaves it alone when the bytes would not change).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteMode {
    Create,
    Backfill,
}

fn put(root: &Path, rel: &str, ds: &Dataset, mode: WriteMode) -> Result<(PathBuf, WriteOutcome), ProductError> {
    let path = root.join(rel);
    if mode == WriteMode::Create && path.exists() {
        return Err(ProductError::Exists(path));
    }
    let bytes = ds.to_bytes()?;
    let outcome = write_atomic(&path, &bytes).map_err(|source| ProductError::Io { path: path.clone(), source })?;
    Ok((path, outcome))
}

fn col<T>(r: &[L2Record], f: impl Fn(&L2Record) -> T) -> Vec<T> {
    r.iter().map(f).collect()
}

/// Encodes one satellite-day. Records are stored in the given order.
pub fn encode_l2(records: &[L2Record], satellite: u8, day: NaiveDate, version: &str, attrs: &BTreeMap<String, String>) -> Dataset {
    let mut ds = Dataset::new();
    ds.add_dim("sample", records.len()).add_dim("landcover", LANDCOVER_CLASSES);
    let start = day.and_time(NaiveTime::MIN).and_utc().timestamp() as f64;
    ds.set_attr("title", "GNSS-R trackwise soil moisture")
        .set_attr("satellite", satellite_label(satellite))
        .set_attr("version", version)
        .set_attr("time_start", iso8601(start))
        .set_attr("time_end", iso8601(start + 86_400.0))
        .set_attr("missing_value", MISSING);
    for (k, v) in attrs {
        ds.set_attr(k, v.as_str());
    }
    let f = |name: &str, v: Vec<f64>| Variable::new(name, &["sample"], ArrayData::F64(v));
    ds.add_var(f("timestamp", col(records, |r| r.timestamp)).with_attr("units", "seconds since 1970-01-01T00:00:00Z"));
    ds.add_var(f("sp_lat", col(records, |r| r.sp.lat())));
    ds.add_var(f("sp_lon", col(records, |r| r.sp.lon())));
    ds.add_var(
        f("soil_moisture", col(records, |r| r.sm)).with_attr("units", "m3 m-3").with_attr("_FillValue", MISSING),
    );
    ds.add_var(Variable::new("quality_flags", &["sample"], ArrayData::U32(col(records, |r| r.quality_flags))));
    ds.add_var(Variable::new("spacecraft_id", &["sample"], ArrayData::U8(col(records, |r| r.spacecraft_id))));
    ds.add_var(Variable::new("prn", &["sample"], ArrayData::U8(col(records, |r| r.prn))));
    ds.add_var(f("sp_inc_angle", col(records, |r| r.incidence_deg)));
    ds.add_var(f("ddm_snr", col(records, |r| r.ddm_snr)));
    ds.add_var(f("sp_rx_gain", col(records, |r| r.sp_rx_gain)));
    ds.add_var(f("reflectivity_db", col(records, |r| r.reflectivity_db)));
    for (i, name) in ANCILLARY_BANDS.iter().take(9).enumerate() {
        ds.add_var(f(name, col(records, |r| r.anc.to_bands()[i])).with_attr("_FillValue", MISSING));
    }
    let lc: Vec<f64> = records.iter().flat_map(|r| r.anc.landcover_frac).collect();
    ds.add_var(Variable::new("landcover_frac", &["sample", "landcover"], ArrayData::F64(lc)));
    ds.add_var(Variable::new("surface_flag", &["sample"], ArrayData::U8(col(records, |r| r.surface_flag))));
    ds.add_var(f("target_sm", col(records, |r| r.target_sm.unwrap_or(MISSING))).with_attr("_FillValue", MISSING));
    ds
}

pub fn decode_l2(ds: &Dataset, path: &str) -> Result<Vec<L2Record>, ProductError> {
    let corrupt = |msg: String| ProductError::Corrupt { path: path.to_string(), msg };
    let n = ds.dim("sample").ok_or_else(|| corrupt("no sample dimension".into()))?;
    let ts = ds.f64s("timestamp")?;
    let lat = ds.f64s("sp_lat")?;
    let lon = ds.f64s("sp_lon")?;
    let sm = ds.f64s("soil_moisture")?;
    let qf = ds.u32s("quality_flags")?;
    let sc = ds.u8s("spacecraft_id")?;
    let prn = ds.u8s("prn")?;
    let inc = ds.f64s("sp_inc_angle")?;
    let snr = ds.f64s("ddm_snr")?;
    let gain = ds.f64s("sp_rx_gain")?;
    let refl = ds.f64s("reflectivity_db")?;
    let anc: Vec<&[f64]> = ANCILLARY_BANDS.iter().take(9).map(|b| ds.f64s(b)).collect::<Result<_, _>>()?;
    let lc = ds.f64s("landcover_frac")?;
    let sf = ds.u8s("surface_flag")?;
    let tsm = ds.f64s("target_sm")?;
    (0..n)
        .map(|i| {
            let mut bands: Vec<f64> = anc.iter().map(|a| a[i]).collect();
            bands.extend_from_slice(&lc[i * LANDCOVER_CLASSES..(i + 1) * LANDCOVER_CLASSES]);
            Ok(L2Record {
                timestamp: ts[i],
                sp: GeoPoint::new(lat[i], lon[i]).map_err(|e| corrupt(e.to_string()))?,
                sm: sm[i],
                quality_flags: qf[i],
                spacecraft_id: sc[i],
                prn: prn[i],
                incidence_deg: inc[i],
                ddm_snr: snr[i],
                sp_rx_gain: gain[i],
                reflectivity_db: refl[i],
                anc: AncillaryRecord::from_bands(&bands),
                surface_flag: sf[i],
                target_sm: (tsm[i] != MISSING).then_some(tsm[i]),
            })
        })
        .collect()
}

/// Writes the daily trackwise file of `satellite`; records are sorted by
/// (prn, timestamp) first, so each transmitter's tracks stay contiguous.
pub fn write_l2_day(
    records: &[L2Record],
    satellite: u8,
    day: NaiveDate,
    version: &str,
    root: &Path,
    mode: WriteMode,
    attrs: &BTreeMap<String, String>,
) -> Result<(PathBuf, WriteOutcome), ProductError> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.prn.cmp(&b.prn).then(a.timestamp.total_cmp(&b.timestamp)));
    put(root, &l2_path(version, satellite, day), &encode_l2(&sorted, satellite, day, version, attrs), mode)
}

pub fn read_l2(path: &Path) -> Result<Vec<L2Record>, ProductError> {
    decode_l2(&Dataset::read(path)?, &path.display().to_string())
}

pub fn encode_l3(grid: &L3Grid, version: &str, attrs: &BTreeMap<String, String>) -> Dataset {
    let r = grid.region;
    let mut ds = Dataset::new();
    ds.add_dim("lat", r.rows).add_dim("lon", r.cols);
    ds.set_attr("title", "GNSS-R gridded soil moisture")
        .set_attr("version", version)
        .set_attr("time_start", iso8601(grid.window.start))
        .set_attr("time_end", iso8601(grid.window.end))
        .set_attr("time_start_s", grid.window.start)
        .set_attr("time_end_s", grid.window.end)
        .set_attr("grid", format!("EASE2_{}km", grid.spec.nominal_cell_km.unwrap_or(0)))
        .set_attr("row0", r.row0 as i64)
        .set_attr("col0", r.col0 as i64)
        .set_attr("aggregation", grid.method.name())
        .set_attr("missing_value", MISSING);
    if let GridMethod::Idw { power } = grid.method {
        ds.set_attr("idw_power", power);
    }
    for (k, v) in attrs {
        ds.set_attr(k, v.as_str());
    }
    ds.add_var(Variable::new("lat", &["lat"], ArrayData::F64(grid.lat())).with_attr("units", "degrees_north"));
    ds.add_var(Variable::new("lon", &["lon"], ArrayData::F64(grid.lon())).with_attr("units", "degrees_east"));
    ds.add_var(
        Variable::new("soil_moisture", &["lat", "lon"], ArrayData::F64(grid.sm.clone()))
            .with_attr("units", "m3 m-3")
            .with_attr("_FillValue", MISSING),
    );
    ds.add_var(Variable::new("sample_count", &["lat", "lon"], ArrayData::U32(grid.count.clone())));
    ds.add_var(Variable::new("surface_flag", &["lat", "lon"], ArrayData::U8(grid.surface_flag.clone())));
    ds
}

pub fn decode_l3(ds: &Dataset, path: &str) -> Result<L3Grid, ProductError> {
    let corrupt = |msg: &str| ProductError::Corrupt { path: path.to_string(), msg: msg.to_string() };
    let int = |k: &str| match ds.attrs.get(k) {
        Some(AttrValue::I64(v)) if *v >= 0 => Ok(*v as usize),
        _ => Err(corrupt(&format!("attribute {k}"))),
    };
    let float = |k: &str| match ds.attrs.get(k) {
        Some(AttrValue::F64(v)) => Ok(*v),
        _ => Err(corrupt(&format!("attribute {k}"))),
    };
    let km: u32 = ds
        .attr_str("grid")?
        .strip_prefix("EASE2_")
        .and_then(|s| s.strip_suffix("km"))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt("grid attribute"))?;
    let spec = GridSpec::ease2_km(km).map_err(|e| corrupt(&e.to_string()))?;
    let region = RasterWindow {
        row0: int("row0")?,
        col0: int("col0")?,
        rows: ds.dim("lat").ok_or_else(|| corrupt("lat dimension"))?,
        cols: ds.dim("lon").ok_or_else(|| corrupt("lon dimension"))?,
    };
    let method = match ds.attr_str("aggregation")? {
        "equal" => GridMethod::Equal,
        "nearest" => GridMethod::Nearest,
        "idw" => GridMethod::Idw { power: float("idw_power")? },
        _ => return Err(corrupt("aggregation attribute")),
    };
    Ok(L3Grid {
        spec,
        region,
        window: TimeWindow { start: float("time_start_s")?, end: float("time_end_s")? },
        method,
        sm: ds.f64s("soil_moisture")?.to_vec(),
        count: ds.u32s("sample_count")?.to_vec(),
        surface_flag: ds.u8s("surface_flag")?.to_vec(),
    })
}

pub fn write_l3(
    grid: &L3Grid,
    cadence: Cadence,
    version: &str,
    root: &Path,
    mode: WriteMode,
    attrs: &BTreeMap<String, String>,
) -> Result<(PathBuf, WriteOutcome), ProductError> {
    let rel = l3_path(version, cadence, datetime_of(grid.window.start));
    put(root, &rel, &encode_l3(grid, version, attrs), mode)
}

pub fn read_l3(path: &Path) -> Result<L3Grid, ProductError> {
    decode_l3(&Dataset::read(path)?, &path.display().to_string())
}
