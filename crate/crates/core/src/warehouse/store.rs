//! Warehouse persistence: one container file of samples per (satellite, day).

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use thiserror::Error;

use super::{
    satellite_label, AncillaryRecord, Ddm, DdmMetrics, DdmObservation, Sample, DDM_BINS, DDM_DELAY_ROWS,
    DDM_DOPPLER_COLS, LANDCOVER_CLASSES,
};
use crate::container::{write_atomic, ArrayData, ContainerError, Dataset, Variable, WriteOutcome};
use crate::geogrid::{CellIndex, GeoPoint};
use crate::MISSING;

const NO_FLAGS: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum WarehouseError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt warehouse file {path}: {msg}")]
    Corrupt { path: String, msg: String },
}

#[derive(Debug, Clone)]
pub struct WarehouseStore {
    pub root: PathBuf,
}

const ANC_SCALARS: [&str; 9] = [
    "elevation_m",
    "elevation_std_m",
    "slope_deg",
    "slope_std_deg",
    "ndvi",
    "vwc_kg_m2",
    "water_fraction",
    "clay_fraction",
    "sand_fraction",
];

impl WarehouseStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, sat: u8, day: NaiveDate) -> PathBuf {
        self.root
            .join(satellite_label(sat))
            .join(format!("{}_{}_samples.nc4", satellite_label(sat), day.format("%Y%m%d")))
    }

    pub fn write_day(&self, sat: u8, day: NaiveDate, samples: &[Sample]) -> Result<WriteOutcome, WarehouseError> {
        let path = self.path(sat, day);
        let bytes = encode_samples(samples, sat, day).to_bytes()?;
        write_atomic(&path, &bytes).map_err(|source| WarehouseError::Io { path: path.display().to_string(), source })
    }

    pub fn read_day(&self, sat: u8, day: NaiveDate) -> Result<Option<Vec<Sample>>, WarehouseError> {
        let path = self.path(sat, day);
        if !path.exists() {
            return Ok(None);
        }
        let ds = Dataset::read(&path)?;
        decode_samples(&ds, &path).map(Some)
    }

    /// Satellites with a warehouse file for `day`.
    pub fn satellites_for(&self, day: NaiveDate) -> Vec<u8> {
        (1..=8u8).filter(|s| self.path(*s, day).exists()).collect()
    }
}

fn col<T>(samples: &[Sample], f: impl Fn(&Sample) -> T) -> Vec<T> {
    samples.iter().map(f).collect()
}

pub(crate) fn encode_samples(samples: &[Sample], sat: u8, day: NaiveDate) -> Dataset {
    let n = samples.len();
    let mut ds = Dataset::new();
    ds.add_dim("sample", n)
        .add_dim("delay", DDM_DELAY_ROWS)
        .add_dim("doppler", DDM_DOPPLER_COLS)
        .add_dim("landcover", LANDCOVER_CLASSES);
    ds.set_attr("title", "GNSS-R sample warehouse")
        .set_attr("satellite", satellite_label(sat))
        .set_attr("date", day.format("%Y-%m-%d").to_string())
        .set_attr("missing_value", MISSING);
    let f64v = |name: &str, v: Vec<f64>| Variable::new(name, &["sample"], ArrayData::F64(v));
    ds.add_var(f64v("timestamp", col(samples, |s| s.obs.timestamp)).with_attr("units", "seconds since 1970-01-01T00:00:00Z"));
    ds.add_var(f64v("sp_lat", col(samples, |s| s.obs.sp.lat())));
    ds.add_var(f64v("sp_lon", col(samples, |s| s.obs.sp.lon())));
    let ddm: Vec<f64> = samples.iter().flat_map(|s| s.obs.ddm.iter()).collect();
    ds.add_var(Variable::new("ddm", &["sample", "delay", "doppler"], ArrayData::F64(ddm)).with_attr("units", "W"));
    ds.add_var(f64v("ddm_snr", col(samples, |s| s.obs.ddm_snr)));
    ds.add_var(f64v("sp_rx_gain", col(samples, |s| s.obs.sp_rx_gain)));
    ds.add_var(f64v("incidence_deg", col(samples, |s| s.obs.incidence_deg)));
    ds.add_var(Variable::new("spacecraft_id", &["sample"], ArrayData::U8(col(samples, |s| s.obs.spacecraft_id))));
    ds.add_var(Variable::new("prn", &["sample"], ArrayData::U8(col(samples, |s| s.obs.prn))));
    ds.add_var(f64v("range_tx_sp_m", col(samples, |s| s.obs.rx_tx_ranges_m.0)));
    ds.add_var(f64v("range_sp_rx_m", col(samples, |s| s.obs.rx_tx_ranges_m.1)));
    ds.add_var(Variable::new("quality_flags", &["sample"], ArrayData::U32(col(samples, |s| s.obs.quality_flags))));
    ds.add_var(Variable::new("sample_rate_hz", &["sample"], ArrayData::U8(col(samples, |s| s.obs.sample_rate_hz))));
    for (i, name) in ANC_SCALARS.iter().enumerate() {
        ds.add_var(f64v(name, col(samples, |s| s.anc.to_bands()[i])));
    }
    let lc: Vec<f64> = samples.iter().flat_map(|s| s.anc.landcover_frac).collect();
    ds.add_var(Variable::new("landcover_frac", &["sample", "landcover"], ArrayData::F64(lc)));
    ds.add_var(f64v("peak_power_w", col(samples, |s| s.metrics.peak_power_w)));
    ds.add_var(f64v("noise_floor_w", col(samples, |s| s.metrics.noise_floor_w)));
    ds.add_var(f64v("reflectivity_db", col(samples, |s| s.metrics.reflectivity_db)));
    for (name, get) in [
        ("cell_3km", (|s: &Sample| s.cell_3km) as fn(&Sample) -> CellIndex),
        ("cell_9km", |s: &Sample| s.cell_9km),
        ("cell_36km", |s: &Sample| s.cell_36km),
    ] {
        ds.add_var(Variable::new(format!("{name}_row"), &["sample"], ArrayData::I64(col(samples, |s| get(s).row as i64))));
        ds.add_var(Variable::new(format!("{name}_col"), &["sample"], ArrayData::I64(col(samples, |s| get(s).col as i64))));
    }
    ds.add_var(f64v("target_sm", col(samples, |s| s.target_sm.unwrap_or(MISSING))).with_attr("_FillValue", MISSING));
    ds.add_var(
        Variable::new("target_flags", &["sample"], ArrayData::U32(col(samples, |s| s.target_flags.unwrap_or(NO_FLAGS))))
            .with_attr("_FillValue", NO_FLAGS as i64),
    );
    ds
}

pub(crate) fn decode_samples(ds: &Dataset, path: &Path) -> Result<Vec<Sample>, WarehouseError> {
    let corrupt = |msg: String| WarehouseError::Corrupt { path: path.display().to_string(), msg };
    let n = ds.dim("sample").ok_or_else(|| corrupt("no sample dimension".into()))?;
    let ts = ds.f64s("timestamp")?;
    let lat = ds.f64s("sp_lat")?;
    let lon = ds.f64s("sp_lon")?;
    let ddm = ds.f64s("ddm")?;
    let snr = ds.f64s("ddm_snr")?;
    let gain = ds.f64s("sp_rx_gain")?;
    let inc = ds.f64s("incidence_deg")?;
    let sc = ds.u8s("spacecraft_id")?;
    let prn = ds.u8s("prn")?;
    let r0 = ds.f64s("range_tx_sp_m")?;
    let r1 = ds.f64s("range_sp_rx_m")?;
    let qf = ds.u32s("quality_flags")?;
    let rate = ds.u8s("sample_rate_hz")?;
    let anc: Vec<&[f64]> = ANC_SCALARS.iter().map(|n| ds.f64s(n)).collect::<Result<_, _>>()?;
    let lc = ds.f64s("landcover_frac")?;
    let peak = ds.f64s("peak_power_w")?;
    let noise = ds.f64s("noise_floor_w")?;
    let refl = ds.f64s("reflectivity_db")?;
    let cells: Vec<(&[i64], &[i64])> = ["cell_3km", "cell_9km", "cell_36km"]
        .iter()
        .map(|c| Ok((ds.i64s(&format!("{c}_row"))?, ds.i64s(&format!("{c}_col"))?)))
        .collect::<Result<_, ContainerError>>()?;
    let tsm = ds.f64s("target_sm")?;
    let tfl = ds.u32s("target_flags")?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let sp = GeoPoint::new(lat[i], lon[i]).map_err(|e| corrupt(e.to_string()))?;
        let mut bands: Vec<f64> = anc.iter().map(|a| a[i]).collect();
        bands.extend_from_slice(&lc[i * LANDCOVER_CLASSES..(i + 1) * LANDCOVER_CLASSES]);
        let cell = |k: usize| CellIndex::new(cells[k].0[i] as usize, cells[k].1[i] as usize);
        out.push(Sample {
            obs: DdmObservation {
                timestamp: ts[i],
                sp,
                ddm: Ddm::from_flat(&ddm[i * DDM_BINS..(i + 1) * DDM_BINS]).unwrap(),
                ddm_snr: snr[i],
                sp_rx_gain: gain[i],
                incidence_deg: inc[i],
                spacecraft_id: sc[i],
                prn: prn[i],
                rx_tx_ranges_m: (r0[i], r1[i]),
                quality_flags: qf[i],
                sample_rate_hz: rate[i],
            },
            anc: AncillaryRecord::from_bands(&bands),
            metrics: DdmMetrics { peak_power_w: peak[i], noise_floor_w: noise[i], reflectivity_db: refl[i] },
            cell_3km: cell(0),
            cell_9km: cell(1),
            cell_36km: cell(2),
            target_sm: (tsm[i] != MISSING).then_some(tsm[i]),
            target_flags: (tfl[i] != NO_FLAGS).then_some(tfl[i]),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warehouse::testutil::{complete_anc, obs_at};
    use crate::warehouse::{build_samples, AncillarySource, NoTargets, ReflectivityCalibration};

    struct ConstAnc;
    impl AncillarySource for ConstAnc {
        fn record_at(&self, _c: CellIndex) -> AncillaryRecord {
            complete_anc()
        }
    }

    #[test]
    fn samples_round_trip_through_store() {
        let tmp = tempfile::tempdir().unwrap();
        let store = WarehouseStore::new(tmp.path());
        let day = NaiveDate::from_ymd_opt(2021, 3, 4).unwrap();
        let obs: Vec<_> = (0..7).map(|i| obs_at(20.0 + i as f64 * 0.1, 30.0, i as f64)).collect();
        let mut samples = build_samples(&obs, &ConstAnc, &NoTargets, &ReflectivityCalibration::default());
        samples[2].target_sm = Some(0.31);
        samples[2].target_flags = Some(2);
        assert_eq!(store.write_day(3, day, &samples).unwrap(), WriteOutcome::Created);
        assert_eq!(store.write_day(3, day, &samples).unwrap(), WriteOutcome::Unchanged);
        assert_eq!(store.read_day(3, day).unwrap().unwrap(), samples);
        assert_eq!(store.satellites_for(day), vec![3]);
        assert!(store.read_day(4, day).unwrap().is_none());
    }
}
