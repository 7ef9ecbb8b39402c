//! Synthetic 3 km ancillary surface fields.

use rayon::prelude::*;

use super::field::{xyz_km, FourierField};
use super::{rng_for, WorldConfig};
use crate::geogrid::{Ease2Res, GeoPoint, GridSpec};
use crate::warehouse::{
    derive_vwc, AncillaryRecord, AncillaryRasterStore, Raster, RasterDType, RasterWindow, StemFactorLut,
    ANCILLARY_BANDS, LANDCOVER_CLASSES,
};

/// Land-cover logit offsets by IGBP class; water (17) is driven by its own field.
const CLASS_BIAS: [f64; LANDCOVER_CLASSES] = [
    -1.5, -1.5, -1.5, -1.5, -1.0, // forests
    0.0, 0.2, 0.3, 0.4, 0.6, // shrubland, savanna, grassland
    -1.5, 0.6, -2.5, -0.5, // wetlands, cropland, urban, mosaic
    -20.0, 0.0, 0.0, // snow/ice, barren, water (unused)
];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Values are rounded to single precision so the in-memory raster equals
/// what a reader sees after a round trip through disk.
fn f32r(v: f64) -> f64 {
    v as f32 as f64
}

pub(crate) struct SurfaceFields {
    topo: FourierField,
    mountains: FourierField,
    rough: FourierField,
    water: FourierField,
    classes: Vec<FourierField>,
    ndvi: FourierField,
    clay: FourierField,
    sand: FourierField,
    lut: StemFactorLut,
}

impl SurfaceFields {
    pub fn new(cfg: &WorldConfig) -> Self {
        let mut rng = rng_for(cfg.seed, &[3]);
        let mut f = |l: f64, n: usize| FourierField::new(l, n, &mut rng);
        Self {
            topo: f(120.0, 64),
            mountains: f(60.0, 64),
            rough: f(40.0, 64),
            water: f(25.0, 64),
            classes: (0..LANDCOVER_CLASSES).map(|_| f(80.0, 24)).collect(),
            ndvi: f(50.0, 48),
            clay: f(70.0, 32),
            sand: f(70.0, 32),
            lut: StemFactorLut::default(),
        }
    }

    pub fn record(&self, p: GeoPoint) -> AncillaryRecord {
        let x = xyz_km(p);
        let ridge = (self.mountains.at_xyz(&x) - 1.0).max(0.0);
        let elevation = (350.0 + 300.0 * self.topo.at_xyz(&x) + 2200.0 * ridge).max(0.0);
        let elevation_std = 4.0 + 12.0 * self.rough.at_xyz(&x).abs() + 60.0 * ridge;
        let slope = (elevation_std / 150.0).atan().to_degrees();

        let mut logits = [0.0; LANDCOVER_CLASSES];
        for k in 0..LANDCOVER_CLASSES - 1 {
            logits[k] = CLASS_BIAS[k] + 1.5 * self.classes[k].at_xyz(&x);
        }
        logits[LANDCOVER_CLASSES - 1] = 4.0 * (self.water.at_xyz(&x) - 1.6);
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut lc = [0.0; LANDCOVER_CLASSES];
        for k in 0..LANDCOVER_CLASSES {
            lc[k] = f32r(w[k] / total);
        }
        // Stored fractions sum to one within single-precision rounding.
        let dominant = (0..LANDCOVER_CLASSES).max_by(|a, b| lc[*a].total_cmp(&lc[*b])).unwrap();
        let rest: f64 = (0..LANDCOVER_CLASSES).filter(|k| *k != dominant).map(|k| lc[k]).sum();
        lc[dominant] = f32r(1.0 - rest);

        let forest: f64 = lc[..5].iter().sum();
        let bare = lc[14] + lc[15] + lc[16];
        let ndvi = (0.12 + 0.35 * (1.0 - bare) + 0.25 * forest + 0.1 * self.ndvi.at_xyz(&x)).clamp(-0.1, 0.9);
        let clay = 0.05 + 0.4 * sigmoid(self.clay.at_xyz(&x));
        let sand = 0.1 + 0.4 * sigmoid(self.sand.at_xyz(&x));
        let ndvi = f32r(ndvi);
        AncillaryRecord {
            elevation_m: f32r(elevation),
            elevation_std_m: f32r(elevation_std),
            slope_deg: f32r(slope),
            slope_std_deg: f32r(0.3 * slope),
            ndvi,
            vwc_kg_m2: f32r(derive_vwc(ndvi, &lc, &self.lut)),
            water_fraction: lc[LANDCOVER_CLASSES - 1],
            clay_fraction: f32r(clay),
            sand_fraction: f32r(sand),
            landcover_frac: lc,
        }
    }
}

/// 3 km window covering the world box.
pub fn ancillary_window(cfg: &WorldConfig) -> RasterWindow {
    let spec = GridSpec::ease2(Ease2Res::Km3);
    let nw = spec.cell_of(GeoPoint::new(cfg.lat_max, cfg.lon_min).unwrap()).unwrap();
    let se = spec.cell_of(GeoPoint::new(cfg.lat_min, cfg.lon_max).unwrap()).unwrap();
    RasterWindow { row0: nw.row, col0: nw.col, rows: se.row - nw.row + 1, cols: se.col - nw.col + 1 }
}

pub(crate) fn build_ancillary(cfg: &WorldConfig, fields: &SurfaceFields) -> AncillaryRasterStore {
    let spec = GridSpec::ease2(Ease2Res::Km3);
    let window = ancillary_window(cfg);
    let cells: Vec<_> = window.cells().collect();
    let records: Vec<AncillaryRecord> =
        cells.par_iter().map(|c| fields.record(spec.center_of(*c).expect("cell inside grid"))).collect();
    let mut raster = Raster::new(spec, window, RasterDType::F32, &ANCILLARY_BANDS);
    for (c, rec) in cells.iter().zip(&records) {
        for (b, v) in rec.to_bands().into_iter().enumerate() {
            raster.set(b, *c, v);
        }
    }
    AncillaryRasterStore::new(raster).expect("canonical band layout")
}
