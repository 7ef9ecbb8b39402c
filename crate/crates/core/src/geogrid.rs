//! Global EASE-Grid 2.0 (EPSG:6933) and degree-regular grid addressing.
//!
//! EASE2 cells are addressed by `(row, col)` with row 0 at the northern edge and
//! col 0 at 180°W. The projection is the normal-aspect cylindrical equal-area
//! projection of the WGS84 ellipsoid with standard parallels at ±30°.
//! A cell center sits half a cell from its upper-left corner (SMAP registration).

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS84 semi-major axis in meters.
pub const WGS84_A: f64 = 6378137.0;
/// WGS84 first eccentricity as used by the EASE2 definition.
pub const WGS84_E: f64 = 0.0818191908426;
const WGS84_E2: f64 = WGS84_E * WGS84_E;
const STANDARD_PARALLEL_DEG: f64 = 30.0;

/// Radius of the sphere with the same surface area as the WGS84 ellipsoid.
pub const EARTH_AUTHALIC_RADIUS_KM: f64 = 6371.007180918475;

/// Registration convention recorded in product metadata.
pub const EASE2_REGISTRATION: &str =
    "EASE-Grid 2.0 global (EPSG:6933), cell-center registration, row 0 north, col 0 at 180W";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid geographic point lat={lat} lon={lon}")]
    InvalidPoint { lat: f64, lon: f64 },
    #[error("latitude {lat} outside the grid's valid span of +/-{limit}")]
    OutOfDomain { lat: f64, limit: f64 },
    #[error("cell ({row}, {col}) outside a {rows}x{cols} grid")]
    IndexOutOfRange { row: usize, col: usize, rows: usize, cols: usize },
    #[error("operation requires an {expected:?} grid")]
    WrongKind { expected: GridKind },
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
}

/// A location on the Earth in degrees. Longitude is kept in [-180, 180).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;

    fn try_from(p: RawPoint) -> Result<Self, GeoError> {
        GeoPoint::new(p.lat, p.lon)
    }
}

impl GeoPoint {
    /// Validates latitude and wraps longitude into [-180, 180).
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::InvalidPoint { lat, lon });
        }
        Ok(Self { lat, lon: normalize_lon(lon) })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.5}, {:.5})", self.lat, self.lon)
    }
}

/// Wraps a longitude into [-180, 180).
pub fn normalize_lon(lon: f64) -> f64 {
    let mut l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if l >= 180.0 {
        l -= 360.0;
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridKind {
    Ease2Global,
    DegreeRegular,
}

/// Published EASE2 global resolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ease2Res {
    Km3,
    Km9,
    Km36,
}

impl Ease2Res {
    pub fn km(self) -> u32 {
        match self {
            Ease2Res::Km3 => 3,
            Ease2Res::Km9 => 9,
            Ease2Res::Km36 => 36,
        }
    }

    pub fn from_km(km: u32) -> Option<Self> {
        match km {
            3 => Some(Ease2Res::Km3),
            9 => Some(Ease2Res::Km9),
            36 => Some(Ease2Res::Km36),
            _ => None,
        }
    }

    /// (rows, cols, cell size in meters) from the NSIDC grid definitions.
    fn parameters(self) -> (usize, usize, f64) {
        match self {
            Ease2Res::Km3 => (4872, 11568, 3002.6850700487),
            Ease2Res::Km9 => (1624, 3856, 9008.055210146),
            Ease2Res::Km36 => (406, 964, 36032.220840584),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub kind: GridKind,
    /// 3, 9 or 36 for EASE2 grids.
    pub nominal_cell_km: Option<u32>,
    pub rows: usize,
    pub cols: usize,
    /// Cell pitch in degrees (degree-regular grids only).
    pub degree_step: Option<f64>,
    /// Projected cell size in meters (EASE2 only).
    pub cell_size_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.row, self.col)
    }
}

fn k0() -> f64 {
    let phi1 = STANDARD_PARALLEL_DEG.to_radians();
    phi1.cos() / (1.0 - WGS84_E2 * phi1.sin().powi(2)).sqrt()
}

/// Authalic `q` function of geodetic latitude (radians).
fn q_of(phi: f64) -> f64 {
    let s = phi.sin();
    let e = WGS84_E;
    (1.0 - WGS84_E2)
        * (s / (1.0 - WGS84_E2 * s * s) - (1.0 / (2.0 * e)) * ((1.0 - e * s) / (1.0 + e * s)).ln())
}

fn q_polar() -> f64 {
    q_of(PI / 2.0)
}

/// Geodetic latitude (radians) whose authalic `q` equals `q`.
fn phi_of_q(q: f64) -> f64 {
    let qp = q_polar();
    let beta = (q / qp).clamp(-1.0, 1.0).asin();
    let e2 = WGS84_E2;
    let e4 = e2 * e2;
    let e6 = e4 * e2;
    // Authalic-latitude series, then Newton refinement on q itself.
    let mut phi = beta
        + (e2 / 3.0 + 31.0 * e4 / 180.0 + 517.0 * e6 / 5040.0) * (2.0 * beta).sin()
        + (23.0 * e4 / 360.0 + 251.0 * e6 / 3780.0) * (4.0 * beta).sin()
        + (761.0 * e6 / 45360.0) * (6.0 * beta).sin();
    for _ in 0..8 {
        let s = phi.sin();
        let c = phi.cos();
        if c.abs() < 1e-15 {
            break;
        }
        // dq/dphi = 2 (1 - e^2) cos(phi) / (1 - e^2 sin^2 phi)^2
        let w = 1.0 - e2 * s * s;
        let dq = 2.0 * (1.0 - e2) * c / (w * w);
        let step = (q_of(phi) - q) / dq;
        phi -= step;
        if step.abs() < 1e-16 {
            break;
        }
    }
    phi
}

/// EASE2 projected coordinates (meters) of a point.
pub fn ease2_project(p: GeoPoint) -> (f64, f64) {
    let k = k0();
    let x = WGS84_A * k * p.lon.to_radians();
    let y = WGS84_A * q_of(p.lat.to_radians()) / (2.0 * k);
    (x, y)
}

/// Inverse of [`ease2_project`]; `x` is wrapped onto the map width.
pub fn ease2_unproject(x: f64, y: f64) -> GeoPoint {
    let k = k0();
    let lon = (x / (WGS84_A * k)).to_degrees();
    let q = 2.0 * y * k / WGS84_A;
    let lat = phi_of_q(q).to_degrees();
    GeoPoint { lat: lat.clamp(-90.0, 90.0), lon: normalize_lon(lon) }
}

impl GridSpec {
    pub fn ease2(res: Ease2Res) -> Self {
        let (rows, cols, cell) = res.parameters();
        Self {
            kind: GridKind::Ease2Global,
            nominal_cell_km: Some(res.km()),
            rows,
            cols,
            degree_step: None,
            cell_size_m: Some(cell),
        }
    }

    pub fn ease2_km(km: u32) -> Result<Self, GeoError> {
        Ease2Res::from_km(km)
            .map(Self::ease2)
            .ok_or_else(|| GeoError::InvalidSpec(format!("no EASE2 global grid at {km} km")))
    }

    /// A global lat/lon grid with square cells of `step` degrees.
    pub fn degree_regular(step: f64) -> Result<Self, GeoError> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(GeoError::InvalidSpec(format!("degree step {step} must be positive")));
        }
        let cols = (360.0 / step).round();
        let rows = (180.0 / step).round();
        if ((cols * step) - 360.0).abs() > 1e-9 || ((rows * step) - 180.0).abs() > 1e-9 {
            return Err(GeoError::InvalidSpec(format!("degree step {step} does not divide 360/180")));
        }
        Ok(Self {
            kind: GridKind::DegreeRegular,
            nominal_cell_km: None,
            rows: rows as usize,
            cols: cols as usize,
            degree_step: Some(step),
            cell_size_m: None,
        })
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(GeoError::InvalidSpec("empty grid".into()));
        }
        match self.kind {
            GridKind::Ease2Global => {
                let res = self
                    .nominal_cell_km
                    .and_then(Ease2Res::from_km)
                    .ok_or_else(|| GeoError::InvalidSpec("EASE2 grid needs 3/9/36 km".into()))?;
                if *self != GridSpec::ease2(res) {
                    return Err(GeoError::InvalidSpec(format!(
                        "EASE2 {} km dimensions do not match the published grid",
                        res.km()
                    )));
                }
            }
            GridKind::DegreeRegular => {
                let step = self.degree_step.unwrap_or(0.0);
                let check = GridSpec::degree_regular(step)?;
                if check.rows != self.rows || check.cols != self.cols {
                    return Err(GeoError::InvalidSpec("degree grid dimensions".into()));
                }
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn contains(&self, c: CellIndex) -> bool {
        c.row < self.rows && c.col < self.cols
    }

    fn check_index(&self, c: CellIndex) -> Result<(), GeoError> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(GeoError::IndexOutOfRange { row: c.row, col: c.col, rows: self.rows, cols: self.cols })
        }
    }

    fn cell_m(&self) -> f64 {
        self.cell_size_m.expect("EASE2 spec carries a cell size")
    }

    fn ease2_origin(&self) -> (f64, f64) {
        let cell = self.cell_m();
        (-(self.cols as f64) / 2.0 * cell, (self.rows as f64) / 2.0 * cell)
    }

    /// Largest |latitude| covered by the grid.
    pub fn lat_limit(&self) -> f64 {
        match self.kind {
            GridKind::Ease2Global => {
                let (_, y0) = self.ease2_origin();
                phi_of_q(2.0 * y0 * k0() / WGS84_A).to_degrees()
            }
            GridKind::DegreeRegular => 90.0,
        }
    }

    /// Longitudinal width of one column in degrees.
    pub fn col_width_deg(&self) -> f64 {
        360.0 / self.cols as f64
    }

    /// Cell containing `p`, for either grid kind.
    pub fn cell_of(&self, p: GeoPoint) -> Result<CellIndex, GeoError> {
        match self.kind {
            GridKind::Ease2Global => {
                let limit = self.lat_limit();
                if p.lat.abs() > limit {
                    return Err(GeoError::OutOfDomain { lat: p.lat, limit });
                }
                let (x, y) = ease2_project(p);
                let (x0, y0) = self.ease2_origin();
                let cell = self.cell_m();
                let col = ((x - x0) / cell).floor();
                let row = ((y0 - y) / cell).floor();
                let col = (col.max(0.0) as usize).min(self.cols - 1);
                let row = (row.max(0.0) as usize).min(self.rows - 1);
                Ok(CellIndex { row, col })
            }
            GridKind::DegreeRegular => {
                let step = self.degree_step.unwrap_or(1.0);
                let row = (((90.0 - p.lat) / step).floor().max(0.0) as usize).min(self.rows - 1);
                let col = (((p.lon + 180.0) / step).floor().max(0.0) as usize).min(self.cols - 1);
                Ok(CellIndex { row, col })
            }
        }
    }

    /// Center of cell `c`, for either grid kind.
    pub fn center_of(&self, c: CellIndex) -> Result<GeoPoint, GeoError> {
        self.check_index(c)?;
        Ok(match self.kind {
            GridKind::Ease2Global => {
                let (x0, y0) = self.ease2_origin();
                let cell = self.cell_m();
                let x = x0 + (c.col as f64 + 0.5) * cell;
                let y = y0 - (c.row as f64 + 0.5) * cell;
                ease2_unproject(x, y)
            }
            GridKind::DegreeRegular => {
                let step = self.degree_step.unwrap_or(1.0);
                GeoPoint {
                    lat: 90.0 - (c.row as f64 + 0.5) * step,
                    lon: normalize_lon(-180.0 + (c.col as f64 + 0.5) * step),
                }
            }
        })
    }

    /// Geodetic latitude of the northern and southern edges of `row` (EASE2).
    pub fn row_edges_deg(&self, row: usize) -> (f64, f64) {
        let (_, y0) = self.ease2_origin();
        let cell = self.cell_m();
        let k = k0();
        let north = y0 - row as f64 * cell;
        let south = y0 - (row as f64 + 1.0) * cell;
        (
            phi_of_q(2.0 * north * k / WGS84_A).to_degrees(),
            phi_of_q(2.0 * south * k / WGS84_A).to_degrees(),
        )
    }

    /// Ellipsoidal surface area (m²) of one cell in `row`, from the latitude band
    /// bounded by the row's edges and the column's longitude span.
    pub fn cell_area_m2(&self, row: usize) -> f64 {
        let (n, s) = self.row_edges_deg(row);
        band_area_m2(s, n) * (self.col_width_deg() / 360.0)
    }
}

/// Ellipsoidal area (m²) of the full latitude band between `south` and `north` degrees.
pub fn band_area_m2(south: f64, north: f64) -> f64 {
    PI * WGS84_A * WGS84_A * (q_of(north.to_radians()) - q_of(south.to_radians()))
}

/// Cell containing `p` on an EASE2 grid.
pub fn ease2_forward(p: GeoPoint, spec: &GridSpec) -> Result<CellIndex, GeoError> {
    if spec.kind != GridKind::Ease2Global {
        return Err(GeoError::WrongKind { expected: GridKind::Ease2Global });
    }
    spec.cell_of(p)
}

/// Center of an EASE2 cell.
pub fn ease2_inverse(c: CellIndex, spec: &GridSpec) -> Result<GeoPoint, GeoError> {
    if spec.kind != GridKind::Ease2Global {
        return Err(GeoError::WrongKind { expected: GridKind::Ease2Global });
    }
    spec.center_of(c)
}

/// Haversine distance on the authalic sphere.
pub fn great_circle_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_AUTHALIC_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Every cell whose center lies within `radius_km` (inclusive) of `center`.
pub fn cells_within_radius(center: GeoPoint, radius_km: f64, spec: &GridSpec) -> BTreeSet<CellIndex> {
    let mut out = BTreeSet::new();
    if !(radius_km > 0.0) {
        return out;
    }
    let dlat = (radius_km / EARTH_AUTHALIC_RADIUS_KM).to_degrees();
    let limit = spec.lat_limit();
    let lat_hi = (center.lat + dlat).min(limit);
    let lat_lo = (center.lat - dlat).max(-limit);
    if lat_lo > lat_hi {
        return out;
    }
    let row_of = |lat: f64| spec.cell_of(GeoPoint { lat, lon: 0.0 }).map(|c| c.row).unwrap_or(0);
    let row_first = row_of(lat_hi).saturating_sub(1);
    let row_last = (row_of(lat_lo) + 1).min(spec.rows - 1);

    let max_abs_lat = center.lat.abs() + dlat;
    let all_cols = max_abs_lat >= 89.0;
    let col_span = if all_cols {
        spec.cols
    } else {
        let dlon = dlat / max_abs_lat.to_radians().cos();
        let n = (dlon / spec.col_width_deg()).ceil() as usize + 2;
        (2 * n + 1).min(spec.cols)
    };
    let center_col = spec.cell_of(GeoPoint { lat: 0.0, lon: center.lon }).map(|c| c.col).unwrap_or(0);
    let cols: Vec<usize> = if col_span >= spec.cols {
        (0..spec.cols).collect()
    } else {
        let half = col_span / 2;
        (0..col_span).map(|k| (center_col + spec.cols + k - half) % spec.cols).collect()
    };

    for row in row_first..=row_last {
        for &col in &cols {
            let c = CellIndex { row, col };
            if let Ok(p) = spec.center_of(c) {
                if great_circle_km(center, p) <= radius_km {
                    out.insert(c);
                }
            }
        }
    }
    out
}
