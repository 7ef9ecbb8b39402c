//! Smooth random fields on the sphere and the ground-truth soil-moisture field.

use std::f64::consts::PI;

use chrono::Datelike;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{rng_for, SmFieldConfig, WorldConfig};
use crate::geogrid::{GeoPoint, EARTH_AUTHALIC_RADIUS_KM};
use crate::timeutil::{day_start, Timestamp, SECONDS_PER_DAY};

/// Point on the authalic sphere, km.
pub fn xyz_km(p: GeoPoint) -> [f64; 3] {
    let (phi, lam) = (p.lat().to_radians(), p.lon().to_radians());
    let r = EARTH_AUTHALIC_RADIUS_KM;
    [r * phi.cos() * lam.cos(), r * phi.cos() * lam.sin(), r * phi.sin()]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn chord2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Zero-mean, unit-variance random Fourier-feature field whose covariance
/// approximates `exp(-d² / (2 L²))` in chordal distance `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierField {
    pub length_km: f64,
    freqs: Vec<[f64; 3]>,
    phases: Vec<f64>,
}

impl FourierField {
    pub fn new(length_km: f64, features: usize, rng: &mut ChaCha8Rng) -> Self {
        let n = Normal::new(0.0, 1.0 / length_km).expect("positive length");
        let freqs = (0..features).map(|_| [n.sample(rng), n.sample(rng), n.sample(rng)]).collect();
        let phases = (0..features).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self { length_km, freqs, phases }
    }

    pub fn at_xyz(&self, x: &[f64; 3]) -> f64 {
        let s: f64 = self.freqs.iter().zip(&self.phases).map(|(w, b)| (dot(w, x) + b).cos()).sum();
        s * (2.0 / self.freqs.len() as f64).sqrt()
    }

    pub fn at(&self, p: GeoPoint) -> f64 {
        self.at_xyz(&xyz_km(p))
    }
}

/// A wet-up at `time` followed by an exponential dry-down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RainEvent {
    pub time: Timestamp,
    pub center: [f64; 3],
    pub radius_km: f64,
    pub amount: f64,
}

/// Events older than this many dry-down e-foldings are ignored.
const RAIN_MEMORY: f64 = 8.0;
/// Days of events generated before the first world day.
const SPIN_UP_DAYS: i64 = 20;
pub const SM_FLOOR: f64 = 0.02;
pub const SM_CEIL: f64 = 0.6;

/// `SM(t, p) = clamp(mean + std·F(p) + A·sin(2π·t/year + φ(p)) + Σ rain)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmField {
    pub cfg: SmFieldConfig,
    spatial: FourierField,
    phase: FourierField,
    /// Sorted by time.
    events: Vec<RainEvent>,
}

impl SmField {
    pub fn generate(world: &WorldConfig) -> Self {
        let cfg = world.sm.clone();
        let mut rng = rng_for(world.seed, &[1]);
        let spatial = FourierField::new(cfg.correlation_km, cfg.fourier_features, &mut rng);
        let phase = FourierField::new(4.0 * cfg.correlation_km, 32, &mut rng);
        let mut events = Vec::new();
        let poisson = Poisson::new(cfg.rain_events_per_day).expect("positive rate");
        let first = world.first_day - chrono::Duration::days(SPIN_UP_DAYS);
        for day in crate::timeutil::days_inclusive(first, world.last_day) {
            let mut r = rng_for(world.seed, &[2, day.num_days_from_ce() as u64]);
            let n = poisson.sample(&mut r) as usize;
            for _ in 0..n {
                let lat = r.random_range(world.lat_min..=world.lat_max);
                let lon = r.random_range(world.lon_min..=world.lon_max);
                events.push(RainEvent {
                    time: day_start(day) + r.random_range(0.0..SECONDS_PER_DAY),
                    center: xyz_km(GeoPoint::new(lat, lon).expect("box validated")),
                    radius_km: cfg.rain_radius_km * r.random_range(0.5..1.5),
                    amount: cfg.rain_amount * r.random_range(0.5..1.5),
                });
            }
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Self { cfg, spatial, phase, events }
    }

    /// Static spatial anomaly (unit variance) before scaling.
    pub fn spatial_anomaly(&self, p: GeoPoint) -> f64 {
        self.spatial.at(p)
    }

    pub fn events(&self) -> &[RainEvent] {
        &self.events
    }

    fn rain_at(&self, t: Timestamp, x: &[f64; 3]) -> f64 {
        let tau = self.cfg.drydown_days * SECONDS_PER_DAY;
        let lo = self.events.partition_point(|e| e.time < t - RAIN_MEMORY * tau);
        self.events[lo..]
            .iter()
            .take_while(|e| e.time <= t)
            .map(|e| e.amount * (-(t - e.time) / tau).exp() * (-chord2(x, &e.center) / (2.0 * e.radius_km.powi(2))).exp())
            .sum()
    }

    /// Unclamped value; useful for inspecting the construction.
    pub fn raw(&self, t: Timestamp, p: GeoPoint) -> f64 {
        let x = xyz_km(p);
        let c = &self.cfg;
        let year = 365.25 * SECONDS_PER_DAY;
        let season = c.seasonal_amplitude * (2.0 * PI * t / year + PI * p.lon() / 180.0 + self.phase.at_xyz(&x)).sin();
        c.mean + c.spatial_std * self.spatial.at_xyz(&x) + season + self.rain_at(t, &x)
    }

    /// Ground-truth soil moisture, m³/m³.
    pub fn at(&self, t: Timestamp, p: GeoPoint) -> f64 {
        self.raw(t, p).clamp(SM_FLOOR, SM_CEIL)
    }
}
