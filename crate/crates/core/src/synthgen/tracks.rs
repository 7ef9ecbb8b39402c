//! Orbit-like specular-point tracks.

use chrono::{Datelike, NaiveDate};
use rand::Rng;

use super::{rng_for, WorldConfig};
use crate::geogrid::{normalize_lon, GeoPoint, EARTH_AUTHALIC_RADIUS_KM};
use crate::timeutil::{day_start, Timestamp, SECONDS_PER_DAY};

/// Specular-point ground speed of a low Earth orbit receiver.
pub const GROUND_SPEED_KM_S: f64 = 6.4;
/// Receiver altitude used for the specular-to-receiver range.
pub const RECEIVER_ALTITUDE_M: f64 = 525e3;
/// GPS orbit radius minus Earth radius, nadir transmitter range.
pub const TRANSMITTER_ALTITUDE_M: f64 = 20.2e6;
pub const MAX_INCIDENCE_DEG: f64 = 70.0;

/// Geometry of one sample before a DDM exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub track: usize,
    pub timestamp: Timestamp,
    pub sp: GeoPoint,
    pub incidence_deg: f64,
    pub sp_rx_gain: f64,
    pub rx_tx_ranges_m: (f64, f64),
    pub spacecraft_id: u8,
    pub prn: u8,
    pub sample_rate_hz: u8,
}

/// Destination `d_km` along initial `bearing` (radians) on the sphere.
pub fn destination(p: GeoPoint, d_km: f64, bearing: f64) -> (f64, f64) {
    let delta = d_km / EARTH_AUTHALIC_RADIUS_KM;
    let (phi, lam) = (p.lat().to_radians(), p.lon().to_radians());
    let phi2 = (phi.sin() * delta.cos() + phi.cos() * delta.sin() * bearing.cos()).asin();
    let lam2 = lam + (bearing.sin() * delta.sin() * phi.cos()).atan2(delta.cos() - phi.sin() * phi2.sin());
    (phi2.to_degrees(), normalize_lon(lam2.to_degrees()))
}

/// Ranges for an incidence angle: receiver slant range and transmitter range.
pub fn ranges_for(incidence_deg: f64) -> (f64, f64) {
    let c = incidence_deg.to_radians().cos();
    (TRANSMITTER_ALTITUDE_M / (0.3 + 0.7 * c), RECEIVER_ALTITUDE_M / c)
}

/// Great-circle tracks inside the world box. Each track has its own
/// (spacecraft, PRN) pair; a track ends when it leaves the box.
pub fn simulate_tracks(cfg: &WorldConfig, day: NaiveDate) -> Vec<TrackPoint> {
    let t = &cfg.tracks;
    let rate = t.sample_rate_hz as f64;
    let step_km = GROUND_SPEED_KM_S / rate;
    let duration = t.samples_per_track as f64 / rate;
    let mut out = Vec::new();
    let day_key = day.num_days_from_ce() as u64;
    for k in 0..t.tracks_per_day {
        let mut r = rng_for(cfg.seed, &[4, day_key, k as u64]);
        let start = GeoPoint::new(r.random_range(cfg.lat_min..=cfg.lat_max), r.random_range(cfg.lon_min..=cfg.lon_max))
            .expect("box validated");
        let bearing = r.random_range(0.0..std::f64::consts::TAU);
        let t0 = day_start(day) + r.random_range(0.0..(SECONDS_PER_DAY - duration).max(1.0));
        let spacecraft_id = 1 + (k % 8) as u8;
        let prn = 1 + ((k / 8 + day_key as usize) % 32) as u8;
        let inc0 = r.random_range(0.0..MAX_INCIDENCE_DEG);
        let inc_rate = r.random_range(-0.02..0.02);
        let gain0 = r.random_range(-1.0..14.0);
        for i in 0..t.samples_per_track {
            let dt = i as f64 / rate;
            let (lat, lon) = destination(start, i as f64 * step_km, bearing);
            if !(cfg.lat_min..=cfg.lat_max).contains(&lat) || !(cfg.lon_min..=cfg.lon_max).contains(&lon) {
                break;
            }
            let incidence_deg = (inc0 + inc_rate * dt).clamp(0.0, MAX_INCIDENCE_DEG - 1e-9);
            out.push(TrackPoint {
                track: k,
                timestamp: t0 + dt,
                sp: GeoPoint::new(lat, lon).expect("inside box"),
                incidence_deg,
                sp_rx_gain: gain0 + 2.0 * (dt / 40.0).sin(),
                rx_tx_ranges_m: ranges_for(incidence_deg),
                spacecraft_id,
                prn,
                sample_rate_hz: t.sample_rate_hz,
            });
        }
    }
    out
}
