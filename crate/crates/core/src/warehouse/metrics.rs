use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{DdmMetrics, DdmObservation, DDM_DOPPLER_COLS};
use crate::MISSING;

/// GPS L1 C/A carrier wavelength.
pub const GPS_L1_WAVELENGTH_M: f64 = 0.190293672798;

/// Delay rows averaged for the noise floor (earliest delays, ahead of the specular bin).
pub const NOISE_ROWS: [usize; 2] = [0, 1];

/// Transmitter EIRP (P_t·G_t, watts) per PRN for the coherent link budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectivityCalibration {
    pub default_eirp_w: f64,
    #[serde(default)]
    pub per_prn_eirp_w: BTreeMap<u8, f64>,
    pub wavelength_m: f64,
}

impl Default for ReflectivityCalibration {
    fn default() -> Self {
        Self { default_eirp_w: 478.0, per_prn_eirp_w: BTreeMap::new(), wavelength_m: GPS_L1_WAVELENGTH_M }
    }
}

impl ReflectivityCalibration {
    pub fn eirp_w(&self, prn: u8) -> f64 {
        self.per_prn_eirp_w.get(&prn).copied().unwrap_or(self.default_eirp_w)
    }

    /// Linear coherent reflectivity implied by a peak power for the observation's geometry.
    pub fn reflectivity_linear(&self, obs: &DdmObservation, peak_w: f64) -> f64 {
        let (r_ts, r_sr) = obs.rx_tx_ranges_m;
        let g_r = 10f64.powf(obs.sp_rx_gain / 10.0);
        let four_pi2 = (4.0 * PI).powi(2);
        peak_w * four_pi2 * (r_ts + r_sr).powi(2) / (self.eirp_w(obs.prn) * g_r * self.wavelength_m.powi(2))
    }

    /// Peak power that produces linear reflectivity `gamma` (inverse of [`Self::reflectivity_linear`]).
    pub fn peak_for_reflectivity(&self, obs: &DdmObservation, gamma: f64) -> f64 {
        let (r_ts, r_sr) = obs.rx_tx_ranges_m;
        let g_r = 10f64.powf(obs.sp_rx_gain / 10.0);
        let four_pi2 = (4.0 * PI).powi(2);
        gamma * self.eirp_w(obs.prn) * g_r * self.wavelength_m.powi(2) / (four_pi2 * (r_ts + r_sr).powi(2))
    }
}

/// Peak power, noise floor and coherent reflectivity of an observation.
pub fn compute_ddm_metrics(obs: &DdmObservation, cal: &ReflectivityCalibration) -> DdmMetrics {
    let peak = obs.ddm.max();
    let noise_sum: f64 = NOISE_ROWS.iter().flat_map(|&r| obs.ddm.bins[r].iter()).sum();
    let noise = noise_sum / (NOISE_ROWS.len() * DDM_DOPPLER_COLS) as f64;
    let reflectivity_db = if peak > 0.0 { 10.0 * cal.reflectivity_linear(obs, peak).log10() } else { MISSING };
    DdmMetrics { peak_power_w: peak, noise_floor_w: noise, reflectivity_db }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warehouse::testutil::obs_at;
    use crate::warehouse::{Ddm, DDM_DELAY_ROWS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_bin_ddm() {
        let mut o = obs_at(10.0, 10.0, 0.0);
        o.ddm = Ddm::zeros();
        o.ddm.bins[9][4] = 3.5e-17;
        let m = compute_ddm_metrics(&o, &ReflectivityCalibration::default());
        assert_eq!(m.peak_power_w, 3.5e-17);
        assert_eq!(m.noise_floor_w, 0.0);
        assert!(m.reflectivity_db.is_finite());
    }

    #[test]
    fn doubling_power_adds_3db() {
        let o = obs_at(10.0, 10.0, 0.0);
        let cal = ReflectivityCalibration::default();
        let a = compute_ddm_metrics(&o, &cal);
        let mut o2 = o.clone();
        o2.ddm = o.ddm.scaled(2.0);
        let b = compute_ddm_metrics(&o2, &cal);
        assert!((b.reflectivity_db - a.reflectivity_db - 10.0 * 2f64.log10()).abs() < 1e-12);
        assert!((b.noise_floor_w - 2.0 * a.noise_floor_w).abs() < 1e-30);
    }

    #[test]
    fn all_zero_ddm_has_sentinel_reflectivity() {
        let mut o = obs_at(10.0, 10.0, 0.0);
        o.ddm = Ddm::zeros();
        let m = compute_ddm_metrics(&o, &ReflectivityCalibration::default());
        assert_eq!(m.peak_power_w, 0.0);
        assert_eq!(m.reflectivity_db, MISSING);
    }

    #[test]
    fn random_ddms_match_full_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cal = ReflectivityCalibration::default();
        for _ in 0..200 {
            let mut o = obs_at(0.0, 0.0, 0.0);
            for r in 0..DDM_DELAY_ROWS {
                for c in 0..DDM_DOPPLER_COLS {
                    o.ddm.bins[r][c] = rng.random::<f64>() * 1e-16;
                }
            }
            let m = compute_ddm_metrics(&o, &cal);
            let mut peak = f64::MIN;
            let mut noise = 0.0;
            for r in 0..DDM_DELAY_ROWS {
                for c in 0..DDM_DOPPLER_COLS {
                    peak = peak.max(o.ddm.bins[r][c]);
                    if r < 2 {
                        noise += o.ddm.bins[r][c];
                    }
                }
            }
            assert_eq!(m.peak_power_w, peak);
            assert!((m.noise_floor_w - noise / 22.0).abs() <= 1e-12 * m.noise_floor_w);
        }
    }

    #[test]
    fn link_budget_inverts() {
        let o = obs_at(0.0, 0.0, 0.0);
        let cal = ReflectivityCalibration::default();
        let p = cal.peak_for_reflectivity(&o, 0.05);
        assert!((cal.reflectivity_linear(&o, p) - 0.05).abs() < 1e-15);
    }
}
