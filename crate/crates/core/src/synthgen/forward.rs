//! Closed-form soil moisture → DDM forward model and its inverse.
//!
//! For soil moisture `sm`, vegetation water content `vwc`, roughness proxy
//! `σ` (elevation standard deviation, m) and incidence `θ`:
//!
//! ```text
//! Γ_bare = 10^((g0_db + k_db·sm) / 10)
//! Γ      = Γ_bare · exp(−2·b·vwc / cos θ) · exp(−σ / σ_r)
//! A      = c_sc · P(Γ)                      P: coherent link budget, ReflectivityCalibration::peak_for_reflectivity
//! w_d    = w_d0 · (1 + σ / σ_w),  w_f = w_f0 · (1 + σ / σ_w)
//! s(i,j) = exp(−½((i − i0)/w_d)² − ½((j − j0)/w_f)²)   for i ≥ FIRST_SIGNAL_ROW, else 0
//! DDM_ij = (N0 + A·s(i,j)) · (1 + n·ε_ij),  ε ~ N(0, 1), clamped at 0
//! snr_db = 10·log10(A / N0)
//! ```
//!
//! `c_sc` is a fixed per-spacecraft gain factor. The shape peaks at exactly
//! `(i0, j0)` and is zero in the noise rows, so without noise the peak is
//! `N0 + A` and the noise floor is `N0`, which [`ForwardModel::invert`] uses.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::warehouse::{Ddm, DdmObservation, ReflectivityCalibration, DDM_DELAY_ROWS, DDM_DOPPLER_COLS};

pub const SPECULAR_ROW: usize = 7;
pub const SPECULAR_COL: usize = 5;
/// Delay rows above this index carry no reflected power.
pub const FIRST_SIGNAL_ROW: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardModel {
    pub g0_db: f64,
    pub k_db: f64,
    /// Vegetation optical depth per unit VWC.
    pub b: f64,
    /// Roughness e-folding for the coherent peak, m.
    pub roughness_m: f64,
    /// Roughness that doubles the DDM width, m.
    pub widening_m: f64,
    pub delay_width: f64,
    pub doppler_width: f64,
    pub noise_floor_w: f64,
    /// Relative spread of the per-spacecraft gain factor across ids 1..=8.
    pub spacecraft_spread: f64,
}

impl Default for ForwardModel {
    fn default() -> Self {
        Self {
            g0_db: -22.0,
            k_db: 25.0,
            b: 0.12,
            roughness_m: 200.0,
            widening_m: 100.0,
            delay_width: 1.2,
            doppler_width: 0.9,
            noise_floor_w: 4e-18,
            spacecraft_spread: 0.04,
        }
    }
}

/// Surface context the forward model depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceState {
    pub vwc_kg_m2: f64,
    pub elevation_std_m: f64,
}

/// Noiseless intermediate quantities plus the final map.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDdm {
    pub ddm: Ddm,
    pub ddm_snr: f64,
    pub reflectivity: f64,
    pub signal_w: f64,
}

impl ForwardModel {
    pub fn spacecraft_factor(&self, sc: u8) -> f64 {
        1.0 + self.spacecraft_spread * (sc as f64 - 4.5) / 7.0
    }

    fn transmissivity(&self, surf: SurfaceState, incidence_deg: f64) -> f64 {
        let veg = (-2.0 * self.b * surf.vwc_kg_m2 / incidence_deg.to_radians().cos()).exp();
        veg * (-surf.elevation_std_m / self.roughness_m).exp()
    }

    /// Linear reflectivity at the antenna for `sm`.
    pub fn reflectivity(&self, sm: f64, surf: SurfaceState, incidence_deg: f64) -> f64 {
        10f64.powf((self.g0_db + self.k_db * sm) / 10.0) * self.transmissivity(surf, incidence_deg)
    }

    pub fn shape(&self, surf: SurfaceState) -> [[f64; DDM_DOPPLER_COLS]; DDM_DELAY_ROWS] {
        let widen = 1.0 + surf.elevation_std_m / self.widening_m;
        let (wd, wf) = (self.delay_width * widen, self.doppler_width * widen);
        let mut s = [[0.0; DDM_DOPPLER_COLS]; DDM_DELAY_ROWS];
        for (i, row) in s.iter_mut().enumerate().skip(FIRST_SIGNAL_ROW) {
            for (j, v) in row.iter_mut().enumerate() {
                let di = (i as f64 - SPECULAR_ROW as f64) / wd;
                let dj = (j as f64 - SPECULAR_COL as f64) / wf;
                *v = (-0.5 * (di * di + dj * dj)).exp();
            }
        }
        s
    }

    /// DDM for `obs`'s geometry. `noise` is the relative per-bin standard
    /// deviation; zero gives the exact closed form.
    pub fn synthesize(
        &self,
        sm: f64,
        surf: SurfaceState,
        obs: &DdmObservation,
        cal: &ReflectivityCalibration,
        noise: f64,
        rng: &mut impl Rng,
    ) -> SynthDdm {
        let gamma = self.reflectivity(sm, surf, obs.incidence_deg);
        let signal = self.spacecraft_factor(obs.spacecraft_id) * cal.peak_for_reflectivity(obs, gamma);
        let shape = self.shape(surf);
        let mut ddm = Ddm::zeros();
        for i in 0..DDM_DELAY_ROWS {
            for j in 0..DDM_DOPPLER_COLS {
                let clean = self.noise_floor_w + signal * shape[i][j];
                ddm.bins[i][j] = if noise > 0.0 {
                    let e: f64 = rng.sample(StandardNormal);
                    (clean * (1.0 + noise * e)).max(0.0)
                } else {
                    clean
                };
            }
        }
        SynthDdm { ddm, ddm_snr: 10.0 * (signal / self.noise_floor_w).log10(), reflectivity: gamma, signal_w: signal }
    }

    /// Soil moisture that produced a noiseless `obs.ddm`.
    pub fn invert(&self, obs: &DdmObservation, surf: SurfaceState, cal: &ReflectivityCalibration) -> f64 {
        let floor = (obs.ddm.bins[0].iter().chain(&obs.ddm.bins[1]).sum::<f64>()) / (2 * DDM_DOPPLER_COLS) as f64;
        let signal = obs.ddm.bins[SPECULAR_ROW][SPECULAR_COL] - floor;
        let gamma = cal.reflectivity_linear(obs, signal / self.spacecraft_factor(obs.spacecraft_id));
        let bare = gamma / self.transmissivity(surf, obs.incidence_deg);
        (10.0 * bare.log10() - self.g0_db) / self.k_db
    }
}
