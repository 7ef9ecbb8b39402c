//! Finite-difference verification of the analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{build_network, Network};
use super::train::TensorSet;
use super::{ModelError, NetworkConfig};
use crate::conditioning::FeatureBundle;
use crate::scalar::Scalar;
use crate::warehouse::DDM_BINS;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorError {
    pub name: String,
    /// `‖g_analytic − g_fd‖ / max(‖g_analytic‖, ‖g_fd‖)`.
    pub rel_error: f64,
    pub norm: f64,
}

/// Per-tensor comparison of the mean-squared-error gradient on `set` against
/// central differences with step `h`. Dropout is not applied.
pub fn gradient_check<S: Scalar>(net: &Network<S>, set: &TensorSet<S>, h: f64) -> Vec<TensorError> {
    let idx: Vec<usize> = (0..set.n).collect();
    let (_, grad) = net.loss_grad(set, &idx, None);
    let mut probe = net.clone();
    net.manifest()
        .iter()
        .map(|t| {
            let (mut d2, mut a2, mut n2) = (0.0, 0.0, 0.0);
            for k in t.offset..t.offset + t.len() {
                let p0 = probe.params()[k];
                probe.params_mut()[k] = S::of(p0.f64() + h);
                let lp = probe.loss_grad(set, &idx, None).0;
                probe.params_mut()[k] = S::of(p0.f64() - h);
                let lm = probe.loss_grad(set, &idx, None).0;
                probe.params_mut()[k] = p0;
                let num = (lp - lm) / (2.0 * h);
                let ana = grad[k].f64();
                d2 += (ana - num).powi(2);
                a2 += ana * ana;
                n2 += num * num;
            }
            let norm = a2.sqrt().max(n2.sqrt());
            let rel_error = if norm > 0.0 { d2.sqrt() / norm } else { d2.sqrt() };
            TensorError { name: t.name.clone(), rel_error, norm }
        })
        .collect()
}

/// A network and batch whose loss is smooth within the probe radius.
pub struct ProbePoint {
    pub net: Network<f64>,
    pub set: TensorSet<f64>,
    pub seed: u64,
    pub margin: f64,
}

/// Searches seeds for an evaluation point at least `min_margin` away from
/// every leaky-ReLU kink and pooling switch (see [`Network::kink_margin`]).
/// Each candidate keeps the seeded weight init, draws biases in (−1, 1) and a
/// single sample with a flat DDM level and random ancillary values. A flat
/// DDM keeps the number of distinct pre-activations small (only the zero
/// padding breaks translation symmetry), which is what makes such a point
/// findable at all for a 17×11 input.
pub fn find_probe_point(cfg: &NetworkConfig, min_margin: f64, max_tries: u64) -> Result<Option<ProbePoint>, ModelError> {
    for seed in 0..max_tries {
        let c = NetworkConfig { seed, ..cfg.clone() };
        let mut net: Network<f64> = build_network(&c)?;
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let biases: Vec<String> = net.manifest().iter().filter(|t| t.name.ends_with(".bias")).map(|t| t.name.clone()).collect();
        for n in biases {
            for b in net.tensor_mut(&n).expect("manifest tensor").iter_mut() {
                *b = r.random_range(-1.0..1.0);
            }
        }
        let level = r.random_range(0.2..1.5);
        let bundle = FeatureBundle {
            ddm: vec![level; DDM_BINS],
            ancillary: (0..c.n_ancillary()).map(|_| r.random_range(-1.0..1.0)).collect(),
        };
        let target = r.random_range(0.05..0.45);
        let set = TensorSet::from_bundles(&[bundle], Some(&[target]), &c.ancillary_inputs)?;
        let margin = net.kink_margin(&set);
        if margin >= min_margin {
            return Ok(Some(ProbePoint { net, set, seed, margin }));
        }
    }
    Ok(None)
}
