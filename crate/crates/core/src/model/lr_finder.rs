//! Learning-rate range test: one geometric sweep of the step size while
//! training, tracking a bias-corrected exponential moving average of the loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::train::{mix, Adam, TensorSet};
use super::ModelError;
use crate::Scalar;

/// Something that can take one optimization step at a given learning rate.
pub trait SweepTarget {
    /// Loss at the current parameters, then one update with step size `lr`.
    fn step(&mut self, lr: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrFinderConfig {
    pub min_lr: f64,
    pub max_lr: f64,
    pub steps: usize,
    pub smoothing: f64,
    /// Stop once the smoothed loss exceeds `blowup × minimum`.
    pub blowup: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LrFinderConfig {
    fn default() -> Self {
        Self { min_lr: 1e-8, max_lr: 1.0, steps: 100, smoothing: 0.9, blowup: 4.0, batch_size: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSweep {
    pub lrs: Vec<f64>,
    pub losses: Vec<f64>,
    pub smoothed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrRange {
    pub low: f64,
    pub high: f64,
    pub steepest: f64,
    pub sweep: LrSweep,
}

/// Runs the sweep and derives `(low, high)`: low is the steepest-descent
/// rate divided by ten, high the last rate before the blow-up.
pub fn run_lr_sweep(target: &mut dyn SweepTarget, cfg: &LrFinderConfig) -> Result<LrRange, ModelError> {
    let err = |m: &str| Err(ModelError::LrFinder(m.to_string()));
    if !(cfg.min_lr > 0.0 && cfg.max_lr > cfg.min_lr && cfg.steps >= 3) {
        return err("need 0 < min_lr < max_lr and at least 3 steps");
    }
    if !(0.0..1.0).contains(&cfg.smoothing) || !(cfg.blowup > 1.0) {
        return err("smoothing must be in [0, 1) and blowup > 1");
    }
    let ratio = (cfg.max_lr / cfg.min_lr).powf(1.0 / (cfg.steps - 1) as f64);
    let mut sweep = LrSweep { lrs: vec![], losses: vec![], smoothed: vec![] };
    let mut avg = 0.0;
    let mut min = f64::INFINITY;
    for i in 0..cfg.steps {
        let lr = cfg.min_lr * ratio.powi(i as i32);
        let loss = target.step(lr);
        if !loss.is_finite() {
            break;
        }
        avg = cfg.smoothing * avg + (1.0 - cfg.smoothing) * loss;
        let s = avg / (1.0 - cfg.smoothing.powi(i as i32 + 1));
        if s > cfg.blowup * min {
            break;
        }
        min = min.min(s);
        sweep.lrs.push(lr);
        sweep.losses.push(loss);
        sweep.smoothed.push(s);
    }
    let n = sweep.lrs.len();
    if n < 2 {
        return err("loss blew up immediately");
    }
    let mut best = (0usize, 0.0f64);
    for i in 0..n - 1 {
        let slope = (sweep.smoothed[i + 1] - sweep.smoothed[i]) / (sweep.lrs[i + 1] / sweep.lrs[i]).ln();
        if slope < best.1 {
            best = (i, slope);
        }
    }
    if best.1 >= 0.0 || !(min < sweep.smoothed[0]) {
        return err("loss never decreased during the sweep");
    }
    let steepest = sweep.lrs[best.0];
    let low = steepest / 10.0;
    let high = sweep.lrs[n - 1];
    if !(low < high) {
        return err("degenerate range");
    }
    Ok(LrRange { low, high, steepest, sweep })
}

struct NetSweep<'a, S: Scalar> {
    net: Network<S>,
    adam: Adam<S>,
    set: &'a TensorSet<S>,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl<S: Scalar> SweepTarget for NetSweep<'_, S> {
    fn step(&mut self, lr: f64) -> f64 {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let idx = &self.order[self.pos..(self.pos + self.batch).min(self.order.len())];
        self.pos += self.batch;
        let (loss, grad) = self.net.loss_grad(self.set, idx, None);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return f64::INFINITY;
        }
        self.adam.step(self.net.params_mut(), &grad, lr);
        loss
    }
}

/// Range test for a network with Adam on `samples`. The input network is not modified.
pub fn find_lr_range<S: Scalar>(net: &Network<S>, samples: &TensorSet<S>, cfg: &LrFinderConfig) -> Result<LrRange, ModelError> {
    if samples.n == 0 {
        return Err(ModelError::EmptySet("range-finder"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 7));
    let mut order: Vec<usize> = (0..samples.n).collect();
    order.shuffle(&mut rng);
    let mut t = NetSweep {
        adam: Adam::new(net.n_params(), 0.9, 0.999, 1e-7),
        net: net.clone(),
        set: samples,
        order,
        pos: 0,
        batch: cfg.batch_size.clamp(1, samples.n),
        rng,
    };
    run_lr_sweep(&mut t, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(w) = ½ Σ λ_i (w_i − ξ_i)² with fresh ξ ~ N(0, 0.01²) per step, i.e.
    /// stochastic gradient descent on a quadratic; stable iff lr < 2 / λ_max.
    struct Quadratic {
        lambda: Vec<f64>,
        w: Vec<f64>,
        rng: ChaCha8Rng,
    }

    impl SweepTarget for Quadratic {
        fn step(&mut self, lr: f64) -> f64 {
            use rand_distr::{Distribution, Normal};
            let noise = Normal::new(0.0, 0.01).unwrap();
            let xi: Vec<f64> = self.w.iter().map(|_| noise.sample(&mut self.rng)).collect();
            let mut loss = 0.0;
            for ((w, l), x) in self.w.iter_mut().zip(&self.lambda).zip(&xi) {
                loss += 0.5 * l * (*w - x).powi(2);
                *w -= lr * l * (*w - x);
            }
            loss
        }
    }

    #[test]
    fn quadratic_range_brackets_stability_bound() {
        for lambda in [vec![1.0, 10.0, 100.0], vec![0.5, 40.0], vec![2.0, 3.0, 50.0, 500.0]] {
            let lmax = lambda.iter().cloned().fold(0.0, f64::max);
            let bound = 2.0 / lmax;
            let mut q = Quadratic { w: vec![1.0; lambda.len()], lambda, rng: ChaCha8Rng::seed_from_u64(3) };
            let cfg = LrFinderConfig { steps: 200, ..LrFinderConfig::default() };
            let r = run_lr_sweep(&mut q, &cfg).unwrap();
            assert!(r.low < bound, "low {} bound {bound}", r.low);
            assert!(r.steepest <= bound, "steepest {} bound {bound}", r.steepest);
            // The smoothed loss only blows up after the stiff mode has been
            // amplified past `blowup × min`, so `high` lands above the bound.
            assert!(r.high >= bound, "high {} bound {bound}", r.high);
            assert!(r.high < 10.0 * bound && r.sweep.lrs.len() < cfg.steps, "high {} bound {bound}", r.high);
        }
    }

    struct Flat;
    impl SweepTarget for Flat {
        fn step(&mut self, lr: f64) -> f64 {
            1.0 + lr
        }
    }

    #[test]
    fn non_decreasing_loss_is_an_error() {
        assert!(matches!(run_lr_sweep(&mut Flat, &LrFinderConfig::default()), Err(ModelError::LrFinder(_))));
    }

    #[test]
    fn network_sweep_is_reproducible() {
        use crate::conditioning::FeatureBundle;
        use crate::model::{build_network, NetworkConfig};
        use rand::Rng;
        let cfg = NetworkConfig {
            channels: vec![2, 2],
            ancillary_dense_width: 4,
            head_dense_widths: vec![8, 4],
            ancillary_inputs: vec!["a".into(), "b".into()],
            dropout_p: 0.0,
            ..NetworkConfig::default()
        };
        let net = build_network::<f32>(&cfg).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let b: Vec<FeatureBundle> = (0..256)
            .map(|_| FeatureBundle { ddm: vec![0.0; 187], ancillary: vec![r.random_range(0.0..1.0), r.random_range(0.0..1.0)] })
            .collect();
        let t: Vec<f64> = b.iter().map(|x| 0.1 + 0.3 * x.ancillary[0]).collect();
        let set = TensorSet::from_bundles(&b, Some(&t), &cfg.ancillary_inputs).unwrap();
        let lc = LrFinderConfig { batch_size: 32, ..LrFinderConfig::default() };
        let a = find_lr_range(&net, &set, &lc).unwrap();
        let c = find_lr_range(&net, &set, &lc).unwrap();
        assert_eq!(a, c);
        assert!(a.low < a.high);
    }
}
