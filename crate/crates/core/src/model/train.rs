use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::ModelError;
use crate::conditioning::FeatureBundle;
use crate::warehouse::{DDM_BINS, DDM_DOPPLER_COLS};
use crate::Scalar;

/// Dense row-major model inputs and targets in the network's scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet<S> {
    pub n: usize,
    pub n_anc: usize,
    pub ddm: Vec<S>,
    pub anc: Vec<S>,
    pub target: Vec<S>,
}

impl<S: Scalar> TensorSet<S> {
    /// Converts bundles, rejecting non-finite values with the offending input named.
    pub fn from_bundles(bundles: &[FeatureBundle], targets: Option<&[f64]>, names: &[String]) -> Result<Self, ModelError> {
        let n_anc = names.len();
        let mut ddm = Vec::with_capacity(bundles.len() * DDM_BINS);
        let mut anc = Vec::with_capacity(bundles.len() * n_anc);
        for (i, b) in bundles.iter().enumerate() {
            if b.ddm.len() != DDM_BINS || b.ancillary.len() != n_anc {
                return Err(ModelError::Shape(format!(
                    "sample {i}: ddm {} (want {DDM_BINS}), ancillary {} (want {n_anc})",
                    b.ddm.len(),
                    b.ancillary.len()
                )));
            }
            if let Some(k) = b.ddm.iter().position(|v| !v.is_finite()) {
                let feature = format!("ddm[{}][{}]", k / DDM_DOPPLER_COLS, k % DDM_DOPPLER_COLS);
                return Err(ModelError::NonFinite { feature, sample: i });
            }
            if let Some(k) = b.ancillary.iter().position(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { feature: names[k].clone(), sample: i });
            }
            ddm.extend(b.ddm.iter().map(|v| S::of(*v)));
            anc.extend(b.ancillary.iter().map(|v| S::of(*v)));
        }
        let target = match targets {
            Some(t) => {
                if t.len() != bundles.len() {
                    return Err(ModelError::Shape(format!("{} targets for {} samples", t.len(), bundles.len())));
                }
                if let Some(i) = t.iter().position(|v| !v.is_finite()) {
                    return Err(ModelError::NonFinite { feature: "target".into(), sample: i });
                }
                t.iter().map(|v| S::of(*v)).collect()
            }
            None => vec![S::zero(); bundles.len()],
        };
        Ok(Self { n: bundles.len(), n_anc, ddm, anc, target })
    }

    pub fn ddm_row(&self, i: usize) -> &[S] {
        &self.ddm[i * DDM_BINS..(i + 1) * DDM_BINS]
    }

    pub fn anc_row(&self, i: usize) -> &[S] {
        &self.anc[i * self.n_anc..(i + 1) * self.n_anc]
    }

    pub fn targets_f64(&self) -> Vec<f64> {
        self.target.iter().map(|v| v.f64()).collect()
    }

    /// Rows `idx` as a new set.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut out = Self { n: idx.len(), n_anc: self.n_anc, ddm: vec![], anc: vec![], target: vec![] };
        for &i in idx {
            out.ddm.extend_from_slice(self.ddm_row(i));
            out.anc.extend_from_slice(self.anc_row(i));
            out.target.push(self.target[i]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Triangular cycle between `lr` and `max_lr` over `2 * step_size` batches.
    Triangular { max_lr: f64, step_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    /// Permits a learning rate outside [1e-5, 1e-3].
    pub allow_lr_override: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 30,
            batch_size: 64,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            schedule: LrSchedule::Constant,
            allow_lr_override: false,
        }
    }
}

pub const LR_RANGE: (f64, f64) = (1e-5, 1e-3);

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::TrainConfig(m));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr {}", self.lr));
        }
        if !self.allow_lr_override && !(LR_RANGE.0..=LR_RANGE.1).contains(&self.lr) {
            return bad(format!("lr {} outside [{}, {}] without override", self.lr, LR_RANGE.0, LR_RANGE.1));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("Adam parameters out of range".into());
        }
        if let LrSchedule::Triangular { max_lr, step_size } = self.schedule {
            if !(max_lr >= self.lr) || step_size == 0 {
                return bad("triangular schedule needs max_lr >= lr and step_size > 0".into());
            }
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Triangular { max_lr, step_size } => {
                let cycle_pos = (step % (2 * step_size)) as f64 / step_size as f64;
                let x = if cycle_pos <= 1.0 { cycle_pos } else { 2.0 - cycle_pos };
                self.lr + (max_lr - self.lr) * x
            }
        }
    }
}

pub(crate) struct Adam<S> {
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
    b1: f64,
    b2: f64,
    eps: S,
}

impl<S: Scalar> Adam<S> {
    pub(crate) fn new(n: usize, b1: f64, b2: f64, eps: f64) -> Self {
        Self { m: vec![S::zero(); n], v: vec![S::zero(); n], t: 0, b1, b2, eps: S::of(eps) }
    }

    pub(crate) fn step(&mut self, params: &mut [S], grad: &[S], lr: f64) {
        self.t += 1;
        let (b1, b2) = (S::of(self.b1), S::of(self.b2));
        let (one_b1, one_b2) = (S::one() - b1, S::one() - b2);
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        let step = S::of(lr * c2.sqrt() / c1);
        let eps = self.eps * S::of(c2.sqrt());
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            params[i] -= step * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    pub best: Network<S>,
    pub last: Network<S>,
    pub best_epoch: usize,
    pub curve: Vec<EpochLoss>,
}

impl<S: Scalar> TrainOutcome<S> {
    pub fn best_dev_loss(&self) -> f64 {
        self.curve[self.best_epoch - 1].dev_loss
    }
}

/// Stable 64-bit mixer for deriving per-batch streams.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<S: Scalar> Network<S> {
    /// Infer-mode mean squared error.
    pub fn mse(&self, set: &TensorSet<S>) -> f64 {
        let pred = self.predict_set(set);
        pred.iter().zip(&set.target).map(|(p, t)| (p - t.f64()).powi(2)).sum::<f64>() / set.n as f64
    }
}

/// Minimizes MSE with Adam. Batch order and dropout masks are functions of
/// `tc.seed` only; the best-dev snapshot and the final weights are both returned.
pub fn train<S: Scalar>(
    net: &Network<S>,
    train: &TensorSet<S>,
    dev: &TensorSet<S>,
    tc: &TrainConfig,
) -> Result<TrainOutcome<S>, ModelError> {
    tc.validate()?;
    if train.n == 0 {
        return Err(ModelError::EmptySet("training"));
    }
    if dev.n == 0 {
        return Err(ModelError::EmptySet("development"));
    }
    let n_anc = net.config().n_ancillary();
    if train.n_anc != n_anc || dev.n_anc != n_anc {
        return Err(ModelError::Shape(format!("network expects {n_anc} ancillary inputs")));
    }
    let mut cur = net.clone();
    let mut adam = Adam::new(cur.n_params(), tc.beta1, tc.beta2, tc.eps);
    let mut order: Vec<usize> = (0..train.n).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(tc.seed, 1));
    let mut curve = Vec::with_capacity(tc.epochs);
    let mut best = (usize::MAX, f64::INFINITY, cur.clone());
    let mut step = 0usize;
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sse = 0.0;
        for (bi, batch) in order.chunks(tc.batch_size).enumerate() {
            let seed = (cur.config().dropout_p > 0.0).then(|| mix(mix(tc.seed, epoch as u64), bi as u64));
            let (loss, grad) = cur.loss_grad(train, batch, seed);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::Diverged { epoch, loss });
            }
            sse += loss * batch.len() as f64;
            adam.step(cur.params_mut(), &grad, tc.lr_at(step));
            step += 1;
        }
        let train_loss = sse / train.n as f64;
        let dev_loss = cur.mse(dev);
        if !dev_loss.is_finite() || cur.params().iter().any(|p| !p.is_finite()) {
            return Err(ModelError::Diverged { epoch, loss: dev_loss });
        }
        curve.push(EpochLoss { epoch, train_loss, dev_loss });
        if dev_loss < best.1 {
            best = (epoch, dev_loss, cur.clone());
        }
    }
    Ok(TrainOutcome { best: best.2, last: cur, best_epoch: best.0, curve })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::model::{build_network, NetworkConfig};

    fn small_cfg(n_anc: usize) -> NetworkConfig {
        NetworkConfig {
            channels: vec![2, 4],
            ancillary_dense_width: 8,
            head_dense_widths: vec![16, 8],
            ancillary_inputs: (0..n_anc).map(|i| format!("x{i}")).collect(),
            dropout_p: 0.0,
            seed: 3,
            ..NetworkConfig::default()
        }
    }

    /// Target is an affine map of the first two inputs; the DDM is zero.
    fn affine_task(n: usize, seed: u64) -> (Vec<FeatureBundle>, Vec<f64>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Vec::new();
        let mut t = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..3).map(|_| r.random_range(0.0..1.0)).collect();
            t.push(0.05 + 0.25 * x[0] + 0.15 * x[1]);
            b.push(FeatureBundle { ddm: vec![0.0; DDM_BINS], ancillary: x });
        }
        (b, t)
    }

    /// Normal-equation least squares on [1, x0, x1, x2].
    fn lstsq_rmse(b: &[FeatureBundle], t: &[f64]) -> f64 {
        let rows: Vec<[f64; 4]> = b.iter().map(|s| [1.0, s.ancillary[0], s.ancillary[1], s.ancillary[2]]).collect();
        let mut a = [[0.0; 5]; 4];
        for (r, y) in rows.iter().zip(t) {
            for i in 0..4 {
                for j in 0..4 {
                    a[i][j] += r[i] * r[j];
                }
                a[i][4] += r[i] * y;
            }
        }
        for i in 0..4 {
            let p = a[i][i];
            for j in i..5 {
                a[i][j] /= p;
            }
            for k in 0..4 {
                if k != i {
                    let f = a[k][i];
                    for j in i..5 {
                        a[k][j] -= f * a[i][j];
                    }
                }
            }
        }
        let coef: Vec<f64> = (0..4).map(|i| a[i][4]).collect();
        let sse: f64 = rows.iter().zip(t).map(|(r, y)| (r.iter().zip(&coef).map(|(x, c)| x * c).sum::<f64>() - y).powi(2)).sum();
        (sse / t.len() as f64).sqrt()
    }

    #[test]
    fn affine_task_reaches_least_squares_skill() {
        let (tb, tt) = affine_task(1500, 1);
        let (db, dt) = affine_task(300, 2);
        assert!(lstsq_rmse(&db, &dt) < 1e-10);
        let cfg = small_cfg(3);
        let net = build_network::<f32>(&cfg).unwrap();
        let tr = TensorSet::from_bundles(&tb, Some(&tt), &cfg.ancillary_inputs).unwrap();
        let dv = TensorSet::from_bundles(&db, Some(&dt), &cfg.ancillary_inputs).unwrap();
        let tc = TrainConfig { epochs: 30, batch_size: 32, lr: 1e-3, seed: 9, ..TrainConfig::default() };
        let out = train(&net, &tr, &dv, &tc).unwrap();
        assert_eq!(out.curve.len(), 30);
        let rmse = out.best_dev_loss().sqrt();
        assert!(rmse < 0.02, "dev rmse {rmse}");
        assert!((out.best.mse(&dv) - out.best_dev_loss()).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_freezes_weights() {
        let (tb, tt) = affine_task(100, 1);
        let cfg = small_cfg(3);
        let net = build_network::<f64>(&cfg).unwrap();
        let tr = TensorSet::from_bundles(&tb, Some(&tt), &cfg.ancillary_inputs).unwrap();
        let tc = TrainConfig { epochs: 3, lr: 0.0, allow_lr_override: true, ..TrainConfig::default() };
        let out = train(&net, &tr, &tr, &tc).unwrap();
        assert_eq!(out.last.params(), net.params());
        let d: Vec<f64> = out.curve.iter().map(|e| e.dev_loss).collect();
        assert!(d.windows(2).all(|w| w[0] == w[1]));
        let tl: Vec<f64> = out.curve.iter().map(|e| e.train_loss).collect();
        assert!(tl.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12 * w[0]));
        assert!(train(&net, &tr, &tr, &TrainConfig { lr: 0.0, ..tc.clone() }).is_ok());
        assert!(matches!(
            train(&net, &tr, &tr, &TrainConfig { lr: 0.01, allow_lr_override: false, ..tc }),
            Err(ModelError::TrainConfig(_))
        ));
    }

    #[test]
    fn duplicated_data_with_doubled_batch_tracks_the_original_curve() {
        let (tb, tt) = affine_task(400, 4);
        let cfg = small_cfg(3);
        let net = build_network::<f64>(&cfg).unwrap();
        let tr = TensorSet::from_bundles(&tb, Some(&tt), &cfg.ancillary_inputs).unwrap();
        let idx: Vec<usize> = (0..400).chain(0..400).collect();
        let tr2 = tr.subset(&idx);
        let tc = TrainConfig { epochs: 6, batch_size: 20, seed: 2, ..TrainConfig::default() };
        let a = train(&net, &tr, &tr, &tc).unwrap();
        let b = train(&net, &tr2, &tr, &TrainConfig { batch_size: 40, ..tc }).unwrap();
        for (x, y) in a.curve.iter().zip(&b.curve) {
            let rel = (x.dev_loss - y.dev_loss).abs() / x.dev_loss;
            assert!(rel < 0.25, "epoch {}: {} vs {}", x.epoch, x.dev_loss, y.dev_loss);
        }
    }

    #[test]
    fn fixed_seed_reproduces_curve_and_weights() {
        let (tb, tt) = affine_task(200, 5);
        let cfg = NetworkConfig { dropout_p: 0.03, ..small_cfg(3) };
        let net = build_network::<f32>(&cfg).unwrap();
        let tr = TensorSet::from_bundles(&tb, Some(&tt), &cfg.ancillary_inputs).unwrap();
        let tc = TrainConfig { epochs: 3, batch_size: 50, seed: 8, ..TrainConfig::default() };
        let a = train(&net, &tr, &tr, &tc).unwrap();
        let b = train(&net, &tr, &tr, &tc).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.last.params(), b.last.params());
        let c = train(&net, &tr, &tr, &TrainConfig { seed: 9, ..tc }).unwrap();
        assert_ne!(a.curve, c.curve);
    }

    #[test]
    fn divergence_reports_epoch() {
        let (tb, mut tt) = affine_task(64, 6);
        // Squared error overflows to infinity on the first batch holding this sample.
        tt[0] = 1e200;
        let cfg = small_cfg(3);
        let net = build_network::<f64>(&cfg).unwrap();
        let tr = TensorSet::from_bundles(&tb, Some(&tt), &cfg.ancillary_inputs).unwrap();
        let tc = TrainConfig { epochs: 5, lr: 1.0, allow_lr_override: true, ..TrainConfig::default() };
        match train(&net, &tr, &tr, &tc) {
            Err(ModelError::Diverged { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn triangular_schedule_cycles() {
        let tc = TrainConfig { lr: 1e-5, schedule: LrSchedule::Triangular { max_lr: 1e-3, step_size: 10 }, ..TrainConfig::default() };
        tc.validate().unwrap();
        assert_eq!(tc.lr_at(0), 1e-5);
        assert!((tc.lr_at(10) - 1e-3).abs() < 1e-18);
        assert_eq!(tc.lr_at(20), 1e-5);
    }
}
