//! Model-analysis harnesses: input ablation, input-noise sensitivity and
//! multi-seed ensemble dispersion.
//!
//! Every run inside a study is scored against the same evaluation samples;
//! each run hashes the list it actually scored and the reducer refuses to
//! merge runs whose hashes differ.
//!
//! Results are JSON documents ([`StudyResult`]):
//!
//! ```text
//! {
//!   "kind": "ablation" | "noise_sensitivity" | "ensemble",
//!   "eval_hash": "<sha256 hex of the evaluation sample identities>",
//!   "eval_count": <n>,
//!   "baseline": { "correlation": r, "rmse": e },
//!   "runs": [ { "label", "seed", "spec", "use_ddm", "inputs", "n_params",
//!               "metrics": { "correlation", "rmse" } | null, "error": "…" | null } ],
//!   "dispersion": null | { "members", "survivors", "correlation_mean", … },
//!   "warnings": [ "…" ]
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::conditioning::{apply_normalization, fit_normalization, DdmStatsMode, Feature, NormError, NormStats};
use crate::model::{build_network, train, ModelError, Network, NetworkConfig, TensorSet, TrainConfig};
use crate::synthgen::{splitmix, unit_interval};
use crate::validation::{pearson, rmse};
use crate::warehouse::Sample;
use crate::Scalar;

/// Ablation member naming the convolutional DDM branch.
pub const DDM_BRANCH: &str = "ddm";

/// Full-scale per-sample ensemble dispersion reported for the operational
/// model, m³/m³ (mean, spread). Carried as metadata only.
pub const REFERENCE_DISPERSION: (f64, f64) = (0.008, 0.005);

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error("evaluation set changed between runs: {0} vs {1}")]
    EvalMismatch(String, String),
    #[error("every ensemble member failed")]
    NoSurvivors,
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("study file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

/// Inputs removed together in one ablation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGroup {
    pub name: String,
    /// Feature names and/or [`DDM_BRANCH`].
    pub members: Vec<String>,
}

impl AblationGroup {
    pub fn new(name: impl Into<String>, members: &[&str]) -> Self {
        Self { name: name.into(), members: members.iter().map(|m| m.to_string()).collect() }
    }

    pub fn single(f: Feature) -> Self {
        Self { name: f.name(), members: vec![f.name()] }
    }

    /// The DDM branch together with the scalars computed from the DDM.
    pub fn ddm_and_derived() -> Self {
        Self::new("ddm_and_derived", &[DDM_BRANCH, "ddm_snr", "reflectivity", "peak_power"])
    }
}

/// Training, development and evaluation samples shared by all runs of a study.
#[derive(Debug, Clone)]
pub struct StudyData {
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub eval: Vec<Sample>,
    pub ddm_mode: DdmStatsMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub correlation: f64,
    pub rmse: f64,
}

impl Metrics {
    pub fn of(pred: &[f64], target: &[f64]) -> Result<Self, String> {
        let r = pearson(pred, target).map_err(|e| e.to_string())?;
        let e = rmse(pred, target).map_err(|e| e.to_string())?;
        if !(r.is_finite() && e.is_finite()) {
            return Err(format!("non-finite metrics (r {r}, rmse {e})"));
        }
        Ok(Self { correlation: r.clamp(-1.0, 1.0), rmse: e })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunSpec {
    Baseline,
    Ablation { removed: Vec<String> },
    Noise { inputs: Vec<String> },
    EnsembleMember,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub spec: RunSpec,
    pub use_ddm: bool,
    /// Ancillary inputs of the run's network, in order.
    pub inputs: Vec<String>,
    pub n_params: usize,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
    #[serde(skip)]
    eval_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Ablation,
    NoiseSensitivity,
    Ensemble,
}

/// Ensemble dispersion summary. Standard deviations are population (ddof 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub members: usize,
    pub survivors: usize,
    pub correlation_mean: f64,
    pub correlation_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    /// Mean over samples of the across-member prediction std.
    pub per_sample_std_mean: f64,
    /// Spread over samples of the across-member prediction std.
    pub per_sample_std_std: f64,
    pub reference_std_mean: f64,
    pub reference_std_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub kind: StudyKind,
    pub eval_hash: String,
    pub eval_count: usize,
    pub baseline: Metrics,
    pub runs: Vec<RunRecord>,
    pub dispersion: Option<Dispersion>,
    pub warnings: Vec<String>,
}

impl StudyResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study results serialize")
    }

    pub fn write_json(&self, path: &Path) -> Result<(), StudyError> {
        fs::write(path, self.to_json()).map_err(|source| StudyError::Io { path: path.into(), source })
    }

    pub fn read_json(path: &Path) -> Result<Self, StudyError> {
        let text = fs::read_to_string(path).map_err(|source| StudyError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|e| StudyError::Format { path: path.into(), msg: e.to_string() })
    }

    pub fn run(&self, label: &str) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.label == label)
    }

    /// Change in correlation of run `label` relative to the baseline.
    pub fn correlation_delta(&self, label: &str) -> Option<f64> {
        self.run(label)?.metrics.map(|m| m.correlation - self.baseline.correlation)
    }
}

/// SHA-256 over the identity of each sample: time, geometry, link ids and target.
pub fn eval_set_hash(samples: &[Sample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.obs.timestamp.to_le_bytes());
        h.update(s.obs.sp.lat().to_le_bytes());
        h.update(s.obs.sp.lon().to_le_bytes());
        h.update([s.obs.spacecraft_id, s.obs.prn]);
        h.update(s.target_sm.unwrap_or(f64::NAN).to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Normalizes `samples` into a tensor set carrying their targets.
pub fn tensor_set<S: Scalar>(samples: &[Sample], norm: &NormStats) -> Result<TensorSet<S>, StudyError> {
    let bundles = samples.par_iter().map(|s| apply_normalization(s, norm)).collect::<Result<Vec<_>, _>>()?;
    let targets = samples
        .iter()
        .enumerate()
        .map(|(i, s)| s.target_sm.ok_or_else(|| StudyError::Config(format!("sample {i} has no target"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TensorSet::from_bundles(&bundles, Some(&targets), &norm.feature_names())?)
}

/// Infer-mode predictions for `samples`.
pub fn predict_samples<S: Scalar>(net: &Network<S>, norm: &NormStats, samples: &[Sample]) -> Result<Vec<f64>, StudyError> {
    Ok(net.predict_set(&tensor_set::<S>(samples, norm)?))
}

fn targets(samples: &[Sample]) -> Vec<f64> {
    samples.iter().map(|s| s.target_sm.unwrap_or(f64::NAN)).collect()
}

/// Deterministic Bernoulli(`fraction`) subsample keyed by position.
pub fn subsample(samples: &[Sample], fraction: f64, seed: u64) -> Vec<Sample> {
    if fraction >= 1.0 {
        return samples.to_vec();
    }
    samples.iter().enumerate().filter(|(i, _)| unit_interval(splitmix(seed, *i as u64)) < fraction).map(|(_, s)| s.clone()).collect()
}

fn parse_features(names: &[String]) -> Result<Vec<Feature>, StudyError> {
    names
        .iter()
        .map(|n| Feature::from_name(n).ok_or_else(|| StudyError::Config(format!("unknown feature {n:?}"))))
        .collect()
}

struct Trained<S: Scalar> {
    net: Network<S>,
    norm: NormStats,
}

fn fit_and_train<S: Scalar>(cfg: &NetworkConfig, tc: &TrainConfig, data: &StudyData) -> Result<Trained<S>, StudyError> {
    let features = parse_features(&cfg.ancillary_inputs)?;
    let norm = fit_normalization(&data.train, &features, data.ddm_mode)?;
    let tr = tensor_set::<S>(&data.train, &norm)?;
    let dev = tensor_set::<S>(&data.dev, &norm)?;
    let net = build_network::<S>(cfg)?;
    Ok(Trained { net: train(&net, &tr, &dev, tc)?.best, norm })
}

fn scored(mut rec: RunRecord, outcome: Result<(Vec<f64>, String), StudyError>, target: &[f64]) -> (RunRecord, Option<Vec<f64>>) {
    match outcome {
        Ok((pred, hash)) => {
            rec.eval_hash = hash;
            match Metrics::of(&pred, target) {
                Ok(m) => rec.metrics = Some(m),
                Err(e) => rec.error = Some(e),
            }
            (rec, Some(pred))
        }
        Err(e) => {
            rec.error = Some(e.to_string());
            (rec, None)
        }
    }
}

fn record(label: &str, seed: u64, spec: RunSpec, cfg: &NetworkConfig, n_params: usize) -> RunRecord {
    RunRecord {
        label: label.into(),
        seed,
        spec,
        use_ddm: cfg.use_ddm,
        inputs: cfg.ancillary_inputs.clone(),
        n_params,
        metrics: None,
        error: None,
        eval_hash: String::new(),
    }
}

/// Checks that every scored run saw the same evaluation list.
fn reduce_hash(expected: &str, runs: &[RunRecord]) -> Result<(), StudyError> {
    for r in runs.iter().filter(|r| !r.eval_hash.is_empty()) {
        if r.eval_hash != expected {
            return Err(StudyError::EvalMismatch(expected.into(), r.eval_hash.clone()));
        }
    }
    Ok(())
}

fn params_of(cfg: &NetworkConfig) -> usize {
    build_network::<f64>(cfg).map(|n| n.n_params()).unwrap_or(0)
}

/// Network configuration with `group`'s members deleted from the inputs.
pub fn ablated_config(base: &NetworkConfig, group: &AblationGroup) -> Result<NetworkConfig, StudyError> {
    if group.members.is_empty() {
        return Err(StudyError::Config(format!("group {:?} has no members", group.name)));
    }
    for m in &group.members {
        if m != DDM_BRANCH && !base.ancillary_inputs.contains(m) {
            return Err(StudyError::Config(format!("group {:?}: unknown feature {m:?}", group.name)));
        }
    }
    let mut cfg = base.clone();
    if group.members.iter().any(|m| m == DDM_BRANCH) {
        if !base.use_ddm {
            return Err(StudyError::Config(format!("group {:?}: network has no DDM branch", group.name)));
        }
        cfg.use_ddm = false;
    }
    cfg.ancillary_inputs.retain(|f| !group.members.contains(f));
    if cfg.ancillary_inputs.is_empty() {
        return Err(StudyError::Config(format!("group {:?} leaves the network without ancillary inputs", group.name)));
    }
    Ok(cfg)
}

/// Trains the baseline and one model per group with the group removed,
/// all scored on `data.eval`. `sample_fraction` thins the training and
/// development sets (never the evaluation set).
pub fn run_ablation<S: Scalar>(
    base: &NetworkConfig,
    tc: &TrainConfig,
    groups: &[AblationGroup],
    data: &StudyData,
    sample_fraction: f64,
    sample_seed: u64,
) -> Result<StudyResult, StudyError> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(StudyError::Config(format!("sample fraction {sample_fraction} outside (0, 1]")));
    }
    parse_features(&base.ancillary_inputs)?;
    let mut names = BTreeSet::from(["baseline".to_string()]);
    let mut configs = vec![("baseline".to_string(), RunSpec::Baseline, base.clone())];
    for g in groups {
        if !names.insert(g.name.clone()) {
            return Err(StudyError::Config(format!("duplicate group name {:?}", g.name)));
        }
        configs.push((g.name.clone(), RunSpec::Ablation { removed: g.members.clone() }, ablated_config(base, g)?));
    }
    let reduced = StudyData {
        train: subsample(&data.train, sample_fraction, sample_seed),
        dev: subsample(&data.dev, sample_fraction, sample_seed ^ 1),
        eval: vec![],
        ddm_mode: data.ddm_mode,
    };
    let target = targets(&data.eval);
    let eval = &data.eval;
    let mut runs: Vec<RunRecord> = configs
        .par_iter()
        .map(|(label, spec, cfg)| {
            let rec = record(label, cfg.seed, spec.clone(), cfg, params_of(cfg));
            let outcome = fit_and_train::<S>(cfg, tc, &reduced)
                .and_then(|t| Ok((predict_samples(&t.net, &t.norm, eval)?, eval_set_hash(eval))));
            scored(rec, outcome, &target).0
        })
        .collect();
    let hash = eval_set_hash(eval);
    reduce_hash(&hash, &runs)?;
    let base_run = runs.remove(0);
    let baseline = match (base_run.metrics, &base_run.error) {
        (Some(m), _) => m,
        (None, e) => return Err(StudyError::Config(format!("baseline run failed: {}", e.clone().unwrap_or_default()))),
    };
    let warnings = runs.iter().filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.label))).collect();
    Ok(StudyResult {
        kind: StudyKind::Ablation,
        eval_hash: hash,
        eval_count: eval.len(),
        baseline,
        runs,
        dispersion: None,
        warnings,
    })
}

/// Per-input noise amplitudes. The default σ is `relative · scale / z`:
/// a ±`relative` band at the two-sided confidence level whose normal
/// quantile is `z` (±5 % at 90 % gives z = 1.645). The scale is the input's
/// own magnitude, or the DDM peak for the DDM, whose noise is drawn
/// independently for every bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub relative: f64,
    pub z: f64,
    /// Known absolute σ per input name (raw units), overriding the rule.
    pub sigma_overrides: BTreeMap<String, f64>,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { relative: 0.05, z: 1.645, sigma_overrides: BTreeMap::new(), seed: 0 }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self { relative: 0.0, ..Self::default() }
    }

    pub fn sigma(&self, input: &str, scale: f64) -> f64 {
        match self.sigma_overrides.get(input) {
            Some(s) => *s,
            None => self.relative * scale.abs() / self.z,
        }
    }
}

fn perturb(s: &mut Sample, input: usize, feature: Option<Feature>, spec: &NoiseSpec, idx: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(splitmix(spec.seed, input as u64), idx as u64));
    match feature {
        Some(f) => {
            let v = f.value(s);
            let sigma = spec.sigma(&f.name(), v);
            if sigma > 0.0 {
                let e: f64 = rng.sample(StandardNormal);
                f.set_value(s, v + sigma * e);
            }
        }
        None => {
            let sigma = spec.sigma(DDM_BRANCH, s.obs.ddm.max());
            if sigma > 0.0 {
                for row in s.obs.ddm.bins.iter_mut() {
                    for b in row.iter_mut() {
                        let e: f64 = rng.sample(StandardNormal);
                        *b += sigma * e;
                    }
                }
            }
        }
    }
}

/// Perturbs each input of a trained network in turn (and then all at once)
/// across `eval`, recording skill against the unperturbed targets.
pub fn run_noise_sensitivity<S: Scalar>(
    net: &Network<S>,
    norm: &NormStats,
    eval: &[Sample],
    spec: &NoiseSpec,
) -> Result<StudyResult, StudyError> {
    let cfg = net.config();
    if norm.feature_names() != cfg.ancillary_inputs {
        return Err(StudyError::Config("normalization inputs differ from the network's".into()));
    }
    let features = parse_features(&cfg.ancillary_inputs)?;
    // Slot 0 is the DDM; slots 1.. follow the ancillary order.
    let mut inputs: Vec<(String, Option<Feature>)> = Vec::new();
    if cfg.use_ddm {
        inputs.push((DDM_BRANCH.into(), None));
    }
    inputs.extend(features.iter().map(|f| (f.name(), Some(*f))));
    for k in spec.sigma_overrides.keys() {
        if !inputs.iter().any(|(n, _)| n == k) {
            return Err(StudyError::Config(format!("noise override for unknown input {k:?}")));
        }
    }
    let target = targets(eval);
    let hash = eval_set_hash(eval);
    let n_params = net.n_params();
    let base_pred = predict_samples(net, norm, eval)?;
    let baseline = Metrics::of(&base_pred, &target).map_err(StudyError::Config)?;

    let mut plans: Vec<(String, Vec<usize>)> = inputs.iter().enumerate().map(|(k, (n, _))| (n.clone(), vec![k])).collect();
    plans.push(("all_inputs".into(), (0..inputs.len()).collect()));
    let runs: Vec<RunRecord> = plans
        .par_iter()
        .map(|(label, which)| {
            let names = which.iter().map(|k| inputs[*k].0.clone()).collect();
            let rec = record(label, spec.seed, RunSpec::Noise { inputs: names }, cfg, n_params);
            let noisy: Vec<Sample> = eval
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut s = s.clone();
                    for k in which {
                        perturb(&mut s, *k, inputs[*k].1, spec, i);
                    }
                    s
                })
                .collect();
            let outcome = predict_samples(net, norm, &noisy).map(|p| (p, eval_set_hash(eval)));
            scored(rec, outcome, &target).0
        })
        .collect();
    reduce_hash(&hash, &runs)?;
    let warnings = runs.iter().filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.label))).collect();
    Ok(StudyResult {
        kind: StudyKind::NoiseSensitivity,
        eval_hash: hash,
        eval_count: eval.len(),
        baseline,
        runs,
        dispersion: None,
        warnings,
    })
}

/// `n` consecutive seeds starting at `base`.
pub fn ensemble_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|k| base + k).collect()
}

/// Across-member population std for each sample of a member × sample matrix.
pub fn per_sample_std(predictions: &[Vec<f64>]) -> Vec<f64> {
    let m = predictions.len() as f64;
    let n = predictions.first().map_or(0, |p| p.len());
    (0..n)
        .map(|i| {
            let mean = predictions.iter().map(|p| p[i]).sum::<f64>() / m;
            (predictions.iter().map(|p| (p[i] - mean).powi(2)).sum::<f64>() / m).sqrt()
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// Trained ensemble: surviving members, their shared normalization, the
/// stored member predictions on the evaluation set and the study table.
#[derive(Debug, Clone)]
pub struct Ensemble<S: Scalar> {
    pub members: Vec<Network<S>>,
    pub seeds: Vec<u64>,
    pub norm: NormStats,
    /// Survivor × evaluation-sample predictions.
    pub predictions: Vec<Vec<f64>>,
    pub result: StudyResult,
}

/// Trains one model per seed (network initialization and batch order both
/// follow the seed) and summarizes the spread of their evaluation skill and
/// predictions. Failed members are reported and excluded.
pub fn train_ensemble<S: Scalar>(
    cfg: &NetworkConfig,
    tc: &TrainConfig,
    seeds: &[u64],
    data: &StudyData,
) -> Result<Ensemble<S>, StudyError> {
    if seeds.len() < 2 {
        return Err(StudyError::Config(format!("ensemble needs at least 2 seeds, got {}", seeds.len())));
    }
    let features = parse_features(&cfg.ancillary_inputs)?;
    let norm = fit_normalization(&data.train, &features, data.ddm_mode)?;
    let tr = tensor_set::<S>(&data.train, &norm)?;
    let dev = tensor_set::<S>(&data.dev, &norm)?;
    let ev = tensor_set::<S>(&data.eval, &norm)?;
    let target = targets(&data.eval);
    let hash = eval_set_hash(&data.eval);
    let n_params = params_of(cfg);

    let outcomes: Vec<(RunRecord, Option<(Network<S>, Vec<f64>)>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(k, &seed)| {
            let member_cfg = NetworkConfig { seed, ..cfg.clone() };
            let member_tc = TrainConfig { seed, ..tc.clone() };
            let rec = record(&format!("member_{k:02}"), seed, RunSpec::EnsembleMember, &member_cfg, n_params);
            let trained = build_network::<S>(&member_cfg)
                .and_then(|n| train(&n, &tr, &dev, &member_tc))
                .map(|o| o.best)
                .map_err(StudyError::from);
            match trained {
                Ok(net) => {
                    let pred = net.predict_set(&ev);
                    let (rec, _) = scored(rec, Ok((pred.clone(), hash.clone())), &target);
                    let keep = rec.metrics.is_some() && pred.iter().all(|p| p.is_finite());
                    (rec, keep.then_some((net, pred)))
                }
                Err(e) => (scored(rec, Err(e), &target).0, None),
            }
        })
        .collect();

    let mut runs = Vec::new();
    let (mut members, mut survivors, mut predictions) = (Vec::new(), Vec::new(), Vec::new());
    for (rec, kept) in outcomes {
        if let Some((net, pred)) = kept {
            members.push(net);
            survivors.push(rec.seed);
            predictions.push(pred);
        }
        runs.push(rec);
    }
    reduce_hash(&hash, &runs)?;
    if members.is_empty() {
        return Err(StudyError::NoSurvivors);
    }
    let mut warnings: Vec<String> = runs.iter().filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.label))).collect();
    if members.len() < seeds.len() {
        warnings.push(format!("ensemble statistics use {} of {} members", members.len(), seeds.len()));
    }
    let mean_pred: Vec<f64> = (0..target.len()).map(|i| predictions.iter().map(|p| p[i]).sum::<f64>() / predictions.len() as f64).collect();
    let baseline = Metrics::of(&mean_pred, &target).map_err(StudyError::Config)?;
    let member_metrics: Vec<Metrics> = runs.iter().filter(|r| survivors.contains(&r.seed)).filter_map(|r| r.metrics).collect();
    let (correlation_mean, correlation_std) = mean_std(&member_metrics.iter().map(|m| m.correlation).collect::<Vec<_>>());
    let (rmse_mean, rmse_std) = mean_std(&member_metrics.iter().map(|m| m.rmse).collect::<Vec<_>>());
    let (per_sample_std_mean, per_sample_std_std) = mean_std(&per_sample_std(&predictions));
    let dispersion = Dispersion {
        members: seeds.len(),
        survivors: members.len(),
        correlation_mean,
        correlation_std,
        rmse_mean,
        rmse_std,
        per_sample_std_mean,
        per_sample_std_std,
        reference_std_mean: REFERENCE_DISPERSION.0,
        reference_std_spread: REFERENCE_DISPERSION.1,
    };
    Ok(Ensemble {
        members,
        seeds: survivors,
        norm,
        predictions,
        result: StudyResult {
            kind: StudyKind::Ensemble,
            eval_hash: hash,
            eval_count: data.eval.len(),
            baseline,
            runs,
            dispersion: Some(dispersion),
            warnings,
        },
    })
}

/// Study definition file contents (TOML or JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StudyDefinition {
    Ablation {
        groups: Vec<AblationGroup>,
        #[serde(default = "one")]
        sample_fraction: f64,
        #[serde(default)]
        sample_seed: u64,
    },
    NoiseSensitivity {
        #[serde(default)]
        noise: NoiseSpec,
    },
    Ensemble {
        #[serde(default = "ten")]
        n_seeds: usize,
        #[serde(default)]
        base_seed: u64,
    },
}

fn one() -> f64 {
    1.0
}

fn ten() -> usize {
    10
}
