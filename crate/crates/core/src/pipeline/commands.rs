//! Offline commands: synth, train, study, validate, report, convert.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{config_err, prepare_dataset, write_json, Layout, PipelineConfig, PipelineError, Result, SOFTWARE};
use crate::conditioning::{fit_normalization, Window};
use crate::container::{to_cdl, Dataset};
use crate::model::{build_network, config_hash, load_weights, save_weights, train, EpochLoss, Provenance, WeightsMetadata};
use crate::products::{l2_path, read_l2};
use crate::studies::{
    ensemble_seeds, eval_set_hash, predict_samples, run_ablation, run_noise_sensitivity, tensor_set, train_ensemble,
    Metrics, StudyData, StudyDefinition, StudyError, StudyResult,
};
use crate::synthgen::{generate_world, write_world, WorldConfig};
use crate::timeutil::days_inclusive;
use crate::validation::{
    build_matchups, eligible_sites, read_sites_csv, stats_by_landcover, stats_per_site, write_sites_csv,
    LandcoverBreakdown, SiteStats, FOOTPRINT_DIAMETER_KM,
};

fn study_err(e: StudyError) -> PipelineError {
    match e {
        StudyError::Config(m) => PipelineError::Config(m),
        e => PipelineError::Run(anyhow::Error::new(e)),
    }
}

fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub seed: u64,
    pub days: usize,
    pub observations: usize,
    pub sites: usize,
    pub lake: PathBuf,
}

/// Generates a synthetic world and writes it into the lake, with an in-situ
/// site table of `n_sites` hourly probes.
pub fn cmd_synth(layout: &Layout, world: &WorldConfig, n_sites: usize, site_noise: f64) -> Result<SynthReport> {
    world.validate().map_err(|e| config_err(e.to_string()))?;
    let w = generate_world(world).map_err(|e| config_err(e.to_string()))?;
    write_world(&w, &layout.world_files()).context("writing synthetic world")?;
    let observations = world.days().map(|d| w.observations(d).len()).sum();
    let sites = w.insitu_sites(n_sites, site_noise);
    let f = fs::File::create(&layout.insitu).with_context(|| format!("creating {}", layout.insitu.display()))?;
    write_sites_csv(&sites, f).context("writing in-situ sites")?;
    let text = toml::to_string_pretty(world).context("serializing world config")?;
    fs::write(layout.lake.join("world.toml"), text).context("writing world.toml")?;
    Ok(SynthReport { seed: world.seed, days: world.days().count(), observations, sites: sites.len(), lake: layout.lake.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub software: String,
    pub config_hash: String,
    pub model_config_hash: String,
    pub weights_sha256: String,
    pub weights_file_sha256: String,
    pub train_seed: u64,
    pub network_seed: u64,
    pub train_data_hash: String,
    pub raw_samples: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_validation: usize,
    pub best_epoch: usize,
    pub curve: Vec<EpochLoss>,
    pub validation: Option<Metrics>,
}

/// Prepares the dataset, trains the configured network (single precision)
/// and writes `model.gsw` plus a provenance record `runs/train.json`.
pub fn cmd_train(cfg: &PipelineConfig, layout: &Layout) -> Result<TrainReport> {
    let prep = prepare_dataset(cfg, layout)?;
    let p = &prep.parts;
    if p.train.is_empty() || p.dev.is_empty() {
        return Err(PipelineError::Run(anyhow::anyhow!(
            "no training or development samples ({} / {})",
            p.train.len(),
            p.dev.len()
        )));
    }
    let norm = fit_normalization(&p.train, &cfg.features(), cfg.ddm_stats).context("fitting normalization")?;
    let tr = tensor_set::<f32>(&p.train, &norm).map_err(study_err)?;
    let dev = tensor_set::<f32>(&p.dev, &norm).map_err(study_err)?;
    let net = build_network::<f32>(&cfg.network).map_err(|e| config_err(e.to_string()))?;
    let outcome = train(&net, &tr, &dev, &cfg.train).context("training")?;
    let best = outcome.best.clone();
    let validation = if p.validation.is_empty() {
        None
    } else {
        let pred = predict_samples(&best, &norm, &p.validation).map_err(study_err)?;
        let target: Vec<f64> = p.validation.iter().filter_map(|s| s.target_sm).collect();
        Metrics::of(&pred, &target).ok()
    };
    let train_data_hash = eval_set_hash(&p.train);
    let provenance = Provenance {
        seed: cfg.train.seed,
        epochs: cfg.train.epochs,
        best_epoch: outcome.best_epoch,
        data_hash: train_data_hash.clone(),
        dev_loss: Some(outcome.best_dev_loss()),
        train_config: Some(cfg.train.clone()),
        software: SOFTWARE.into(),
    };
    let path = layout.weights();
    fs::create_dir_all(&layout.models).with_context(|| format!("creating {}", layout.models.display()))?;
    save_weights(&best.to_weights(WeightsMetadata { provenance, norm: Some(norm) }), &path).context("saving weights")?;
    let report = TrainReport {
        software: SOFTWARE.into(),
        config_hash: cfg.hash(),
        model_config_hash: config_hash(best.config()),
        weights_sha256: best.weights_checksum(),
        weights_file_sha256: file_sha256(&path)?,
        train_seed: cfg.train.seed,
        network_seed: cfg.network.seed,
        train_data_hash,
        raw_samples: prep.raw,
        n_train: p.train.len(),
        n_dev: p.dev.len(),
        n_validation: p.validation.len(),
        best_epoch: outcome.best_epoch,
        curve: outcome.curve,
        validation,
    };
    write_json(&layout.runs.join("train.json"), &report)?;
    Ok(report)
}

#[derive(Serialize)]
struct StudyProvenance<'a> {
    software: &'a str,
    config_hash: String,
    definition: &'a StudyDefinition,
    eval_hash: &'a str,
    weights_sha256: Option<String>,
}

#[derive(Serialize)]
struct EnsemblePredictions<'a> {
    seeds: &'a [u64],
    predictions: &'a [Vec<f64>],
}

/// Runs the study in `definition` (TOML) over the prepared dataset, scoring
/// on the validation window. Writes `studies/<name>.json` and a provenance
/// record under `runs/`.
pub fn cmd_study(cfg: &PipelineConfig, layout: &Layout, definition: &Path, name: Option<&str>) -> Result<StudyResult> {
    let text = fs::read_to_string(definition).map_err(|e| config_err(format!("{}: {e}", definition.display())))?;
    let def: StudyDefinition = toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", definition.display())))?;
    let name = name
        .map(str::to_string)
        .or_else(|| definition.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "study".into());
    let prep = prepare_dataset(cfg, layout)?;
    let data = StudyData {
        train: prep.parts.train,
        dev: prep.parts.dev,
        eval: prep.parts.validation,
        ddm_mode: cfg.ddm_stats,
    };
    if data.eval.is_empty() {
        return Err(PipelineError::Run(anyhow::anyhow!("validation window holds no samples")));
    }
    let mut weights_sha256 = None;
    let result = match &def {
        StudyDefinition::Ablation { groups, sample_fraction, sample_seed } => {
            run_ablation::<f32>(&cfg.network, &cfg.train, groups, &data, *sample_fraction, *sample_seed).map_err(study_err)?
        }
        StudyDefinition::NoiseSensitivity { noise } => {
            let w = load_weights::<f32>(&layout.weights())
                .map_err(|e| config_err(format!("model weights {}: {e}", layout.weights().display())))?;
            let norm = w.metadata.norm.clone().ok_or_else(|| config_err("weights carry no normalization statistics"))?;
            let net = w.to_network().map_err(|e| config_err(e.to_string()))?;
            weights_sha256 = Some(net.weights_checksum());
            run_noise_sensitivity(&net, &norm, &data.eval, noise).map_err(study_err)?
        }
        StudyDefinition::Ensemble { n_seeds, base_seed } => {
            let e = train_ensemble::<f32>(&cfg.network, &cfg.train, &ensemble_seeds(*base_seed, *n_seeds), &data)
                .map_err(study_err)?;
            let dir = layout.models.join("ensemble").join(&name);
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for (net, seed) in e.members.iter().zip(&e.seeds) {
                let meta = WeightsMetadata {
                    provenance: Provenance { seed: *seed, software: SOFTWARE.into(), ..Provenance::default() },
                    norm: Some(e.norm.clone()),
                };
                save_weights(&net.to_weights(meta), &dir.join(format!("member_seed{seed}.gsw"))).context("saving member")?;
            }
            write_json(
                &layout.studies.join(format!("{name}_predictions.json")),
                &EnsemblePredictions { seeds: &e.seeds, predictions: &e.predictions },
            )?;
            e.result
        }
    };
    fs::create_dir_all(&layout.studies).with_context(|| format!("creating {}", layout.studies.display()))?;
    result.write_json(&layout.studies.join(format!("{name}.json"))).map_err(study_err)?;
    let prov = StudyProvenance {
        software: SOFTWARE,
        config_hash: cfg.hash(),
        definition: &def,
        eval_hash: &result.eval_hash,
        weights_sha256,
    };
    write_json(&layout.runs.join(format!("study_{name}.json")), &prov)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config_hash: String,
    pub window: Window,
    pub sites_total: usize,
    pub sites_eligible: usize,
    pub l2_files: usize,
    pub matchups: usize,
    pub per_site: BTreeMap<String, SiteStats<f64>>,
    pub by_landcover: Option<LandcoverBreakdown>,
}

/// Matches L2 products in `window` (default: the validation split) against
/// the lake's in-situ sites and writes `runs/validation_<start>_<end>.json`.
pub fn cmd_validate(cfg: &PipelineConfig, layout: &Layout, window: Option<Window>) -> Result<ValidationReport> {
    let window = window.unwrap_or(cfg.split.validation);
    if window.days() < 1 {
        return Err(config_err("validation window is empty"));
    }
    let f = fs::File::open(&layout.insitu).with_context(|| format!("opening {}", layout.insitu.display()))?;
    let sites = read_sites_csv(f).context("reading in-situ sites")?;
    let eligible: Vec<_> = eligible_sites(&sites, &window).into_iter().cloned().collect();
    let mut records = Vec::new();
    let mut l2_files = 0;
    let last = window.end.pred_opt().expect("date in range");
    for day in days_inclusive(window.start, last) {
        for sat in 1..=8u8 {
            let path = layout.products.join(l2_path(&cfg.version, sat, day));
            if path.exists() {
                records.extend(read_l2(&path).with_context(|| format!("reading {}", path.display()))?);
                l2_files += 1;
            }
        }
    }
    let table = build_matchups(&eligible, &records, &window, FOOTPRINT_DIAMETER_KM);
    let per_site = stats_per_site(&table);
    let classes: BTreeMap<String, u8> = eligible.iter().map(|s| (s.id.clone(), s.landcover)).collect();
    let report = ValidationReport {
        config_hash: cfg.hash(),
        window,
        sites_total: sites.len(),
        sites_eligible: eligible.len(),
        l2_files,
        matchups: table.rows.len(),
        by_landcover: stats_by_landcover(&per_site, &classes),
        per_site,
    };
    let name = format!("validation_{}_{}.json", window.start.format("%Y%m%d"), window.end.format("%Y%m%d"));
    write_json(&layout.runs.join(name), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub text: String,
    pub studies: usize,
    /// Rendered run rows (baselines excluded).
    pub rows: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:+.4}"))
}

/// Renders every study result (`*.json` parsing as a study) in `dir`,
/// in file-name order.
pub fn cmd_report(dir: &Path) -> Result<ReportSummary> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut text = String::new();
    let (mut studies, mut rows) = (0, 0);
    for f in files {
        let Ok(r) = StudyResult::read_json(&f) else { continue };
        studies += 1;
        let stem = f.file_stem().unwrap_or_default().to_string_lossy();
        text.push_str(&format!(
            "== {stem} ({:?}, {} evaluation samples, eval {})\n",
            r.kind,
            r.eval_count,
            &r.eval_hash[..r.eval_hash.len().min(12)]
        ));
        text.push_str(&format!("{:<24} {:>8} {:>8} {:>9} {:>9}\n", "run", "r", "rmse", "dr", "drmse"));
        text.push_str(&format!("{:<24} {:>8.4} {:>8.4} {:>9} {:>9}\n", "(baseline)", r.baseline.correlation, r.baseline.rmse, "", ""));
        for run in &r.runs {
            rows += 1;
            match run.metrics {
                Some(m) => text.push_str(&format!(
                    "{:<24} {:>8.4} {:>8.4} {:>9} {:>9}\n",
                    run.label,
                    m.correlation,
                    m.rmse,
                    fmt_opt(Some(m.correlation - r.baseline.correlation)),
                    fmt_opt(Some(m.rmse - r.baseline.rmse)),
                )),
                None => text.push_str(&format!("{:<24} failed: {}\n", run.label, run.error.as_deref().unwrap_or("unknown"))),
            }
        }
        if let Some(d) = &r.dispersion {
            text.push_str(&format!(
                "ensemble {}/{} members: r {:.4} ± {:.4}, rmse {:.4} ± {:.4}, per-sample std {:.4} ± {:.4} (reference {} ± {})\n",
                d.survivors,
                d.members,
                d.correlation_mean,
                d.correlation_std,
                d.rmse_mean,
                d.rmse_std,
                d.per_sample_std_mean,
                d.per_sample_std_std,
                d.reference_std_mean,
                d.reference_std_spread
            ));
        }
        for w in &r.warnings {
            text.push_str(&format!("warning: {w}\n"));
        }
    }
    Ok(ReportSummary { text, studies, rows })
}

/// CDL text of a container file (warehouse, L2 or L3).
pub fn cmd_convert(input: &Path) -> Result<String> {
    let ds = Dataset::read(input).with_context(|| format!("reading {}", input.display()))?;
    let name = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    Ok(to_cdl(&ds, &name))
}
