//! End-to-end experiment runs.
//!
//! Random streams, all derived from the master seed `s`:
//!
//! | stream                          | used for                               |
//! |---------------------------------|----------------------------------------|
//! | `derive_seed(s, "world")`       | world seed (generator, models, bases)  |
//! | `stream(s, "population")`       | attributed identities for PCA          |
//! | `stream(s, "threshold-pairs")`  | genuine/impostor calibration pairs     |
//! | `stream(s, "targets")`          | attack targets                         |
//! | `stream(s, "held-out")`         | held-out curve-fit pairs               |
//! | `derive_seed(s, "fit-restarts")`| jitter of the curve-fit restarts       |
//!
//! Embedding noise is keyed per (model, image) inside the world.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssal_core::attack::{
    black_box_attack, calibrate_black_box, prepare_basis_with, transfer_attack, white_box_attack,
    AttackResult, AttributedBasisImages, BlackBoxCalibration, Evaluator, SigmoidSource,
};
use ssal_core::calibration::{calibrate_threshold, ThresholdReport};
use ssal_core::metrics::{summarize, MetricSummary, RunContext};
use ssal_core::rng;
use ssal_core::world::{
    build_world, has_attribute, sample_population, EmbeddingModel, SyntheticWorld,
};
use ssal_core::{Error, Result};

use crate::config::{ExperimentConfig, ExperimentMode, FitData, ThresholdSpec};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const RUN_FILE: &str = "run.json";
pub const THREADS_ENV: &str = "SSAL_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedThreshold {
    pub name: String,
    /// Confidence threshold.
    pub tau: f64,
    pub report: Option<ThresholdReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAccounting {
    /// Pre-attack batch (k² pairs plus held-out fit pairs); zero when cached.
    pub pre_attack_queries: u64,
    /// Per-target crafting queries, summed over targets.
    pub attack_queries: u64,
    /// Evaluation queries on crafted images.
    pub eval_queries: u64,
    /// Queries spent calibrating thresholds.
    pub threshold_queries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fingerprint: String,
    pub world_fingerprint: String,
    pub config: ExperimentConfig,
    pub thresholds: Vec<NamedThreshold>,
    pub calibration: Option<BlackBoxCalibration>,
    pub calibration_cached: bool,
    pub accounting: QueryAccounting,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub record: RunRecord,
    pub results: Vec<AttackResult>,
    pub summaries: Vec<MetricSummary>,
    /// Target images in result order.
    pub target_images: Vec<DVector<f64>>,
}

impl ExperimentOutcome {
    pub fn summary(&self, tau_name: &str) -> Option<&MetricSummary> {
        self.summaries.iter().find(|s| s.tau_name == tau_name)
    }
}

/// The attacker's model: the target's own model for white-box, otherwise the
/// configured local model.
pub fn attacker_model(cfg: &ExperimentConfig, world: &SyntheticWorld) -> Result<EmbeddingModel> {
    match cfg.attack.mode {
        ExperimentMode::WhiteBox => Ok(world.target.model.clone()),
        _ => world.model(cfg.attack.local_model).cloned(),
    }
}

pub fn build_basis(
    cfg: &ExperimentConfig,
    world: &SyntheticWorld,
) -> Result<AttributedBasisImages> {
    let model = attacker_model(cfg, world)?;
    let mut r = rng::stream(cfg.seed, "population");
    let population = sample_population(
        world,
        Some(&cfg.attack.attribute),
        cfg.attack.population,
        1,
        &mut r,
    )?;
    prepare_basis_with(
        world,
        &model,
        &cfg.attack.attribute,
        &population,
        cfg.attack.k,
        cfg.attack.centered_pca,
    )
}

/// Calibrates every configured threshold from fresh genuine/impostor pairs
/// scored by the target.
pub fn calibrate_thresholds(
    cfg: &ExperimentConfig,
    world: &SyntheticWorld,
) -> Result<Vec<NamedThreshold>> {
    let n = cfg.calibration_pairs;
    let mut r = rng::stream(cfg.seed, "threshold-pairs");
    let people = sample_population(world, None, n, 2, &mut r)?;
    let mut genuine = Vec::with_capacity(n);
    let mut impostor = Vec::with_capacity(n);
    for i in 0..n {
        let a = &people[2 * i].image;
        genuine.push(world.target.evaluate(world, a, &people[2 * i + 1].image)?);
        impostor.push(
            world
                .target
                .evaluate(world, a, &people[(2 * i + 3) % (2 * n)].image)?,
        );
    }
    cfg.thresholds
        .iter()
        .map(|spec| match spec {
            ThresholdSpec::Default => Ok(NamedThreshold {
                name: spec.name(),
                tau: world.target.threshold_default,
                report: None,
            }),
            ThresholdSpec::Criterion(c) => {
                let report = calibrate_threshold(&genuine, &impostor, *c)?;
                Ok(NamedThreshold {
                    name: spec.name(),
                    tau: report.tau,
                    report: Some(report),
                })
            }
        })
        .collect()
}

/// `n_targets` attribute-negative target images (the attribute is checked on
/// the image itself).
pub fn sample_targets(cfg: &ExperimentConfig, world: &SyntheticWorld) -> Result<Vec<DVector<f64>>> {
    let want = cfg.attack.n_targets;
    let mut r = rng::stream(cfg.seed, "targets");
    let mut out = Vec::with_capacity(want);
    let mut rounds = 0;
    while out.len() < want {
        rounds += 1;
        if rounds > 100 {
            return Err(Error::Config(
                "could not find enough attribute-negative targets".into(),
            ));
        }
        for s in sample_population(world, None, want - out.len(), 1, &mut r)? {
            if !has_attribute(world, &cfg.attack.attribute, &s.image)? {
                out.push(s.image);
            }
        }
    }
    Ok(out)
}

fn calibration_key(cfg: &ExperimentConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        world: ssal_core::world::WorldConfig,
        seed: u64,
        k: usize,
        attribute: &'a str,
        population: usize,
        local_model: usize,
        fit_data: FitData,
        held_out_pairs: usize,
        centered_pca: bool,
    }
    let a = &cfg.attack;
    ssal_core::io::fingerprint(&Key {
        world: cfg.effective_world(),
        seed: cfg.seed,
        k: a.k,
        attribute: &a.attribute,
        population: a.population,
        local_model: a.local_model,
        fit_data: a.fit_data,
        held_out_pairs: a.held_out_pairs,
        centered_pca: a.centered_pca,
    })
}

/// Runs the `k²` batch and fits the curve for a black-box attack.
pub fn black_box_calibration(
    cfg: &ExperimentConfig,
    world: &SyntheticWorld,
    basis: &AttributedBasisImages,
) -> Result<BlackBoxCalibration> {
    let seed = rng::derive_seed(cfg.seed, "fit-restarts");
    let source = match cfg.attack.fit_data {
        FitData::BasisPairs => SigmoidSource::FitBasisPairs { seed },
        FitData::HeldOut => {
            let mut r = rng::stream(cfg.seed, "held-out");
            let n = cfg.attack.held_out_pairs;
            let people = sample_population(world, None, n.max(1), 2, &mut r)?;
            let mut pairs = Vec::with_capacity(n);
            for i in 0..n {
                let a = people[2 * i].image.clone();
                // alternate genuine and impostor pairs so the cosines span the curve
                let b = if i % 2 == 0 {
                    people[2 * i + 1].image.clone()
                } else {
                    people[(2 * i + 3) % (2 * n)].image.clone()
                };
                pairs.push((a, b));
            }
            SigmoidSource::FitHeldOut { pairs, seed }
        }
    };
    calibrate_black_box(world, basis, &world.target, source)
}

fn cached_calibration(
    cfg: &ExperimentConfig,
    world: &SyntheticWorld,
    basis: &AttributedBasisImages,
) -> Result<(BlackBoxCalibration, bool)> {
    if cfg.output_dir.as_os_str().is_empty() {
        return Ok((black_box_calibration(cfg, world, basis)?, false));
    }
    let path = cfg
        .output_dir
        .join("cache")
        .join(format!("calibration-{}.json", calibration_key(cfg)));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(cal) = serde_json::from_str::<BlackBoxCalibration>(&text) {
            return Ok((cal, true));
        }
    }
    let cal = black_box_calibration(cfg, world, basis)?;
    fs::create_dir_all(path.parent().expect("cache path has a parent"))?;
    fs::write(
        &path,
        serde_json::to_string(&cal).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    Ok((cal, false))
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))
}

/// Builds the world, basis and thresholds, attacks every target and
/// summarizes. Nothing is written to disk except the calibration cache when
/// `output_dir` is set; see [`write_outputs`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let world = build_world(&cfg.effective_world())?;
    let basis = build_basis(cfg, &world)?;
    let thresholds = calibrate_thresholds(cfg, &world)?;
    let threshold_queries = world.target.eval_count();
    let targets = sample_targets(cfg, &world)?;

    let mode = cfg.attack.attack_mode();
    let (calibration, calibration_cached) = if cfg.attack.mode == ExperimentMode::BlackBox {
        let (c, cached) = cached_calibration(cfg, &world, &basis)?;
        (Some(c), cached)
    } else {
        (None, false)
    };
    let pre_attack_queries = world.target.query_count();

    let tau_map: BTreeMap<String, f64> =
        thresholds.iter().map(|t| (t.name.clone(), t.tau)).collect();
    let evaluator = Evaluator {
        oracle: &world.target,
        thresholds: &tau_map,
        attribute: &cfg.attack.attribute,
    };
    let attack_one = |(i, img): (usize, &DVector<f64>)| -> Result<AttackResult> {
        let mut r = match (cfg.attack.mode, &calibration) {
            (ExperimentMode::WhiteBox, _) => white_box_attack(&world, &basis, i, img, &evaluator)?,
            (ExperimentMode::Transfer, _) => transfer_attack(&world, &basis, i, img, &evaluator)?,
            (ExperimentMode::BlackBox, Some(cal)) => black_box_attack(
                &world,
                &basis,
                &world.target,
                cal,
                cfg.attack.use_correction,
                i,
                img,
                &evaluator,
            )?,
            (ExperimentMode::BlackBox, None) => unreachable!("black-box runs are calibrated above"),
        };
        if !cfg.store_images {
            r.adversarial_image = None;
        }
        Ok(r)
    };
    let results: Vec<AttackResult> = thread_pool()?.install(|| {
        targets
            .par_iter()
            .enumerate()
            .map(attack_one)
            .collect::<Result<_>>()
    })?;

    let fingerprint = cfg.fingerprint();
    let ctx = RunContext {
        mode,
        attribute: cfg.attack.attribute.clone(),
        k: cfg.attack.k,
        d: cfg.world.d,
        eta: cfg.world.eta_model,
        seed: cfg.seed,
        fingerprint: fingerprint.clone(),
    };
    let summaries = thresholds
        .iter()
        .map(|t| summarize(&results, &ctx, &t.name, t.tau))
        .collect::<Result<Vec<_>>>()?;

    let accounting = QueryAccounting {
        pre_attack_queries,
        attack_queries: world.target.query_count() - pre_attack_queries,
        eval_queries: world.target.eval_count() - threshold_queries,
        threshold_queries,
    };
    Ok(ExperimentOutcome {
        record: RunRecord {
            fingerprint,
            world_fingerprint: world.fingerprint(),
            config: cfg.clone(),
            thresholds,
            calibration,
            calibration_cached,
            accounting,
        },
        results,
        summaries,
        target_images: targets,
    })
}

#[derive(Serialize, Deserialize)]
struct ResultLine {
    fingerprint: String,
    #[serde(flatten)]
    result: AttackResult,
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Format(e.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        }
    } else {
        Error::Format(e.to_string())
    }
}

pub fn write_summaries(path: &Path, summaries: &[MetricSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for s in summaries {
        w.serialize(s).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summaries(path: &Path) -> Result<Vec<MetricSummary>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Writes `results.jsonl`, `summary.csv`, `run.json` and `config.toml` into `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(fs::File::create(dir.join(RESULTS_FILE))?);
    for r in &outcome.results {
        let line = ResultLine {
            fingerprint: outcome.record.fingerprint.clone(),
            result: r.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(json_err)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    write_summaries(&dir.join(SUMMARY_FILE), &outcome.summaries)?;
    fs::write(
        dir.join(RUN_FILE),
        serde_json::to_string_pretty(&outcome.record).map_err(json_err)?,
    )?;
    fs::write(dir.join("config.toml"), outcome.record.config.to_toml())?;
    Ok(())
}

/// Reads a run directory back: its record and result lines. Every line must
/// carry the record's fingerprint.
pub fn read_run(dir: &Path) -> Result<(RunRecord, Vec<AttackResult>)> {
    let record: RunRecord =
        serde_json::from_str(&fs::read_to_string(dir.join(RUN_FILE))?).map_err(json_err)?;
    let file = fs::File::open(dir.join(RESULTS_FILE))?;
    let mut results = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ResultLine = serde_json::from_str(&line).map_err(json_err)?;
        if parsed.fingerprint != record.fingerprint {
            return Err(Error::contract(format!(
                "{}: line {} has fingerprint {} but the run is {}",
                dir.display(),
                n + 1,
                parsed.fingerprint,
                record.fingerprint
            )));
        }
        results.push(parsed.result);
    }
    Ok((record, results))
}

/// Run directories (those holding a `run.json`) at or directly below `root`.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut runs = Vec::new();
    if root.join(RUN_FILE).is_file() {
        runs.push(root.to_path_buf());
    }
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if path.is_dir() && path.join(RUN_FILE).is_file() {
            runs.push(path);
        }
    }
    runs.sort();
    Ok(runs)
}

/// Recomputes every run's summaries from its result lines and checks them
/// against the stored `summary.csv`.
pub fn aggregate(root: &Path) -> Result<Vec<MetricSummary>> {
    let runs = find_runs(root)?;
    if runs.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no runs found under {}", root.display()),
        )));
    }
    let mut all = Vec::new();
    for dir in runs {
        let (record, results) = read_run(&dir)?;
        let stored = read_summaries(&dir.join(SUMMARY_FILE))?;
        if let Some(bad) = stored.iter().find(|s| s.fingerprint != record.fingerprint) {
            return Err(Error::contract(format!(
                "{}: summary fingerprint {} does not match run {}",
                dir.display(),
                bad.fingerprint,
                record.fingerprint
            )));
        }
        let cfg = &record.config;
        let ctx = RunContext {
            mode: cfg.attack.attack_mode(),
            attribute: cfg.attack.attribute.clone(),
            k: cfg.attack.k,
            d: cfg.world.d,
            eta: cfg.world.eta_model,
            seed: cfg.seed,
            fingerprint: record.fingerprint.clone(),
        };
        for t in &record.thresholds {
            let s = summarize(&results, &ctx, &t.name, t.tau)?;
            if let Some(old) = stored.iter().find(|o| o.tau_name == t.name) {
                if old.asr != s.asr || old.imr != s.imr || old.n != s.n {
                    return Err(Error::contract(format!(
                        "{}: stored summary for '{}' disagrees with the result lines",
                        dir.display(),
                        t.name
                    )));
                }
            }
            all.push(s);
        }
    }
    Ok(all)
}
