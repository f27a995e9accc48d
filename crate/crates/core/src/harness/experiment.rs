//! Seeded repetitions of a pipeline and their aggregate report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_manifest, synth_batch_with};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalImage, EvalResult};
use crate::rng::Seed;
use crate::sample::PairedSample;

use super::config::ExperimentConfig;
use super::pipeline::run_pipeline;

/// Bumped whenever the report layout changes.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub std: f64,
}

impl Aggregate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    /// State of the trial's derived seed.
    pub seed: u64,
    pub samples: usize,
    pub registration_fallbacks: usize,
    pub eval: EvalResult,
}

impl TrialResult {
    /// Named scalar metrics selected by the config.
    pub fn metrics(&self, cfg: &ExperimentConfig) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        if cfg.metrics.map {
            m.insert("map50".to_string(), self.eval.map50);
            m.insert("map_coco".to_string(), self.eval.map_coco);
        }
        if cfg.metrics.lamr {
            m.insert("lamr".to_string(), self.eval.lamr);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub base_seed: u64,
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    pub aggregate: BTreeMap<String, Aggregate>,
    /// Only present when timing was requested, so that reports stay
    /// byte-identical across runs by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl Report {
    /// Recomputes the aggregate from the trials.
    pub fn recompute_aggregate(&self) -> BTreeMap<String, Aggregate> {
        aggregate_trials(&self.trials, &self.config)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per trial plus `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let names: Vec<&String> = self.aggregate.keys().collect();
        let mut s = String::from("trial,seed,samples,registration_fallbacks");
        for n in &names {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for t in &self.trials {
            let _ = write!(s, "{},{},{},{}", t.index, t.seed, t.samples, t.registration_fallbacks);
            let m = t.metrics(&self.config);
            for n in &names {
                let _ = write!(s, ",{}", m[*n]);
            }
            s.push('\n');
        }
        for (label, pick) in [("mean", 0), ("std", 1)] {
            let _ = write!(s, "{label},,,");
            for n in &names {
                let a = self.aggregate[*n];
                let _ = write!(s, ",{}", if pick == 0 { a.mean } else { a.std });
            }
            s.push('\n');
        }
        s
    }
}

fn aggregate_trials(trials: &[TrialResult], cfg: &ExperimentConfig) -> BTreeMap<String, Aggregate> {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for t in trials {
        for (k, v) in t.metrics(cfg) {
            values.entry(k).or_default().push(v);
        }
    }
    values.into_iter().map(|(k, v)| (k, Aggregate::from_values(&v))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Record wall-clock time in the report.
    pub timing: bool,
}

/// Loads the trial's samples. Synthetic scenes come from `trial.derive(0)`;
/// manifest data is the same for every trial.
pub fn trial_samples(cfg: &ExperimentConfig, trial: &Seed, manifest: Option<&[PairedSample]>) -> Result<Vec<PairedSample>> {
    match (&cfg.dataset.synth, manifest) {
        (_, Some(samples)) => Ok(samples.to_vec()),
        (Some(synth), None) => synth_batch_with(synth, cfg.dataset.count, &trial.derive(0)),
        (None, None) => Err(Error::BadConfig("dataset has no source".into())),
    }
}

/// Runs one trial: every sample through the pipeline with seed
/// `trial.derive(1).derive(i)`, then one evaluation over the batch.
pub fn run_trial(cfg: &ExperimentConfig, index: usize, manifest: Option<&[PairedSample]>) -> Result<TrialResult> {
    let trial = Seed::new(cfg.base_seed).derive(index as u64);
    let samples = trial_samples(cfg, &trial, manifest)?;
    let outputs = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_pipeline(s, cfg, &trial.derive(1).derive(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let registration_fallbacks = outputs.iter().filter(|o| o.registration_fallback).count();
    let images: Vec<EvalImage> = outputs
        .into_iter()
        .map(|o| EvalImage {
            detections: o.detections.detections,
            ground_truth: o.ground_truth,
        })
        .collect();
    let eval = evaluate(&images, cfg.metrics.vacuous_classes)?;
    Ok(TrialResult {
        index,
        seed: trial.state(),
        samples: images.len(),
        registration_fallbacks,
        eval,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    run_experiment_with(cfg, RunOptions::default())
}

/// Runs `cfg.repeats` independent trials on the current rayon pool. The
/// report does not depend on the pool size.
pub fn run_experiment_with(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let manifest = match &cfg.dataset.manifest {
        Some(path) => Some(load_manifest(path, cfg.dataset.out_of_bounds)?),
        None => None,
    };
    let trials = (0..cfg.repeats)
        .into_par_iter()
        .map(|k| {
            run_trial(cfg, k, manifest.as_deref()).map_err(|e| Error::Trial {
                index: k,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate_trials(&trials, cfg);
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        base_seed: cfg.base_seed,
        config: cfg.clone(),
        trials,
        aggregate,
        wall_clock_seconds: opts.timing.then(|| start.elapsed().as_secs_f64()),
    })
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `threads` is `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::BadConfig("thread count must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::BadConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
