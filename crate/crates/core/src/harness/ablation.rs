//! Cartesian ablation over config overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::{apply_override, ExperimentConfig};
use super::experiment::{run_experiment_with, Report, RunOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// Dotted config path, e.g. `fusion.mode`.
    pub field: String,
    pub values: Vec<serde_json::Value>,
}

/// An ablation file: a base experiment plus the axes to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub base: ExperimentConfig,
    pub axes: Vec<Axis>,
}

impl AblationConfig {
    pub fn from_str_any(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::BadConfig(e.to_string()))?
        };
        cfg.base.validate()?;
        Ok(cfg)
    }

    /// Reads an ablation file. A relative manifest path in `base` resolves
    /// against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut cfg = Self::from_str_any(&std::fs::read_to_string(path)?)?;
        if let Some(m) = &cfg.base.dataset.manifest {
            if m.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.base.dataset.manifest = Some(base.join(m));
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `field=value` pairs joined by `, ` in axis order.
    pub key: String,
    pub overrides: Vec<(String, serde_json::Value)>,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
    /// Mean minus the baseline row's mean.
    pub delta: BTreeMap<String, f64>,
    pub is_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    /// Key of the baseline row: the first value of every axis.
    pub baseline: String,
    /// Sorted by key.
    pub rows: Vec<AblationRow>,
    /// Same order as `rows`.
    pub reports: Vec<Report>,
}

impl AblationResult {
    pub fn to_csv(&self) -> String {
        let metrics: Vec<&String> = self.rows.first().map(|r| r.mean.keys().collect()).unwrap_or_default();
        let mut s = String::from("config,baseline");
        for m in &metrics {
            let _ = write!(s, ",{m}_mean,{m}_std,{m}_delta");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "\"{}\",{}", r.key.replace('"', "\"\""), r.is_baseline);
            for m in &metrics {
                let _ = write!(s, ",{},{},{}", r.mean[*m], r.std[*m], r.delta[*m]);
            }
            s.push('\n');
        }
        s
    }
}

fn value_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// All override combinations, first axis slowest.
fn combinations(axes: &[Axis]) -> Vec<Vec<(String, serde_json::Value)>> {
    let mut out: Vec<Vec<(String, serde_json::Value)>> = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((axis.field.clone(), v.clone()));
                    p
                })
            })
            .collect();
    }
    out
}

/// Builds every configuration first, so a bad override fails before any
/// experiment runs. Each configuration keeps the base seed.
pub fn ablation_configs(base: &ExperimentConfig, axes: &[Axis]) -> Result<Vec<(Vec<(String, serde_json::Value)>, ExperimentConfig)>> {
    if axes.is_empty() {
        return Err(Error::BadConfig("ablation needs at least one axis".into()));
    }
    for a in axes {
        if a.values.is_empty() {
            return Err(Error::InvalidOverride {
                field: a.field.clone(),
                message: "axis has no values".into(),
            });
        }
    }
    combinations(axes)
        .into_iter()
        .map(|ov| {
            let mut cfg = base.clone();
            for (field, value) in &ov {
                cfg = apply_override(&cfg, field, value)?;
            }
            Ok((ov, cfg))
        })
        .collect()
}

pub fn ablation_grid(base: &ExperimentConfig, axes: &[Axis]) -> Result<AblationResult> {
    ablation_grid_with(base, axes, RunOptions::default())
}

pub fn ablation_grid_with(base: &ExperimentConfig, axes: &[Axis], opts: RunOptions) -> Result<AblationResult> {
    let configs = ablation_configs(base, axes)?;
    let mut runs = Vec::with_capacity(configs.len());
    for (ov, cfg) in configs {
        let report = run_experiment_with(&cfg, opts)?;
        let key = ov
            .iter()
            .map(|(f, v)| format!("{f}={}", value_text(v)))
            .collect::<Vec<_>>()
            .join(", ");
        runs.push((key, ov, report));
    }
    let baseline_key = runs[0].0.clone();
    let baseline_mean: BTreeMap<String, f64> = runs[0].2.aggregate.iter().map(|(k, a)| (k.clone(), a.mean)).collect();
    let mut rows: Vec<(AblationRow, Report)> = runs
        .into_iter()
        .map(|(key, overrides, report)| {
            let mean: BTreeMap<String, f64> = report.aggregate.iter().map(|(k, a)| (k.clone(), a.mean)).collect();
            let std = report.aggregate.iter().map(|(k, a)| (k.clone(), a.std)).collect();
            let delta = mean
                .iter()
                .map(|(k, m)| (k.clone(), m - baseline_mean.get(k).copied().unwrap_or(f64::NAN)))
                .collect();
            let row = AblationRow {
                is_baseline: key == baseline_key,
                key,
                overrides,
                mean,
                std,
                delta,
            };
            (row, report)
        })
        .collect();
    rows.sort_by(|a, b| a.0.key.cmp(&b.0.key));
    let (rows, reports) = rows.into_iter().unzip();
    Ok(AblationResult {
        baseline: baseline_key,
        rows,
        reports,
    })
}
