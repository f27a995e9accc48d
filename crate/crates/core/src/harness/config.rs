//! Declarative experiment configuration, read from TOML or JSON.
//!
//! Every table rejects unknown keys, so a misspelled option is an error
//! rather than a silently ignored setting. The schema is documented in
//! `docs/config.md`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augmentation::{EnhancePolicy, GeometricRanges, PixelParams};
use crate::dataset::{OutOfBoundsPolicy, SynthConfig};
use crate::decision_fusion::FusionPolicy;
use crate::error::{Error, Result};
use crate::feature_fusion::{InputPairing, Wiring};
use crate::metrics::VacuousClassPolicy;
use crate::registration::{Reference, RegistrationConfig, RegistrationMethod};

use super::detect::BaselineDetectorConfig;

/// Exactly one of `synth` and `manifest` must be set. A table that names
/// neither gets the default synthetic scenes, so a manifest-only table needs
/// no way of writing "no synth" (TOML has no null).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawDataset")]
pub struct DatasetConfig {
    pub synth: Option<SynthConfig>,
    /// Scenes generated per trial.
    pub count: usize,
    pub manifest: Option<PathBuf>,
    pub out_of_bounds: OutOfBoundsPolicy,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawDataset {
    synth: Option<SynthConfig>,
    count: usize,
    manifest: Option<PathBuf>,
    out_of_bounds: OutOfBoundsPolicy,
}

impl Default for RawDataset {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            synth: None,
            count: d.count,
            manifest: None,
            out_of_bounds: d.out_of_bounds,
        }
    }
}

impl From<RawDataset> for DatasetConfig {
    fn from(r: RawDataset) -> Self {
        let synth = match (&r.synth, &r.manifest) {
            (None, None) => Some(SynthConfig::default()),
            _ => r.synth,
        };
        Self {
            synth,
            count: r.count,
            manifest: r.manifest,
            out_of_bounds: r.out_of_bounds,
        }
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            synth: Some(SynthConfig::default()),
            count: 8,
            manifest: None,
            out_of_bounds: OutOfBoundsPolicy::Clip,
        }
    }
}

/// Augmentation applied to every evaluated sample, in the order
/// geometric, pixel, enhancement. Geometric and pixel ops use one draw for
/// both modalities; the enhancement policy carries its own mode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub geometric: Option<GeometricRanges>,
    pub pixel: Option<PixelParams>,
    pub enhance: EnhancePolicy,
}

impl AugmentationConfig {
    pub fn is_identity(&self) -> bool {
        self.geometric.is_none()
            && self.pixel.is_none()
            && self.enhance.rgb_ops.is_empty()
            && self.enhance.tir_ops.is_empty()
            && self.enhance.gain_rgb == 0.0
            && self.enhance.gain_tir == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationMode {
    #[default]
    None,
    LoftrStyle,
    SuperfusionStyle,
}

impl RegistrationMode {
    pub fn method(self) -> Option<RegistrationMethod> {
        match self {
            RegistrationMode::None => None,
            RegistrationMode::LoftrStyle => Some(RegistrationMethod::LoftrStyle),
            RegistrationMode::SuperfusionStyle => Some(RegistrationMethod::SuperfusionStyle),
        }
    }
}

/// Where alignment happens. The bench detector is not trained, so
/// train-side alignment leaves the evaluated samples untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    TrainSide,
    #[default]
    TestSide,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationStage {
    pub method: RegistrationMode,
    pub phase: Phase,
    pub reference: Reference,
    pub params: RegistrationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub rgb: BaselineDetectorConfig,
    pub tir: BaselineDetectorConfig,
    /// Used on pixel- and feature-fused outputs. The lower default threshold
    /// suits pixel fusion, whose gates roughly halve each modality.
    pub fused: BaselineDetectorConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            rgb: BaselineDetectorConfig::default(),
            tir: BaselineDetectorConfig::default(),
            fused: BaselineDetectorConfig {
                threshold: 0.4,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    RgbOnly,
    TirOnly,
    Pixel,
    Feature,
    #[default]
    Decision,
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rgb_only" => Ok(FusionMode::RgbOnly),
            "tir_only" => Ok(FusionMode::TirOnly),
            "pixel" => Ok(FusionMode::Pixel),
            "feature" => Ok(FusionMode::Feature),
            "decision" => Ok(FusionMode::Decision),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::RgbOnly => "rgb_only",
            FusionMode::TirOnly => "tir_only",
            FusionMode::Pixel => "pixel",
            FusionMode::Feature => "feature",
            FusionMode::Decision => "decision",
        })
    }
}

/// Parameters for pixel-level fusion. Weight and scale maps are spatially
/// constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PixelFusionSpec {
    pub weight_rgb: f64,
    pub weight_tir: f64,
    pub alpha_rgb: f64,
    pub alpha_tir: f64,
    pub sigma_noise: f64,
    /// Perturb the 3x3 refinement kernels away from the identity.
    pub perturb_kernels: bool,
}

impl Default for PixelFusionSpec {
    fn default() -> Self {
        Self {
            weight_rgb: 0.0,
            weight_tir: 0.0,
            alpha_rgb: 0.5,
            alpha_tir: 0.5,
            sigma_noise: 0.01,
            perturb_kernels: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamInit {
    /// Block-identity attention projections and zero NIN weights.
    #[default]
    Identity,
    /// Small random weights drawn from the sample seed.
    Seeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureFusionSpec {
    pub wiring: Wiring,
    pub pairing: InputPairing,
    /// Downsampling factor from image to feature grid. Attention cost grows
    /// with the fourth power of the grid side.
    pub stride: usize,
    pub heads: usize,
    pub iterations: usize,
    pub init: ParamInit,
}

impl Default for FeatureFusionSpec {
    fn default() -> Self {
        Self {
            wiring: Wiring::IcfeNin,
            pairing: InputPairing::RgbTir,
            stride: 4,
            heads: 1,
            iterations: 2,
            init: ParamInit::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub policy: FusionPolicy,
    pub pixel: PixelFusionSpec,
    pub feature: FeatureFusionSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub map: bool,
    pub lamr: bool,
    pub vacuous_classes: VacuousClassPolicy,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            map: true,
            lamr: true,
            vacuous_classes: VacuousClassPolicy::CountAsOne,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub augmentation: AugmentationConfig,
    pub registration: RegistrationStage,
    pub detector: DetectorConfig,
    pub fusion: FusionConfig,
    pub metrics: MetricsConfig,
    pub repeats: usize,
    pub base_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            augmentation: AugmentationConfig::default(),
            registration: RegistrationStage::default(),
            detector: DetectorConfig::default(),
            fusion: FusionConfig::default(),
            metrics: MetricsConfig::default(),
            repeats: 20,
            base_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match (&d.synth, &d.manifest) {
            (Some(s), None) => {
                s.validate()?;
                if d.count == 0 {
                    return Err(Error::BadConfig("dataset.count must be >= 1".into()));
                }
            }
            (None, Some(_)) => {}
            _ => {
                return Err(Error::BadConfig(
                    "dataset needs exactly one of `synth` and `manifest`".into(),
                ))
            }
        }
        if self.repeats == 0 {
            return Err(Error::BadConfig("repeats must be >= 1".into()));
        }
        if let Some(g) = &self.augmentation.geometric {
            if !(g.scale.0 > 0.0 && g.scale.1 >= g.scale.0) {
                return Err(Error::BadConfig("augmentation.geometric.scale must be 0 < lo <= hi".into()));
            }
            if !(0.0..=1.0).contains(&g.flip_probability) {
                return Err(Error::BadConfig("augmentation.geometric.flip_probability must be in [0, 1]".into()));
            }
        }
        if let Some(p) = &self.augmentation.pixel {
            p.validate()?;
        }
        for (name, det) in [
            ("rgb", &self.detector.rgb),
            ("tir", &self.detector.tir),
            ("fused", &self.detector.fused),
        ] {
            det.validate()
                .map_err(|e| Error::BadConfig(format!("detector.{name}: {e}")))?;
        }
        self.fusion.policy.validate()?;
        let f = &self.fusion.feature;
        if f.stride == 0 || f.heads == 0 || f.iterations == 0 {
            return Err(Error::BadConfig(
                "fusion.feature stride, heads and iterations must be >= 1".into(),
            ));
        }
        if !(self.fusion.pixel.sigma_noise >= 0.0) {
            return Err(Error::BadConfig("fusion.pixel.sigma_noise must be >= 0".into()));
        }
        Ok(())
    }

    /// Parses TOML or JSON text. Text starting with `{` is read as JSON.
    pub fn from_str_any(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::BadConfig(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; `.json` is JSON, anything else is sniffed.
    /// Relative manifest paths resolve against the config's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let cfg: Self = serde_json::from_str(&text)?;
            cfg.validate()?;
            cfg
        } else {
            Self::from_str_any(&text)?
        };
        if let Some(m) = &cfg.dataset.manifest {
            if m.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.dataset.manifest = Some(base.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn to_json_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

/// Sets `field` (a dotted path such as `fusion.mode`) to `value` and
/// re-validates. Missing intermediate tables are created, so options that
/// default to absent can be switched on.
pub fn apply_override(cfg: &ExperimentConfig, field: &str, value: &serde_json::Value) -> Result<ExperimentConfig> {
    let invalid = |message: String| Error::InvalidOverride {
        field: field.to_string(),
        message,
    };
    if field.is_empty() || field.split('.').any(str::is_empty) {
        return Err(invalid("empty path segment".into()));
    }
    let mut root = cfg.to_json_value()?;
    let parts: Vec<&str> = field.split('.').collect();
    let mut node = &mut root;
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = serde_json::Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| invalid(format!("`{}` is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value.clone());
            break;
        }
        node = obj.entry(part.to_string()).or_insert(serde_json::Value::Null);
    }
    let out: ExperimentConfig = serde_json::from_value(root).map_err(|e| invalid(e.to_string()))?;
    out.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(out)
}

/// Reads an override value from the command line: JSON when it parses,
/// otherwise a plain string.
pub fn parse_override_value(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap_or_else(|_| serde_json::Value::String(text.to_string()))
}
