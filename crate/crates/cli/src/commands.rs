use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context};
use msbench_core::dataset::{load_manifest, synth_batch, write_dataset, OutOfBoundsPolicy, SynthConfig};
use msbench_core::harness::{
    ablation_grid_with, apply_override, augment_sample, fused_image, parse_override_value, run_experiment_with,
    AblationConfig, ExperimentConfig, FusionMode, RunOptions,
};
use msbench_core::io::{read_image, write_flow, write_image};
use msbench_core::metrics::{evaluate as score, fppi_mr_csv, pr_csv, EvalImage, VacuousClassPolicy};
use msbench_core::registration::{register_pair, Alignment, Reference, RegistrationMethod};
use msbench_core::{DetectionSet, Error, PairedSample, Seed};

use crate::{AblateArgs, AugmentArgs, EvaluateArgs, FuseArgs, RegisterArgs, RunArgs, SynthArgs};

/// Decides the exit code: configuration problems exit 2, everything else 3.
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let config = e
            .chain()
            .any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_config_error));
        if config {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

type Outcome = Result<(), Failure>;

/// Any failure while reading a user-supplied config, including a missing
/// file, counts as a configuration error.
fn config_err(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| Failure::Config(anyhow::Error::new(e).context(format!("reading {}", path.display())))
}

fn write(path: &Path, contents: &str) -> Outcome {
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Runtime)
}

fn load_experiment(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::from_file(path).map_err(config_err(path))
}

pub fn run(a: RunArgs) -> Outcome {
    let mut cfg = load_experiment(&a.config)?;
    for text in &a.overrides {
        let (field, value) = text
            .split_once('=')
            .ok_or_else(|| Failure::Config(anyhow!("override `{text}` is not FIELD=VALUE")))?;
        cfg = apply_override(&cfg, field.trim(), &parse_override_value(value.trim()))?;
    }
    if let Some(seed) = a.seed {
        cfg.base_seed = seed;
    }
    let report = run_experiment_with(&cfg, RunOptions { timing: a.timing })?;
    write(&a.out, &report.to_json()?)?;
    if let Some(csv) = &a.csv {
        write(csv, &report.to_csv())?;
    }
    for (name, agg) in &report.aggregate {
        log::info!("{name}: {:.4} ± {:.4}", agg.mean, agg.std);
    }
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Outcome {
    let mut cfg = AblationConfig::from_file(&a.config).map_err(config_err(&a.config))?;
    if let Some(seed) = a.seed {
        cfg.base.base_seed = seed;
    }
    let result = ablation_grid_with(&cfg.base, &cfg.axes, RunOptions { timing: a.timing })?;
    let mut json = serde_json::to_string_pretty(&result).map_err(Error::from)?;
    json.push('\n');
    write(&a.out, &json)?;
    if let Some(csv) = &a.csv {
        write(csv, &result.to_csv())?;
    }
    Ok(())
}

fn read_pair(rgb: &Path, tir: &Path) -> Result<PairedSample, Failure> {
    let rgb = read_image(rgb).with_context(|| format!("reading {}", rgb.display()))?;
    let tir = read_image(tir).with_context(|| format!("reading {}", tir.display()))?;
    Ok(PairedSample::new(rgb, tir, Vec::new())?)
}

pub fn fuse(a: FuseArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => load_experiment(p)?,
        None => ExperimentConfig {
            fusion: msbench_core::harness::FusionConfig {
                mode: FusionMode::Pixel,
                ..Default::default()
            },
            ..Default::default()
        },
    };
    if let Some(mode) = &a.mode {
        cfg.fusion.mode = FusionMode::from_str(mode)?;
    }
    let pair = read_pair(&a.rgb, &a.tir)?;
    let fused = fused_image(&pair.rgb, &pair.tir, &cfg, &Seed::new(a.seed))?;
    write_image(&a.out, &fused).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

pub fn register(a: RegisterArgs) -> Outcome {
    let params = match &a.config {
        Some(p) => load_experiment(p)?.registration.params,
        None => Default::default(),
    };
    let method = RegistrationMethod::from_str(&a.method)?;
    let reference = Reference::from_str(&a.reference)?;
    let pair = read_pair(&a.rgb, &a.tir)?;
    let (aligned, alignment) = register_pair(&pair, method, reference, &params)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    write_image(&a.out_dir.join("rgb.png"), &aligned.rgb)?;
    write_image(&a.out_dir.join("tir.png"), &aligned.tir)?;
    match alignment {
        Alignment::Transform(t) => {
            let mut json = serde_json::to_string_pretty(&t).map_err(Error::from)?;
            json.push('\n');
            write(&a.out_dir.join("transform.json"), &json)?;
        }
        Alignment::Flow(flow) => write_flow(&a.out_dir.join("flow.bin"), &flow)?,
    }
    Ok(())
}

pub fn augment(a: AugmentArgs) -> Outcome {
    let cfg = load_experiment(&a.config)?;
    let samples = load_manifest(&a.manifest, cfg.dataset.out_of_bounds)?;
    let base = Seed::new(a.seed);
    let out = samples
        .iter()
        .enumerate()
        .map(|(i, s)| augment_sample(s, &cfg, &base.derive(i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    write_dataset(&out, &a.out_dir)?;
    Ok(())
}

fn read_detections(path: &Path) -> Result<Vec<DetectionSet>, Failure> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()).into());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('[') {
        let sets: Vec<DetectionSet> = serde_json::from_str(&text).map_err(|e| Failure::Runtime(e.into()))?;
        for s in &sets {
            s.validate()?;
        }
        return Ok(sets);
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            DetectionSet::from_json(l)
                .with_context(|| format!("{} line {}", path.display(), i + 1))
                .map_err(Failure::Runtime)
        })
        .collect()
}

pub fn evaluate(a: EvaluateArgs) -> Outcome {
    let policy: VacuousClassPolicy = serde_json::from_value(serde_json::Value::String(a.vacuous.clone()))
        .map_err(|_| Failure::Config(anyhow!("unknown vacuous-class policy `{}`", a.vacuous)))?;
    let samples = load_manifest(&a.manifest, OutOfBoundsPolicy::Clip)?;
    let sets = read_detections(&a.detections)?;
    if sets.len() != samples.len() {
        return Err(Failure::Runtime(anyhow!(
            "{} detection sets for {} manifest records",
            sets.len(),
            samples.len()
        )));
    }
    let images: Vec<EvalImage> = sets
        .into_iter()
        .zip(samples)
        .map(|(d, s)| EvalImage::new(d.detections, s.boxes))
        .collect();
    let result = score(&images, policy)?;
    let mut json = serde_json::to_string_pretty(&result).map_err(Error::from)?;
    json.push('\n');
    write(&a.out, &json)?;
    if let Some(p) = &a.pr_csv {
        write(p, &pr_csv(&result))?;
    }
    if let Some(p) = &a.mr_csv {
        write(p, &fppi_mr_csv(&result))?;
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => {
            if !p.exists() {
                return Err(config_err(p)(Error::MissingFile(p.clone())));
            }
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SynthConfig::from_str_any(&text).map_err(config_err(p))?
        }
        None => SynthConfig::default(),
    };
    if let Some(v) = a.illumination {
        cfg.illumination = v;
        cfg.validate()?;
    }
    let samples = synth_batch(&cfg, a.count, a.seed)?;
    let manifest = write_dataset(&samples, &a.out_dir)?;
    if samples.iter().any(|s| s.meta.injected_transform.is_some()) {
        let transforms: Vec<_> = samples.iter().map(|s| s.meta.injected_transform).collect();
        let mut json = serde_json::to_string_pretty(&transforms).map_err(Error::from)?;
        json.push('\n');
        write(&a.out_dir.join("transforms.json"), &json)?;
    }
    println!("{}", manifest.display());
    Ok(())
}
