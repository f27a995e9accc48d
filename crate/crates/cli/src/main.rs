use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::Failure;

/// Seeded RGB-thermal detection experiments: fusion, augmentation,
/// registration and evaluation.
#[derive(Parser, Debug)]
#[command(name = "msbench", version, about)]
struct Cli {
    /// Worker threads for trials and samples. Defaults to all cores.
    #[arg(long, global = true, env = "MSBENCH_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a seeded experiment and write its report.
    Run(RunArgs),
    /// Sweep config overrides and write the comparison table.
    Ablate(AblateArgs),
    /// Fuse one RGB/TIR pair into a single image.
    Fuse(FuseArgs),
    /// Align one RGB/TIR pair.
    Register(RegisterArgs),
    /// Apply the configured augmentation to every sample of a manifest.
    Augment(AugmentArgs),
    /// Score detections against a manifest's ground truth.
    Evaluate(EvaluateArgs),
    /// Write a synthetic dataset and its manifest.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Experiment config, TOML or JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces the config's base_seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-trial metrics plus mean and std rows.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Record wall-clock time in the report. Makes reports differ between runs.
    #[arg(long)]
    pub timing: bool,
    /// Dotted override such as `fusion.mode=pixel`; values parse as JSON when they can.
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Ablation file with a `[base]` experiment and `[[axes]]` entries.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    #[arg(long)]
    pub rgb: PathBuf,
    #[arg(long)]
    pub tir: PathBuf,
    /// Output image; the extension picks the format.
    #[arg(long)]
    pub out: PathBuf,
    /// `pixel` or `feature`. Defaults to the config's mode, else `pixel`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Experiment config supplying the fusion parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct RegisterArgs {
    #[arg(long)]
    pub rgb: PathBuf,
    #[arg(long)]
    pub tir: PathBuf,
    /// Receives `rgb.png`, `tir.png` and `transform.json` or `flow.bin`.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// `loftr_style` or `superfusion_style`.
    #[arg(long, default_value = "loftr_style")]
    pub method: String,
    /// Frame that stays fixed: `RGB` or `TIR`.
    #[arg(long, default_value = "RGB")]
    pub reference: String,
    /// Experiment config supplying the registration parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Experiment config whose `augmentation` table is applied.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// One detection set per manifest record: a JSON array or JSON Lines.
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the pooled precision-recall curve as CSV.
    #[arg(long)]
    pub pr_csv: Option<PathBuf>,
    /// Also write the FPPI/miss-rate curve as CSV.
    #[arg(long)]
    pub mr_csv: Option<PathBuf>,
    /// Score classes absent from both predictions and ground truth as 1 (`count_as_one`) or drop them (`skip`).
    #[arg(long, default_value = "count_as_one")]
    pub vacuous: String,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scene parameters, TOML or JSON. Defaults apply otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replaces the scene illumination (1 is daylight).
    #[arg(long)]
    pub illumination: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = cli.threads;
    let outcome = msbench_core::harness::with_threads(threads, move || match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Register(a) => commands::register(a),
        Command::Augment(a) => commands::augment(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Synth(a) => commands::synth(a),
    });
    let result = outcome.map_err(Failure::from).and_then(|r| r);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, err) = match f {
                Failure::Config(e) => (2, e),
                Failure::Runtime(e) => (3, e),
            };
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
