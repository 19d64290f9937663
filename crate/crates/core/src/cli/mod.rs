//! Command-line front end: staged experiment runs, comparisons and analysis.

pub mod compare;
pub mod manifest;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::analysis::HackingParams;
use crate::config::{preset, ExperimentConfig, PRESETS};
use crate::divergences::DivergenceKind;
use crate::error::LabError;
use crate::training::MetricSeries;
pub use compare::compare_runs;
pub use manifest::{run_experiment, RunManifest, RunOptions, Stage};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Config(LabError),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: LabError,
    },

    #[error("checksum mismatch for {}: manifest has {expected}, file has {actual}", path.display())]
    ChecksumMismatch { path: PathBuf, expected: String, actual: String },

    #[error(transparent)]
    Lab(#[from] LabError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Lab(LabError::Config { .. }) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "distill-lab", version, about = "Oracle, teacher and student distillation runs with teacher-hacking detection")]
pub struct Cli {
    /// Root seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory that receives run directories and reports.
    #[arg(long, global = true, default_value = "runs")]
    pub out_dir: PathBuf,

    /// Maximum worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Skip SVG output.
    #[arg(long, global = true)]
    pub no_svg: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run or resume an experiment from a TOML file or preset name.
    Run { config: String },
    /// Overlay the curves of two or more finished runs.
    Compare {
        manifests: Vec<PathBuf>,
        #[arg(long, default_value = "fwd_kl", value_parser = parse_kind)]
        kind: DivergenceKind,
    },
    /// Detect teacher hacking in a metrics CSV.
    Analyze {
        metrics: PathBuf,
        #[arg(long, default_value = "fwd_kl", value_parser = parse_kind)]
        kind: DivergenceKind,
    },
    /// List or print the shipped presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum PresetAction {
    List,
    Show { name: String },
}

fn parse_kind(s: &str) -> Result<DivergenceKind, String> {
    DivergenceKind::ALL
        .into_iter()
        .find(|k| k.short_name() == s)
        .ok_or_else(|| format!("expected one of fwd_kl, rev_kl, js; got `{s}`"))
}

/// Resolves `spec` as a file if it exists, otherwise as a preset name.
pub fn load_config(spec: &str) -> Result<ExperimentConfig, CliError> {
    let path = Path::new(spec);
    if path.exists() {
        return ExperimentConfig::load(path).map_err(CliError::Config);
    }
    preset(spec).ok_or_else(|| CliError::Usage(format!("`{spec}` is neither a config file nor a preset name")))
}

/// Run directory for a configuration inside `out_dir`.
pub fn run_dir(out_dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    out_dir.join(&cfg.name)
}

/// Executes a parsed command, writing human-readable output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let svg = !cli.no_svg;
    match &cli.command {
        Command::Run { config } => {
            let mut cfg = load_config(config)?;
            if let Some(seed) = cli.seed {
                cfg = cfg.with_seed(seed);
                cfg.name = format!("{}-seed{seed}", cfg.name);
            }
            let dir = run_dir(&cli.out_dir, &cfg);
            let manifest = run_experiment(&cfg, &dir, RunOptions { svg })?;
            let verdict = std::fs::read_to_string(dir.join("analysis/verdict.json")).map_err(|e| LabError::io(&dir, e))?;
            let v: serde_json::Value = serde_json::from_str(&verdict).map_err(|e| LabError::parse("verdict", e.to_string()))?;
            let _ = writeln!(
                out,
                "{}: hacked={} golden_rise_ratio={} ({} stages, {})",
                manifest.name,
                v["hacked"],
                v["golden_rise_ratio"],
                manifest.stages.len(),
                dir.display()
            );
        }
        Command::Compare { manifests, kind } => {
            let report = compare_runs(manifests, &cli.out_dir, *kind, svg)?;
            let _ = writeln!(out, "compared {} runs into {}", report.runs.len(), report.csv_path.display());
        }
        Command::Analyze { metrics, kind } => {
            let series = MetricSeries::load_csv(metrics)?;
            let name = metrics.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
            let a = manifest::analyze_series(&series, *kind, &HackingParams::default(), name, svg)?;
            std::fs::create_dir_all(&cli.out_dir).map_err(|e| LabError::io(&cli.out_dir, e))?;
            let write = |file: &str, text: &str| {
                let p = cli.out_dir.join(file);
                std::fs::write(&p, text).map_err(|e| LabError::io(&p, e))
            };
            write("verdict.json", &a.verdict.to_json())?;
            write("proxy_golden.csv", &a.curve_csv)?;
            if let Some((curve, curves)) = &a.svgs {
                write("proxy_golden.svg", curve)?;
                write("curves.svg", curves)?;
            }
            let _ = write!(out, "{}", a.verdict.to_json());
        }
        Command::Presets { action } => match action {
            PresetAction::List => {
                for name in PRESETS {
                    let _ = writeln!(out, "{name}");
                }
            }
            PresetAction::Show { name } => {
                let cfg = preset(name).ok_or_else(|| CliError::Usage(format!("unknown preset `{name}`")))?;
                let _ = write!(out, "{}", cfg.to_toml());
            }
        },
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return 2;
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
