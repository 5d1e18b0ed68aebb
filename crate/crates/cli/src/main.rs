//! `gesturewatch`: command-line front end of the safety monitor.
//!
//! Every subcommand reads one TOML experiment config, writes its outputs to a
//! run directory and finishes with a `manifest.json` that is enough to
//! re-run it (`gesturewatch replay <dir>`).

mod commands;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand};
use gesturewatch::classify::LIBRARY_VERSION;
use gesturewatch::experiment::ExperimentConfig;
use gesturewatch::monitor::RoutingMode;
use gesturewatch::nn::BUNDLE_VERSION;
use serde::{Deserialize, Serialize};

use manifest::{diff_outputs, hash_outputs, sha256_hex, Manifest, MANIFEST};

/// Environment variable overriding the root of default run directories.
const OUT_ROOT_VAR: &str = "GESTUREWATCH_OUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "gesturewatch", version, about = "Context-aware safety monitor for surgical robot kinematics")]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Run directory. Defaults to `$GESTUREWATCH_OUT_ROOT/<command>-<hash>`,
    /// with `runs` as the root.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Print the full default config and exit.
    #[arg(long)]
    print_defaults: bool,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Generate fault-free synthetic demonstrations.
    Simulate {
        /// Number of demonstrations (overrides `simulate.demos`).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Inject the configured fault mix and label the erroneous gestures.
    Inject,
    /// Run the fault-injection campaign grid against the failure oracle.
    Campaign,
    /// Leave-one-group-out training of the gesture classifier.
    TrainGestures,
    /// Train the gesture classifier, the per-gesture detectors and the baseline.
    TrainDetectors {
        /// Leave this group out of training.
        #[arg(long)]
        holdout: Option<String>,
    },
    /// Stream trajectories through a trained detector library.
    Monitor {
        /// Directory written by `train-detectors` (its `library/`).
        #[arg(long)]
        library: PathBuf,
        /// A trajectory CSV or a directory of them. Defaults to the
        /// experiment corpus.
        #[arg(long)]
        input: Option<PathBuf>,
        /// predicted, ground-truth or baseline (overrides `monitor.mode`).
        #[arg(long)]
        mode: Option<RoutingMode>,
    },
    /// Full leave-one-group-out evaluation of all three routing modes.
    Evaluate {
        /// Also write every fold's detector library.
        #[arg(long)]
        save_models: bool,
    },
    /// Pairwise divergence between per-gesture error distributions.
    Diverge,
    /// Estimate the gesture transition chain.
    Markov {
        /// Additive smoothing.
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
    },
    /// Finite-difference gradient check of every trained architecture.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Re-run a recorded command and compare its outputs byte for byte.
    Replay {
        /// Run directory or its manifest.json.
        manifest: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Inject => "inject",
            Command::Campaign => "campaign",
            Command::TrainGestures => "train-gestures",
            Command::TrainDetectors { .. } => "train-detectors",
            Command::Monitor { .. } => "monitor",
            Command::Evaluate { .. } => "evaluate",
            Command::Diverge => "diverge",
            Command::Markov { .. } => "markov",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Replay { .. } => "replay",
        }
    }

    /// Makes path arguments absolute so the manifest replays from anywhere.
    fn resolved(self) -> Result<Self> {
        let abs = |p: PathBuf| fs::canonicalize(&p).with_context(|| format!("{} does not exist", p.display()));
        Ok(match self {
            Command::Monitor { library, input, mode } => Command::Monitor {
                library: abs(library)?,
                input: input.map(abs).transpose()?,
                mode,
            },
            other => other,
        })
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))?;
    // data paths are relative to the config file
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.data.path, &mut cfg.data.transcriptions].into_iter().flatten() {
        let joined = base.join(&*p);
        *p = fs::canonicalize(&joined)
            .with_context(|| format!("data path {} does not exist", joined.display()))?
            .to_string_lossy()
            .into_owned();
    }
    Ok(cfg)
}

fn default_out(command: &Command, config_toml: &str) -> Result<PathBuf> {
    let root = std::env::var_os(OUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    let key = serde_json::to_string(command)? + config_toml;
    Ok(root.join(format!("{}-{}", command.name(), &sha256_hex(key.as_bytes())[..12])))
}

/// An empty or missing directory, or a previous run directory (which is
/// cleared). Anything else is refused rather than overwritten.
fn prepare_out(dir: &Path) -> Result<()> {
    if dir.exists() {
        let empty = fs::read_dir(dir)?.next().is_none();
        if !empty {
            if !dir.join(MANIFEST).is_file() {
                bail!("output directory {} is not empty and holds no run manifest", dir.display());
            }
            fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Runs one command into `out` and writes its manifest. Returns the
/// manifest and whether the command's own check passed.
fn record(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<(Manifest, bool)> {
    let config = cfg.to_toml()?;
    prepare_out(out)?;
    let ok = commands::execute(&command, cfg, out)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        bundle_version: BUNDLE_VERSION,
        library_version: LIBRARY_VERSION,
        command,
        seed: cfg.seed,
        config_sha256: sha256_hex(config.as_bytes()),
        config,
        outputs: hash_outputs(out)?,
    };
    manifest.write(out)?;
    Ok((manifest, ok))
}

fn replay(path: &Path, out: Option<PathBuf>) -> Result<bool> {
    let original = Manifest::read(path)?;
    if matches!(original.command, Command::Replay { .. }) {
        bail!("{} records a replay; replay the original run instead", path.display());
    }
    if sha256_hex(original.config.as_bytes()) != original.config_sha256 {
        bail!("config hash in {} does not match its config", path.display());
    }
    let cfg = ExperimentConfig::from_toml(&original.config).context("recorded config")?;
    let out = match out {
        Some(o) => o,
        None => default_out(&Command::Replay { manifest: path.into() }, &original.config)?,
    };
    let run_dir = if path.is_dir() { path } else { path.parent().unwrap_or(Path::new(".")) };
    if out.exists() && fs::canonicalize(&out)? == fs::canonicalize(run_dir)? {
        bail!("replay output {} is the recorded run itself", out.display());
    }
    let modified = diff_outputs(&original.outputs, &hash_outputs(run_dir)?);
    for f in &modified {
        println!("modified since recorded: {f}");
    }
    let (manifest, _) = record(original.command.clone(), &cfg, &out)?;
    let differing = diff_outputs(&original.outputs, &manifest.outputs);
    for f in &differing {
        println!("differs: {f}");
    }
    if differing.is_empty() {
        println!("replay of {}: {} outputs identical", original.command.name(), manifest.outputs.len());
    }
    println!("replay written to {}", out.display());
    Ok(differing.is_empty() && modified.is_empty())
}

fn run(cli: Cli) -> Result<bool> {
    if cli.print_defaults {
        print!("{}", ExperimentConfig::default().to_toml()?);
        return Ok(true);
    }
    let Some(command) = cli.command else {
        Cli::command()
            .error(clap::error::ErrorKind::MissingSubcommand, "a subcommand is required")
            .exit();
    };
    if let Command::Replay { manifest } = &command {
        return replay(manifest, cli.out);
    }
    let cfg = load_config(cli.config.as_deref())?;
    let command = command.resolved()?;
    let out = match cli.out {
        Some(o) => o,
        None => default_out(&command, &cfg.to_toml()?)?,
    };
    let (_, ok) = record(command, &cfg, &out)?;
    println!("run directory: {}", out.display());
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
