//! One function per subcommand. Each writes only into the run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use gesturewatch::classify::{gesture_accuracy, train_gesture_classifier, DetectorLibrary, GestureTrainConfig};
use gesturewatch::experiment::{
    build_faulted_corpus, gradcheck_suite, load_corpus, run_loso_experiment, save_corpus, train_library, DataConfig,
    DataFormat, ExperimentConfig,
};
use gesturewatch::fault::run_campaign;
use gesturewatch::folds::{make_loso_folds, LosoSpec};
use gesturewatch::kinematics::{load_trajectory, InputFormat, LoadOptions, Trajectory};
use gesturewatch::metrics::divergence_matrix;
use gesturewatch::monitor::{evaluate_pipeline, MonitorConfig, MonitorReport};
use gesturewatch::nn::TrainConfig;
use gesturewatch::task::estimate_markov;

use crate::Command;

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json(value: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Runs `command`; `false` means it ran but its own check failed.
pub fn execute(command: &Command, cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    match command {
        Command::Simulate { n } => simulate(cfg, *n, out),
        Command::Inject => inject(cfg, out),
        Command::Campaign => campaign(cfg, out),
        Command::TrainGestures => train_gestures(cfg, out),
        Command::TrainDetectors { holdout } => train_detectors(cfg, holdout.as_deref(), out),
        Command::Monitor { library, input, mode } => {
            let mcfg = MonitorConfig {
                mode: mode.unwrap_or(cfg.monitor.mode),
                ..cfg.monitor.clone()
            };
            monitor(cfg, library, input.as_deref(), &mcfg, out)
        }
        Command::Evaluate { save_models } => evaluate(cfg, *save_models, out),
        Command::Diverge => diverge(cfg, out),
        Command::Markov { alpha } => markov(cfg, *alpha, out),
        Command::Gradcheck { tolerance } => gradcheck(cfg, *tolerance, out),
        Command::Replay { .. } => unreachable!("replay is handled before dispatch"),
    }
}

fn simulate(cfg: &ExperimentConfig, n: Option<usize>, out: &Path) -> Result<bool> {
    let mut cfg = cfg.clone();
    if let Some(n) = n {
        cfg.simulate.demos = n;
        cfg.validate().context("--n")?;
    }
    let corpus = cfg.simulated_corpus()?;
    save_corpus(&out.join("corpus"), &corpus)?;
    println!("simulated {} demonstrations", corpus.len());
    Ok(true)
}

fn inject(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let (corpus, records) = build_faulted_corpus(&cfg.source_corpus()?, &cfg.faults, cfg.stage_seed("faults"))?;
    save_corpus(&out.join("corpus"), &corpus)?;
    write(out, "injections.json", json(&records)?)?;
    let failures = records.iter().filter(|r| !r.events.is_empty()).count();
    println!(
        "injected {} of {} demonstrations, {failures} led to a failure",
        records.len(),
        corpus.len()
    );
    Ok(true)
}

fn campaign(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let corpus = cfg.source_corpus()?;
    let mut result = run_campaign(&cfg.campaign, &corpus, cfg.stage_seed("campaign"))?;
    result.write(out)?;
    println!("{:>12} {:>12} {:>6} {:>10} {:>8}", "grasper", "duration", "runs", "blockdrop", "dropoff");
    for c in &result.cells {
        println!(
            "{:>12} {:>12} {:>6} {:>10.2} {:>8.2}",
            format!("[{}, {}]", c.cell.grasper[0], c.cell.grasper[1]),
            format!("[{}, {}]", c.cell.duration[0], c.cell.duration[1]),
            c.n_injections,
            c.blockdrop_rate(),
            c.dropoff_rate()
        );
    }
    println!(
        "{} injections: {} block drops, {} dropoff failures",
        result.total_injections(),
        result.total_blockdrops(),
        result.total_dropoffs()
    );
    Ok(true)
}

fn train_gestures(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let (corpus, _) = cfg.experiment_corpus()?;
    let folds = make_loso_folds(&LosoSpec::from_corpus(&corpus)?)?;
    let gcfg = GestureTrainConfig {
        train: TrainConfig {
            seed: cfg.stage_seed("gesture"),
            ..cfg.gesture.train.clone()
        },
        ..cfg.gesture.clone()
    };
    let (models, report) = train_gesture_classifier(&corpus, &folds, &gcfg)?;
    for (fold, model) in report.folds.iter().zip(&models) {
        let dir = out.join("folds").join(&fold.test_group);
        fs::create_dir_all(&dir)?;
        model.save(&dir.join("gesture.bin"))?;
        println!("{:<8} accuracy {:.4}", fold.test_group, fold.accuracy);
    }
    println!("mean LOSO gesture accuracy {:.4}", report.mean_accuracy);
    write(out, "gestures.json", json(&report)?)?;
    Ok(true)
}

fn train_detectors(cfg: &ExperimentConfig, holdout: Option<&str>, out: &Path) -> Result<bool> {
    let (corpus, _) = cfg.experiment_corpus()?;
    let (library, fold) = train_library(&corpus, cfg, holdout)?;
    library.save(&out.join("library"))?;
    for (g, p) in library.routing_table() {
        println!("{g:<4} {p}");
    }
    if holdout.is_some() {
        let test: Vec<&Trajectory> = fold.test.iter().map(|&i| &corpus[i]).collect();
        let acc = gesture_accuracy(&library.gesture, &test)?;
        println!("held-out group {}: gesture accuracy {acc:.4}", fold.test_group);
    }
    Ok(true)
}

fn monitor_input(cfg: &ExperimentConfig, input: Option<&Path>) -> Result<Vec<Trajectory>> {
    let Some(input) = input else {
        return Ok(cfg.experiment_corpus()?.0);
    };
    if input.is_dir() {
        return Ok(load_corpus(&DataConfig {
            path: Some(input.to_string_lossy().into_owned()),
            ..cfg.data.clone()
        })?);
    }
    let format = match cfg.data.format {
        DataFormat::Csv => InputFormat::Csv,
        DataFormat::Jigsaws => InputFormat::Jigsaws,
    };
    let opts = LoadOptions {
        sample_rate_hz: cfg.data.sample_rate_hz,
        ..Default::default()
    };
    Ok(vec![load_trajectory(input, format, &opts)?])
}

fn monitor(
    cfg: &ExperimentConfig,
    library: &Path,
    input: Option<&Path>,
    mcfg: &MonitorConfig,
    out: &Path,
) -> Result<bool> {
    let library = DetectorLibrary::load(library).with_context(|| format!("loading library {}", library.display()))?;
    let corpus = monitor_input(cfg, input)?;
    let refs: Vec<&Trajectory> = corpus.iter().collect();
    let (report, latency) = evaluate_pipeline(&library, &refs, mcfg)?;
    write(out, "report.json", report.to_json()?)?;
    write(out, "alerts.csv", report.alerts_csv())?;
    let table = format!("{}\n{}\n", MonitorReport::table_header(), report.table_row(None));
    write(out, "table.txt", &table)?;
    println!("{}\n{}", MonitorReport::table_header(), report.table_row(Some(&latency)));
    println!(
        "{} alerts over {} demonstrations; latency mean {:.4} ms, p95 {:.4} ms",
        report.per_demo.iter().map(|d| d.alerts.len()).sum::<usize>(),
        report.demos,
        latency.mean_ms,
        latency.p95_ms
    );
    Ok(true)
}

fn evaluate(cfg: &ExperimentConfig, save_models: bool, out: &Path) -> Result<bool> {
    let (corpus, _) = cfg.experiment_corpus()?;
    let (report, models, latency) = run_loso_experiment(&corpus, cfg)?;
    write(out, "report.json", json(&report)?)?;
    write(out, "table.txt", report.table(None))?;
    write(out, "alerts.csv", report.predicted.alerts_csv())?;
    if save_models {
        for m in &models {
            m.library.save(&out.join("folds").join(&m.test_group).join("library"))?;
        }
    }
    print!("{}", report.table(Some(&latency)));
    Ok(true)
}

fn diverge(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let (corpus, _) = cfg.experiment_corpus()?;
    let m = divergence_matrix(&corpus, &cfg.divergence.subset, &cfg.divergence.options)?;
    write(out, "divergence.csv", m.to_csv())?;
    let mut pairs = String::from("a,b,jsd\n");
    for (a, b, v) in m.ranked_pairs() {
        let _ = writeln!(pairs, "{a},{b},{v}");
    }
    write(out, "pairs.csv", &pairs)?;
    if !m.omitted.is_empty() {
        println!("omitted (too few samples): {:?}", m.omitted.iter().map(ToString::to_string).collect::<Vec<_>>());
    }
    for (a, b, v) in m.ranked_pairs().into_iter().take(5) {
        println!("{a} {b} {v:.4}");
    }
    Ok(true)
}

fn markov(cfg: &ExperimentConfig, alpha: f64, out: &Path) -> Result<bool> {
    let corpus = cfg.source_corpus()?;
    let sequences: Vec<_> = corpus.iter().map(Trajectory::gesture_sequence).collect();
    let chain = estimate_markov(&cfg.vocabulary(), &sequences, alpha)?;
    let text = chain.to_text();
    write(out, "chain.txt", &text)?;
    write(out, "chain.json", json(&chain)?)?;
    print!("{text}");
    Ok(true)
}

fn gradcheck(cfg: &ExperimentConfig, tolerance: f64, out: &Path) -> Result<bool> {
    let checks = gradcheck_suite(cfg)?;
    write(out, "gradcheck.json", json(&checks)?)?;
    let mut ok = true;
    for c in &checks {
        let pass = c.report.max_rel_error <= tolerance;
        ok &= pass;
        println!(
            "{:<9} {:>8} params {:>6} checked  max rel error {:.3e}  {}",
            c.name,
            c.report.param_count,
            c.report.checked,
            c.report.max_rel_error,
            if pass { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}
