//! Acceptance gate. Every criterion prints one `PASS`/`FAIL` line to the
//! terminal (bypassing test output capture) and then asserts.
//!
//! The JIGSAWS reproduction needs the licensed dataset and is ignored by
//! default: point `GESTUREWATCH_JIGSAWS` at the `Suturing` directory and run
//! `cargo test -p gesturewatch-cli --test acceptance -- --ignored`.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gesturewatch::experiment::{gradcheck_suite, run_loso_experiment, ExperimentConfig, ExperimentReport, FoldModels};
use gesturewatch::fault::run_campaign;
use gesturewatch::fault::dtw_distance;
use gesturewatch::folds::{make_loso_folds, LosoSpec};
use gesturewatch::kinematics::{GestureId, Trajectory};
use gesturewatch::metrics::{js_divergence, kde_fit, roc_auc, DiagGaussian, Grid};
use gesturewatch::monitor::{run_monitor, run_monitor_batch, LatencySummary, MonitorConfig, RoutingMode};
use gesturewatch::seed;
use gesturewatch::sim::{generate_corpus, CorpusSpec, SimParams};
use gesturewatch::task::{estimate_markov, sample_sequence, GestureVocabulary, MarkovChain, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: &str, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {id} {title}: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{line}");
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

#[test]
fn criterion_1_gradient_integrity() {
    let started = Instant::now();
    let checks = gradcheck_suite(&ExperimentConfig::default()).unwrap();
    let elapsed = started.elapsed();
    let worst = checks.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    let names: Vec<&str> = checks.iter().map(|c| c.name.as_str()).collect();
    let pass = names == ["gesture", "detector", "baseline"]
        && checks.iter().all(|c| c.report.checked > 0)
        && worst <= 1e-4
        && elapsed <= Duration::from_secs(60);
    verdict(
        "1",
        "gradient integrity",
        pass,
        &format!("{names:?} max rel error {worst:.2e}, {}", secs(elapsed)),
    );
}

/// Probability that a random positive outranks a random negative.
fn rank_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Minimum over every monotone, continuous alignment path.
fn brute_dtw(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize) -> f64 {
    let here = euclid(&a[i], &b[j]);
    if i + 1 == a.len() && j + 1 == b.len() {
        return here;
    }
    let mut best = f64::INFINITY;
    if i + 1 < a.len() {
        best = best.min(brute_dtw(a, b, i + 1, j));
    }
    if j + 1 < b.len() {
        best = best.min(brute_dtw(a, b, i, j + 1));
    }
    if i + 1 < a.len() && j + 1 < b.len() {
        best = best.min(brute_dtw(a, b, i + 1, j + 1));
    }
    here + best
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Composite Simpson's rule on the continuous base-2 JSD integrand.
fn quadrature_jsd(m1: f64, s1: f64, m2: f64, s2: f64, lo: f64, hi: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let f = |x: f64| {
        let (p, q) = (normal_pdf(x, m1, s1), normal_pdf(x, m2, s2));
        let m = 0.5 * (p + q);
        let term = |a: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
        0.5 * (term(p) + term(q))
    };
    let mut acc = f(lo) + f(hi);
    for k in 1..n {
        acc += f(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[test]
fn criterion_2_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let mut auc_err: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..60);
        let coarse = rng.random_bool(0.5);
        let mut scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.random();
                if coarse {
                    (s * 5.0).round() / 5.0
                } else {
                    s
                }
            })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        scores.swap(0, n - 1);
        let roc = roc_auc(&scores, &labels).unwrap().expect("both classes present");
        auc_err = auc_err.max((roc.auc - rank_auc(&scores, &labels)).abs());
    }

    let mut dtw_err: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let seq = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            let len = rng.random_range(1..=8);
            (0..len).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect()
        };
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let fast = dtw_distance(&a, &b).unwrap();
        let slow = brute_dtw(&a, &b, 0, 0);
        dtw_err = dtw_err.max((fast - slow).abs() / slow.max(1.0));
    }

    let mut symmetric = true;
    let mut bounded = true;
    for _ in 0..100 {
        let d = rng.random_range(1..=2);
        let set = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            let n = rng.random_range(5..40);
            let shift = rng.random_range(-3.0..3.0);
            let scale = rng.random_range(0.2..3.0);
            (0..n)
                .map(|_| (0..d).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let (p, q) = (kde_fit(&set(&mut rng)).unwrap(), kde_fit(&set(&mut rng)).unwrap());
        let grid = Grid::covering(&[&p, &q], 60).unwrap();
        let pq = js_divergence(&p, &q, &grid).unwrap();
        let qp = js_divergence(&q, &p, &grid).unwrap();
        let pp = js_divergence(&p, &p, &grid).unwrap();
        symmetric &= (pq - qp).abs() <= 1e-12;
        bounded &= (0.0..=1.0).contains(&pq) && pp.abs() <= 1e-12;
    }

    let (m1, s1, m2, s2) = (0.0, 1.0, 1.5, 0.7);
    let p = DiagGaussian {
        mean: vec![m1],
        std: vec![s1],
    };
    let q = DiagGaussian {
        mean: vec![m2],
        std: vec![s2],
    };
    let points = 200;
    let grid = Grid::covering(&[&p, &q], points).unwrap();
    let library = js_divergence(&p, &q, &grid).unwrap();
    let (lo, hi) = (grid.axes[0].lo, grid.axes[0].hi);
    let oracle = quadrature_jsd(m1, s1, m2, s2, lo, hi, 10 * points);
    let jsd_err = (library - oracle).abs();

    let pass = auc_err <= 1e-9 && dtw_err <= 1e-9 && symmetric && bounded && jsd_err <= 1e-3;
    verdict(
        "2",
        "metric oracles",
        pass,
        &format!(
            "AUC max err {auc_err:.1e} over 1000 sets, DTW max err {dtw_err:.1e} over 100 pairs, \
             JSD symmetric={symmetric} bounded={bounded}, two-Gaussian JSD {library:.5} vs quadrature {oracle:.5}"
        ),
    );
}

#[test]
fn criterion_3_markov_recovery() {
    let source = MarkovChain::suturing_reference();
    let sequences: Vec<Vec<GestureId>> = (0..10_000)
        .map(|i| sample_sequence(&source, seed::derive_indexed(3, "markov", i), 200))
        .collect();
    let estimate = estimate_markov(&GestureVocabulary::suturing(), &sequences, 0.0).unwrap();
    let mut worst: f64 = 0.0;
    for (i, from) in source.states.iter().enumerate() {
        let e = estimate.index_of(*from).unwrap();
        worst = worst.max((source.initial[i] - estimate.initial[e]).abs());
        for (j, to) in source.states.iter().enumerate() {
            let p = estimate.probability(*from, *to).unwrap();
            worst = worst.max((source.transitions[i][j] - p).abs());
        }
    }

    let corpus = generate_corpus(&CorpusSpec {
        demos: 30,
        groups: 5,
        seed: 3,
        params: SimParams::default(),
    })
    .unwrap();
    let seqs: Vec<Vec<GestureId>> = corpus.iter().map(Trajectory::gesture_sequence).collect();
    let block = estimate_markov(&GestureVocabulary::block_transfer(), &seqs, 0.0).unwrap();
    let exact = block == MarkovChain::block_transfer();

    verdict(
        "3",
        "Markov recovery",
        worst <= 0.02 && exact,
        &format!("max entry error {worst:.4} from 10000 sequences, Block Transfer chain exact={exact}"),
    );
}

fn in_cell(c: &gesturewatch::fault::CellResult, grasper: [f64; 2], duration: [f64; 2]) -> bool {
    c.cell.grasper == grasper && c.cell.duration == duration
}

#[test]
fn criterion_4_campaign_trends() {
    let cfg = ExperimentConfig::default();
    let started = Instant::now();
    let corpus = cfg.simulated_corpus().unwrap();
    let result = run_campaign(&cfg.campaign, &corpus, cfg.stage_seed("campaign")).unwrap();
    let elapsed = started.elapsed();
    let pooled = |g: [f64; 2], d: [f64; 2]| {
        let cells: Vec<_> = result.cells.iter().filter(|c| in_cell(c, g, d)).collect();
        let n: usize = cells.iter().map(|c| c.n_injections).sum();
        let drops: usize = cells.iter().map(|c| c.n_blockdrop).sum();
        let dropoffs: usize = cells.iter().map(|c| c.n_dropoff).sum();
        (n, drops as f64 / n as f64, dropoffs as f64 / n as f64)
    };
    let (n_open, drop_open, _) = pooled([1.5, 1.6], [0.55, 0.70]);
    let (n_closed_early, drop_ce, dropoff_ce) = pooled([0.3, 0.4], [0.55, 0.70]);
    let (n_closed_late, _, dropoff_cl) = pooled([0.3, 0.4], [0.65, 0.90]);
    let total = result.total_injections();
    let pass = total == 160
        && n_open > 0
        && n_closed_early > 0
        && n_closed_late > 0
        && drop_open >= 0.85
        && drop_ce + dropoff_ce <= 0.10
        && dropoff_cl >= 0.90
        && elapsed <= Duration::from_secs(600);
    verdict(
        "4",
        "fault-campaign trends",
        pass,
        &format!(
            "{total} injections; S'[1.5,1.6] D[0.55,0.70] block drop {drop_open:.2} (n={n_open}); \
             S'[0.3,0.4] D[0.55,0.70] failures {:.2} (n={n_closed_early}); \
             S'[0.3,0.4] D[0.65,0.90] dropoff {dropoff_cl:.2} (n={n_closed_late}); {}",
            drop_ce + dropoff_ce,
            secs(elapsed)
        ),
    );
}

struct EndToEnd {
    corpus: Vec<Trajectory>,
    report: ExperimentReport,
    models: Vec<FoldModels>,
    latency: LatencySummary,
    elapsed: Duration,
}

fn end_to_end() -> &'static EndToEnd {
    static RUN: OnceLock<EndToEnd> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        let started = Instant::now();
        let (corpus, _) = cfg.experiment_corpus().unwrap();
        let (report, models, latency) = run_loso_experiment(&corpus, &cfg).unwrap();
        EndToEnd {
            corpus,
            report,
            models,
            latency,
            elapsed: started.elapsed(),
        }
    })
}

#[test]
fn criterion_5_end_to_end_block_transfer() {
    let e = end_to_end();
    let r = &e.report;
    let faulted = e.corpus.iter().filter(|t| t.meta.fault_onset_ms.is_some()).count();
    let f1 = r.predicted.f1().unwrap_or(0.0);
    let auc = r.predicted.auc.unwrap_or(0.0);
    let base_auc = r.baseline.auc.unwrap_or(0.0);
    let gap = auc - base_auc;
    let groups = make_loso_folds(&LosoSpec::from_corpus(&e.corpus).unwrap()).unwrap().len();
    let pass = e.corpus.len() == 100
        && (40..=60).contains(&faulted)
        && groups == 5
        && r.mean_gesture_accuracy >= 0.90
        && f1 >= 0.80
        && auc >= 0.80
        && gap >= 0.05
        && e.elapsed <= Duration::from_secs(30 * 60);
    verdict(
        "5",
        "end-to-end synthetic Block Transfer",
        pass,
        &format!(
            "{} demos, {faulted} faulted, {groups} folds; gesture accuracy {:.4}, F1 {f1:.3}, AUC {auc:.3}, \
             baseline AUC {base_auc:.3}, context gap {gap:+.3} (needs >= +0.05); {}",
            e.corpus.len(),
            r.mean_gesture_accuracy,
            secs(e.elapsed)
        ),
    );
}

#[test]
fn criterion_6_ground_truth_routing_dominates() {
    let r = &end_to_end().report;
    let gt = r.ground_truth.f1().unwrap_or(0.0);
    let pred = r.predicted.f1().unwrap_or(0.0);
    verdict(
        "6",
        "ground-truth F1 >= predicted F1",
        gt >= pred,
        &format!("ground truth {gt:.3}, predicted {pred:.3}"),
    );
}

#[test]
fn criterion_7_latency_and_causality() {
    let e = end_to_end();
    let mut identical = true;
    let mut compared = 0;
    for (fold, models) in make_loso_folds(&LosoSpec::from_corpus(&e.corpus).unwrap())
        .unwrap()
        .iter()
        .zip(&e.models)
        .take(2)
    {
        for &i in &fold.test {
            for mode in [RoutingMode::Predicted, RoutingMode::GroundTruth, RoutingMode::Baseline] {
                let cfg = MonitorConfig {
                    mode,
                    ..Default::default()
                };
                let streamed = run_monitor(&models.library, &e.corpus[i], &cfg).unwrap();
                let batch = run_monitor_batch(&models.library, &e.corpus[i], &cfg).unwrap();
                let same = format!("{:?}{:?}{:?}{:?}", streamed.scores, streamed.predicted, streamed.routed, streamed.alerts)
                    == format!("{:?}{:?}{:?}{:?}", batch.scores, batch.predicted, batch.routed, batch.alerts);
                identical &= same;
                compared += 1;
            }
        }
    }
    let pass = e.latency.samples > 0 && e.latency.mean_ms <= 5.0 && identical;
    verdict(
        "7",
        "timing and causality",
        pass,
        &format!(
            "mean {:.4} ms/sample over {} samples (p95 {:.4} ms); streamed == batch on {compared} runs: {identical}",
            e.latency.mean_ms, e.latency.samples, e.latency.p95_ms
        ),
    );
}

#[test]
#[ignore = "needs the JIGSAWS dataset; set GESTUREWATCH_JIGSAWS to its Suturing directory"]
fn criterion_8_jigsaws_reproduction() {
    let root = std::env::var("GESTUREWATCH_JIGSAWS").expect("GESTUREWATCH_JIGSAWS is not set");
    let root = Path::new(&root);
    let mut cfg = ExperimentConfig::default();
    cfg.task = Task::Suturing;
    cfg.data.path = Some(root.join("kinematics/AllGestures").to_string_lossy().into_owned());
    cfg.data.transcriptions = Some(root.join("transcriptions").to_string_lossy().into_owned());
    cfg.data.format = gesturewatch::experiment::DataFormat::Jigsaws;
    cfg.data.sample_rate_hz = Some(30.0);
    let (corpus, _) = cfg.experiment_corpus().unwrap();
    let (report, _, _) = run_loso_experiment(&corpus, &cfg).unwrap();
    let accuracy = report.mean_gesture_accuracy;
    let auc = report.predicted.auc.unwrap_or(0.0);
    let matrix =
        gesturewatch::metrics::divergence_matrix(&corpus, &cfg.divergence.subset, &cfg.divergence.options).unwrap();
    let core = [2, 3, 4, 6].map(GestureId);
    let top: Vec<_> = matrix.ranked_pairs().into_iter().take(3).collect();
    let top_in_core = top.iter().all(|(a, b, _)| core.contains(a) && core.contains(b));
    let pass = (accuracy - 0.8449).abs() <= 0.05 && (auc - 0.81).abs() <= 0.08 && top_in_core;
    verdict(
        "8",
        "JIGSAWS reproduction",
        pass,
        &format!("gesture accuracy {accuracy:.4}, AUC {auc:.3}, top divergence pairs {top:?}"),
    );
}

const SMALL: &str = "\
[simulate]
demos = 10
groups = 2

[gesture.train]
max_epochs = 3

[detector.train]
max_epochs = 3
";

fn gesturewatch(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gesturewatch"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn criterion_9_determinism_from_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("small.toml"), SMALL).unwrap();
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["simulate", "--n", "8"]),
        ("inject", vec!["inject"]),
        ("campaign", vec!["campaign"]),
        ("train-gestures", vec!["train-gestures"]),
        ("train-detectors", vec!["train-detectors", "--holdout", "S1"]),
        ("evaluate", vec!["evaluate", "--save-models"]),
        ("diverge", vec!["diverge"]),
        ("markov", vec!["markov"]),
        ("gradcheck", vec!["gradcheck"]),
    ];
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut run = |name: &str, args: &[&str]| {
        let out = format!("{name}-run");
        let o = gesturewatch(dir, &[&["--config", "small.toml", "--out", &out][..], args].concat());
        if !o.status.success() {
            failures.push(format!("{name}: {}", String::from_utf8_lossy(&o.stderr).trim()));
            return;
        }
        let o = gesturewatch(dir, &["replay", &out, "--out", &format!("{name}-replay")]);
        if !o.status.success() {
            failures.push(format!("{name} replay: {}", String::from_utf8_lossy(&o.stdout).trim()));
        }
        checked += 1;
    };
    for (name, args) in &runs {
        run(name, args);
    }
    run(
        "monitor",
        &["monitor", "--library", "train-detectors-run/library", "--input", "inject-run/corpus"],
    );
    let bundles = ["train-gestures-run/folds/S1/gesture.bin", "train-detectors-run/library/detector_G2.bin"]
        .iter()
        .all(|b| dir.join(b).is_file());
    verdict(
        "9",
        "determinism",
        failures.is_empty() && checked == 10 && bundles,
        &format!("{checked} subcommands replayed byte-identical from their manifests; failures {failures:?}"),
    );
}
