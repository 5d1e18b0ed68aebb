//! Small end-to-end runs through the public API.

use gesturewatch::classify::DetectorLibrary;
use gesturewatch::experiment::{load_corpus, save_corpus, train_library, DataConfig, ExperimentConfig};
use gesturewatch::kinematics::Trajectory;
use gesturewatch::monitor::{run_monitor, run_monitor_batch, MonitorConfig, MonitorRun, RoutingMode};

const TINY: &str = "\
[simulate]
demos = 6
groups = 2

[gesture.train]
max_epochs = 2

[detector.train]
max_epochs = 2
";

fn setup() -> (Vec<Trajectory>, DetectorLibrary, Vec<usize>) {
    let cfg = ExperimentConfig::from_toml(TINY).unwrap();
    let (corpus, _) = cfg.experiment_corpus().unwrap();
    let (library, fold) = train_library(&corpus, &cfg, Some("S1")).unwrap();
    (corpus, library, fold.test)
}

fn outputs(run: &MonitorRun) -> String {
    format!("{:?} {:?} {:?} {:?}", run.scores, run.predicted, run.routed, run.alerts)
}

#[test]
fn held_out_fold_is_the_named_group() {
    let (corpus, _, test) = setup();
    assert!(!test.is_empty());
    assert!(test.iter().all(|&i| corpus[i].meta.group.as_deref() == Some("S1")));
}

#[test]
fn streaming_matches_batch_scoring_in_every_mode() {
    let (corpus, library, test) = setup();
    for mode in [RoutingMode::Predicted, RoutingMode::GroundTruth, RoutingMode::Baseline] {
        let config = MonitorConfig {
            mode,
            ..MonitorConfig::default()
        };
        for &i in &test {
            let streamed = run_monitor(&library, &corpus[i], &config).unwrap();
            let batch = run_monitor_batch(&library, &corpus[i], &config).unwrap();
            assert_eq!(outputs(&streamed), outputs(&batch), "{mode:?} on {}", corpus[i].meta.name);
            assert_eq!(streamed.latency_ms.len(), corpus[i].len());
        }
    }
}

#[test]
fn saved_library_scores_identically() {
    let (corpus, library, test) = setup();
    let dir = tempfile::tempdir().unwrap();
    library.save(dir.path()).unwrap();
    let loaded = DetectorLibrary::load(dir.path()).unwrap();
    assert_eq!(loaded.routing_table(), library.routing_table());
    let config = MonitorConfig::default();
    let traj = &corpus[test[0]];
    assert_eq!(
        outputs(&run_monitor(&library, traj, &config).unwrap()),
        outputs(&run_monitor(&loaded, traj, &config).unwrap())
    );
}

#[test]
fn corpus_survives_a_csv_round_trip() {
    let cfg = ExperimentConfig::from_toml(TINY).unwrap();
    let (corpus, _) = cfg.experiment_corpus().unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_corpus(dir.path(), &corpus).unwrap();
    let loaded = load_corpus(&DataConfig {
        path: Some(dir.path().to_string_lossy().into_owned()),
        ..DataConfig::default()
    })
    .unwrap();
    assert_eq!(loaded.len(), corpus.len());
    for (a, b) in corpus.iter().zip(&loaded) {
        assert_eq!(a.meta.name, b.meta.name);
        assert_eq!(a.segments, b.segments);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.features(), y.features());
        }
    }
}
