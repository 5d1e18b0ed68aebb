//! Shared fixtures for the benchmarks: a small corpus and a detector
//! library trained on it for a couple of epochs, enough for realistic
//! model shapes without a long setup.

use gesturewatch::classify::DetectorLibrary;
use gesturewatch::experiment::{train_library, ExperimentConfig};
use gesturewatch::kinematics::Trajectory;

const CONFIG: &str = "\
[simulate]
demos = 6
groups = 2

[gesture.train]
max_epochs = 2

[detector.train]
max_epochs = 2
";

pub struct Fixture {
    pub corpus: Vec<Trajectory>,
    pub library: DetectorLibrary,
}

pub fn fixture() -> Fixture {
    let cfg = ExperimentConfig::from_toml(CONFIG).expect("bench config");
    let (corpus, _) = cfg.experiment_corpus().expect("bench corpus");
    let (library, _) = train_library(&corpus, &cfg, None).expect("bench library");
    Fixture { corpus, library }
}
