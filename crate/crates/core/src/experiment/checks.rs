use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::classify::build_gesture_model;
use crate::error::Result;
use crate::nn::{gradient_check, make_batch, Example, GradCheckOptions, GradCheckReport, Model, Targets};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchCheck {
    pub name: String,
    pub report: GradCheckReport,
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn check(name: &str, model: &Model, examples: &[Example], channels: usize, seed: u64) -> Result<ArchCheck> {
    let refs: Vec<&Example> = examples.iter().collect();
    let batch = make_batch(&refs, channels)?;
    let opts = GradCheckOptions {
        seed,
        ..Default::default()
    };
    Ok(ArchCheck {
        name: name.to_string(),
        report: gradient_check(model, &batch, &opts)?,
    })
}

/// Central-difference checks of every architecture a run trains: the
/// stage-1 recurrent stack, the per-gesture detector and the baseline.
pub fn gradcheck_suite(cfg: &ExperimentConfig) -> Result<Vec<ArchCheck>> {
    let root = cfg.stage_seed("gradcheck");
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    let mut out = Vec::new();

    let g = &cfg.gesture.model;
    let gesture = build_gesture_model(g, seed::derive(root, "gesture"))?;
    let c = g.subset.dim();
    let steps = 6;
    let examples: Vec<Example> = (0..3)
        .map(|_| Example {
            input: normal(&mut rng, steps * c),
            steps,
            targets: Targets::Classes((0..steps).map(|_| Some(rng.random_range(0..g.classes))).collect()),
        })
        .collect();
    // windowed stage-1 models emit one label per window
    let examples: Vec<Example> = match g.input {
        crate::classify::GestureInput::Stateful => examples,
        crate::classify::GestureInput::Windowed { .. } => examples
            .into_iter()
            .map(|e| Example {
                targets: Targets::Classes(vec![Some(rng.random_range(0..g.classes))]),
                ..e
            })
            .collect(),
    };
    out.push(check("gesture", &gesture, &examples, c, seed::derive(root, "gesture-drop"))?);

    let d = &cfg.detector.detector;
    let c = d.subset.dim();
    let w = d.window.length;
    for name in ["detector", "baseline"] {
        let model = Model::new(d.model_config(seed::derive(root, name)))?;
        let examples: Vec<Example> = (0..4)
            .map(|i| Example {
                input: normal(&mut rng, w * c),
                steps: w,
                targets: Targets::Binary(vec![Some(if i % 2 == 0 { 1.0 } else { 0.0 })]),
            })
            .collect();
        out.push(check(name, &model, &examples, c, seed::derive(root, &format!("{name}-drop")))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_architectures_pass() {
        let checks = gradcheck_suite(&ExperimentConfig::default()).unwrap();
        assert_eq!(checks.len(), 3);
        for c in &checks {
            assert!(c.report.checked > 0, "{}", c.name);
            assert!(c.report.max_rel_error <= 1e-4, "{}: {:?}", c.name, c.report);
        }
    }
}
