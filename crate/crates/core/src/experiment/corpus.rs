use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::{failure_oracle, inject, label_erroneous_gestures, FailureEvent, FaultSpec, OracleParams};
use crate::kinematics::{Arm, GestureId, Trajectory};
use crate::seed;

/// A grasper fault placed relative to a gesture of the demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultTemplate {
    pub name: String,
    /// Gesture whose segment hosts the injection start.
    pub gesture: GestureId,
    /// Start position inside that segment, as a fraction of its length.
    pub offset: [f64; 2],
    /// Target grasper angle range.
    pub target: [f64; 2],
    /// Number of consecutive segments the window covers, starting with the
    /// host; `None` runs to the end of the demonstration.
    pub segments: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultMix {
    /// Share of demonstrations that receive a fault.
    pub fraction: f64,
    /// Grasper ramp per sample (rad).
    pub ramp: f64,
    pub arm: Arm,
    pub templates: Vec<FaultTemplate>,
    pub oracle: OracleParams,
}

impl Default for FaultMix {
    fn default() -> Self {
        FaultMix {
            fraction: 0.5,
            ramp: 0.05,
            arm: Arm::Left,
            templates: vec![
                FaultTemplate {
                    name: "grasp".into(),
                    gesture: GestureId(2),
                    offset: [0.45, 0.65],
                    target: [1.15, 1.25],
                    segments: Some(2),
                },
                FaultTemplate {
                    name: "carry".into(),
                    gesture: GestureId(6),
                    offset: [0.0, 0.3],
                    target: [1.15, 1.25],
                    segments: Some(1),
                },
                FaultTemplate {
                    name: "release".into(),
                    gesture: GestureId(11),
                    offset: [0.05, 0.12],
                    target: [0.6, 0.7],
                    segments: None,
                },
            ],
            oracle: OracleParams::default(),
        }
    }
}

/// What was injected into one demonstration and what the oracle saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub demo: String,
    pub template: String,
    pub spec: FaultSpec,
    pub events: Vec<FailureEvent>,
}

/// Resolves a template to a concrete fault for `traj`.
pub fn place_fault(traj: &Trajectory, t: &FaultTemplate, mix: &FaultMix, rng: &mut ChaCha8Rng) -> Result<FaultSpec> {
    let host = traj
        .segments
        .iter()
        .position(|s| s.gesture == t.gesture)
        .ok_or_else(|| Error::Injection(format!("demonstration '{}' has no {}", traj.meta.name, t.gesture)))?;
    let seg = &traj.segments[host];
    let n = traj.len() as f64;
    let u = rng.random_range(t.offset[0]..=t.offset[1]);
    let start = seg.start + ((seg.len() - 1) as f64 * u).round() as usize;
    let end = match t.segments {
        Some(k) if k >= 1 => traj.segments[(host + k - 1).min(traj.segments.len() - 1)].end + 1,
        Some(_) => return Err(Error::Config(format!("template '{}' covers no segment", t.name))),
        None => traj.len(),
    };
    // half-sample offsets keep floor(fraction · n) on the intended indices
    let start_fraction = (start as f64 + 0.5) / n;
    let duration = (end - start) as f64 / n;
    let target = rng.random_range(t.target[0]..=t.target[1]);
    let spec = FaultSpec::grasper(start_fraction, duration.min(1.0 - start_fraction), target, mix.ramp, mix.arm);
    spec.validate()?;
    Ok(spec)
}

/// Injects faults into a share of `corpus` and labels the erroneous
/// gestures with the failure oracle. Faulted demonstrations are picked by a
/// seeded shuffle; templates are used in turn.
pub fn build_faulted_corpus(
    corpus: &[Trajectory],
    mix: &FaultMix,
    root_seed: u64,
) -> Result<(Vec<Trajectory>, Vec<InjectionRecord>)> {
    if !(0.0..=1.0).contains(&mix.fraction) {
        return Err(Error::Config(format!("fault fraction {} outside [0, 1]", mix.fraction)));
    }
    if mix.templates.is_empty() && mix.fraction > 0.0 {
        return Err(Error::Config("fault mix has no templates".into()));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(root_seed, "fault-pick")));
    let n_faulted = (mix.fraction * corpus.len() as f64).round() as usize;
    let mut out = corpus.to_vec();
    let mut records = Vec::new();
    let mut picked: Vec<usize> = order[..n_faulted].to_vec();
    picked.sort_unstable();
    for (k, &i) in picked.iter().enumerate() {
        let template = &mix.templates[k % mix.templates.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(root_seed, "fault", i as u64));
        let reference = &corpus[i];
        let spec = place_fault(reference, template, mix, &mut rng)?;
        let faulted = inject(reference, &spec)?;
        let oracle = OracleParams {
            arm: mix.arm,
            ..mix.oracle.clone()
        };
        let events = failure_oracle(&faulted, reference, &oracle)?;
        out[i] = label_erroneous_gestures(&faulted, std::slice::from_ref(&spec), &events)?;
        records.push(InjectionRecord {
            demo: reference.meta.name.clone(),
            template: template.name.clone(),
            spec,
            events,
        });
    }
    Ok((out, records))
}
