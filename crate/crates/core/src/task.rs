//! Gesture vocabularies, the gesture-specific error rubric and Markov-chain
//! models of surgical tasks.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::GestureId;

/// Default classifier output width (`G1`..`G15`).
pub const DEFAULT_OUTPUT_CLASSES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Suturing,
    BlockTransfer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureVocabulary {
    pub ids: Vec<GestureId>,
    /// Width of the one-hot classifier encoding.
    pub output_classes: usize,
}

impl GestureVocabulary {
    pub fn new(ids: Vec<GestureId>) -> Self {
        GestureVocabulary {
            ids,
            output_classes: DEFAULT_OUTPUT_CLASSES,
        }
    }

    /// G1..G11 without G7.
    pub fn suturing() -> Self {
        Self::new((1..=11).filter(|&g| g != 7).map(GestureId).collect())
    }

    /// Block Transfer gestures in execution order.
    pub fn block_transfer() -> Self {
        Self::new(BLOCK_TRANSFER_ORDER.to_vec())
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Suturing => Self::suturing(),
            Task::BlockTransfer => Self::block_transfer(),
        }
    }

    pub fn contains(&self, g: GestureId) -> bool {
        self.ids.contains(&g)
    }

    pub fn position(&self, g: GestureId) -> Option<usize> {
        self.ids.iter().position(|&x| x == g)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Reach, grasp, move to center, carry, drop.
pub const BLOCK_TRANSFER_ORDER: [GestureId; 5] = [
    GestureId(12),
    GestureId(2),
    GestureId(5),
    GestureId(6),
    GestureId(11),
];

/// Kinematic variable whose corruption can cause a gesture error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultCause {
    RotationAngles,
    CartesianPosition,
    HighGrasperAngle,
    LowGrasperAngle,
    LowPressure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorRubricEntry {
    pub gesture: GestureId,
    pub description: &'static str,
    pub errors: Vec<&'static str>,
    pub causes: Vec<FaultCause>,
}

/// Gesture-specific error rubric for Suturing and Block Transfer.
pub fn error_rubric() -> Vec<ErrorRubricEntry> {
    use FaultCause::*;
    let e = |g: u8, description, errors: &[&'static str], causes: &[FaultCause]| ErrorRubricEntry {
        gesture: GestureId(g),
        description,
        errors: errors.to_vec(),
        causes: causes.to_vec(),
    };
    vec![
        e(1, "Reaching for needle with right hand", &["More than one attempt to reach"], &[RotationAngles]),
        e(2, "Positioning needle", &["More than one attempt to position"], &[RotationAngles]),
        e(
            3,
            "Pushing needle through the tissue",
            &["Driving with more than one movement", "Not removing the needle along its curve"],
            &[CartesianPosition],
        ),
        e(
            4,
            "Transferring needle from left to right",
            &["Unintentional needle drop", "Needle not in view at all times"],
            &[CartesianPosition],
        ),
        e(5, "Moving to center with needle in grip", &["Unintentional needle drop"], &[HighGrasperAngle]),
        e(
            6,
            "Pulling suture with left hand",
            &["Needle not in view at all times", "Unintentional needle drop"],
            &[CartesianPosition],
        ),
        e(
            8,
            "Orienting needle",
            &["Uses tissue or instrument for stability", "More than one attempt at orienting"],
            &[RotationAngles],
        ),
        e(9, "Using right hand to help tighten suture", &["Knot left loose"], &[LowPressure]),
        e(10, "Loosening more suture", &[], &[]),
        e(11, "Dropping suture and moving to end points", &["Failure to drop off"], &[LowGrasperAngle]),
        e(12, "Reaching for needle with left hand", &["More than one attempt to reach"], &[CartesianPosition]),
    ]
}

pub fn rubric_entry(g: GestureId) -> Option<ErrorRubricEntry> {
    error_rubric().into_iter().find(|e| e.gesture == g)
}

/// Finite-state Markov chain over gestures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub states: Vec<GestureId>,
    pub initial: Vec<f64>,
    /// Row-stochastic; `transitions[i][j]` is P(states[j] | states[i]).
    pub transitions: Vec<Vec<f64>>,
}

const STOCHASTIC_TOL: f64 = 1e-9;

impl MarkovChain {
    pub fn validate(&self) -> Result<()> {
        let n = self.states.len();
        if n == 0 {
            return Err(Error::Config("Markov chain has no states".into()));
        }
        let check_row = |row: &[f64], what: &str| -> Result<()> {
            if row.len() != n {
                return Err(Error::Shape(format!("{what} has {} entries for {n} states", row.len())));
            }
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::Config(format!("{what} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Config(format!("{what} sums to {sum}")));
            }
            Ok(())
        };
        check_row(&self.initial, "initial distribution")?;
        if self.transitions.len() != n {
            return Err(Error::Shape("transition matrix is not square".into()));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            check_row(row, &format!("transition row {}", self.states[i]))?;
        }
        Ok(())
    }

    /// Chain that walks `order` with probability 1 and absorbs in the last state.
    pub fn deterministic(order: &[GestureId]) -> Self {
        let n = order.len();
        let mut transitions = vec![vec![0.0; n]; n];
        for i in 0..n {
            transitions[i][(i + 1).min(n - 1)] = 1.0;
        }
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        MarkovChain {
            states: order.to_vec(),
            initial,
            transitions,
        }
    }

    pub fn block_transfer() -> Self {
        Self::deterministic(&BLOCK_TRANSFER_ORDER)
    }

    /// Reference Suturing chain. Only the G4→G10 (0.13) and G6→G10 (0.01)
    /// probabilities are measured values; the rest is a plausible flow.
    pub fn suturing_reference() -> Self {
        let states: Vec<GestureId> = GestureVocabulary::suturing().ids;
        let idx = |g: u8| states.iter().position(|s| s.0 == g).expect("suturing state");
        let n = states.len();
        let mut t = vec![vec![0.0; n]; n];
        let mut set = |from: u8, to: &[(u8, f64)]| {
            for &(g, p) in to {
                t[idx(from)][idx(g)] = p;
            }
        };
        set(1, &[(5, 0.6), (2, 0.3), (8, 0.1)]);
        set(2, &[(3, 0.95), (8, 0.05)]);
        set(3, &[(6, 0.9), (2, 0.1)]);
        set(4, &[(2, 0.65), (8, 0.15), (10, 0.13), (11, 0.07)]);
        set(5, &[(8, 0.5), (2, 0.5)]);
        set(6, &[(4, 0.75), (9, 0.1), (11, 0.14), (10, 0.01)]);
        set(8, &[(2, 0.9), (3, 0.1)]);
        set(9, &[(4, 0.5), (11, 0.3), (6, 0.2)]);
        set(10, &[(4, 0.4), (2, 0.3), (11, 0.3)]);
        set(11, &[(11, 1.0)]);
        let mut initial = vec![0.0; n];
        initial[idx(1)] = 0.8;
        initial[idx(5)] = 0.2;
        MarkovChain {
            states,
            initial,
            transitions: t,
        }
    }

    pub fn index_of(&self, g: GestureId) -> Option<usize> {
        self.states.iter().position(|&s| s == g)
    }

    pub fn probability(&self, from: GestureId, to: GestureId) -> Option<f64> {
        Some(self.transitions[self.index_of(from)?][self.index_of(to)?])
    }

    pub fn is_terminal(&self, i: usize) -> bool {
        self.transitions[i][i] >= 1.0
    }

    /// Structured text form: `states`, `initial` and one `row` line per state.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# gesture markov chain\nstates");
        for s in &self.states {
            let _ = write!(out, " {s}");
        }
        out.push_str("\ninitial");
        for p in &self.initial {
            let _ = write!(out, " {p}");
        }
        out.push('\n');
        for (s, row) in self.states.iter().zip(&self.transitions) {
            let _ = write!(out, "row {s}");
            for p in row {
                let _ = write!(out, " {p}");
            }
            out.push('\n');
        }
        out
    }
}

impl FromStr for MarkovChain {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut states = None;
        let mut initial = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let floats = |parts: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>> {
                parts
                    .map(|p| {
                        p.parse::<f64>().map_err(|_| Error::Parse {
                            line: i + 1,
                            message: format!("bad probability {p:?}"),
                        })
                    })
                    .collect()
            };
            match parts.next() {
                Some("states") => states = Some(parts.map(str::parse).collect::<Result<Vec<GestureId>>>()?),
                Some("initial") => initial = Some(floats(parts)?),
                Some("row") => {
                    parts.next();
                    rows.push(floats(parts)?);
                }
                Some(other) => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("unknown record {other:?}"),
                    })
                }
                None => {}
            }
        }
        let chain = MarkovChain {
            states: states.ok_or_else(|| Error::Structure("missing states line".into()))?,
            initial: initial.ok_or_else(|| Error::Structure("missing initial line".into()))?,
            transitions: rows,
        };
        chain.validate()?;
        Ok(chain)
    }
}

/// Maximum-likelihood chain with additive smoothing `alpha` over `vocab`.
///
/// States with no outgoing observations become absorbing when `alpha == 0`.
pub fn estimate_markov(vocab: &GestureVocabulary, sequences: &[Vec<GestureId>], alpha: f64) -> Result<MarkovChain> {
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::Estimation("no gesture sequences to estimate from".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("smoothing constant must be >= 0, got {alpha}")));
    }
    let n = vocab.len();
    let index = |g: GestureId| {
        vocab
            .position(g)
            .ok_or_else(|| Error::Estimation(format!("gesture {g} is not in the vocabulary")))
    };
    let mut counts = vec![vec![0.0; n]; n];
    let mut first = vec![0.0; n];
    for seq in sequences.iter().filter(|s| !s.is_empty()) {
        first[index(seq[0])?] += 1.0;
        for pair in seq.windows(2) {
            counts[index(pair[0])?][index(pair[1])?] += 1.0;
        }
        // a lone trailing state still has to be known
        index(*seq.last().expect("non-empty"))?;
    }
    let normalise = |row: &[f64], fallback: usize| -> Vec<f64> {
        let total: f64 = row.iter().sum::<f64>() + alpha * n as f64;
        if total == 0.0 {
            let mut r = vec![0.0; n];
            r[fallback] = 1.0;
            return r;
        }
        row.iter().map(|c| (c + alpha) / total).collect()
    };
    let transitions = counts.iter().enumerate().map(|(i, row)| normalise(row, i)).collect();
    let chain = MarkovChain {
        states: vocab.ids.clone(),
        initial: normalise(&first, 0),
        transitions,
    };
    chain.validate()?;
    Ok(chain)
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding slack: fall back to the last state with mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Samples a gesture sequence, stopping at an absorbing state or `max_len`.
pub fn sample_sequence(chain: &MarkovChain, seed: u64, max_len: usize) -> Vec<GestureId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    if max_len == 0 {
        return out;
    }
    let mut state = draw(&mut rng, &chain.initial);
    out.push(chain.states[state]);
    while out.len() < max_len && !chain.is_terminal(state) {
        state = draw(&mut rng, &chain.transitions[state]);
        out.push(chain.states[state]);
    }
    out
}
