//! Kinematics data model: samples, trajectories, gesture segments, sliding
//! windows and feature subsets.
//!
//! Every sample carries 19 scalar features per manipulator (38 in total). The
//! flat feature order is fixed: left arm first, then right arm, and within an
//! arm position (3), rotation row-major (9), grasper angle (1), linear
//! velocity (3), angular velocity (3).

mod features;
mod io;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{feature_matrix, select_features, windows, zscore_normalize, NormStats, Window};
pub use io::{load_trajectory, save_trajectory, InputFormat, LoadOptions};

/// Scalar features per manipulator.
pub const ARM_FEATURES: usize = 19;
/// Scalar features per sample (both manipulators).
pub const NUM_FEATURES: usize = 2 * ARM_FEATURES;

/// Offsets of each feature family inside one arm block.
pub mod offset {
    pub const POSITION: usize = 0;
    pub const ROTATION: usize = 3;
    pub const GRASPER: usize = 12;
    pub const LINEAR_VELOCITY: usize = 13;
    pub const ANGULAR_VELOCITY: usize = 16;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Left,
    Right,
}

impl Arm {
    /// Index of the first feature of this arm in the flat 38-vector.
    pub fn base(self) -> usize {
        match self {
            Arm::Left => 0,
            Arm::Right => ARM_FEATURES,
        }
    }
}

/// Gesture identifier, the `k` of `Gk`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GestureId(pub u8);

impl GestureId {
    /// Zero-based class index used by the classifiers (`G1` → 0).
    pub fn class_index(self) -> usize {
        usize::from(self.0).saturating_sub(1)
    }

    pub fn from_class_index(index: usize) -> Self {
        GestureId((index + 1) as u8)
    }
}

impl fmt::Display for GestureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G{}", self.0)
    }
}

impl std::str::FromStr for GestureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s
            .trim()
            .strip_prefix('G')
            .ok_or_else(|| Error::Structure(format!("gesture label {s:?} does not start with 'G'")))?;
        digits
            .parse::<u8>()
            .map(GestureId)
            .map_err(|_| Error::Structure(format!("invalid gesture label {s:?}")))
    }
}

/// State of one manipulator at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmState {
    pub position: [f64; 3],
    pub rotation: [[f64; 3]; 3],
    pub grasper_angle: f64,
    pub linear_velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
}

impl ArmState {
    pub fn write_features(&self, out: &mut [f64]) {
        out[0..3].copy_from_slice(&self.position);
        for (r, row) in self.rotation.iter().enumerate() {
            out[3 + 3 * r..6 + 3 * r].copy_from_slice(row);
        }
        out[offset::GRASPER] = self.grasper_angle;
        out[13..16].copy_from_slice(&self.linear_velocity);
        out[16..19].copy_from_slice(&self.angular_velocity);
    }

    pub fn from_features(f: &[f64]) -> Self {
        let mut s = ArmState::default();
        s.position.copy_from_slice(&f[0..3]);
        for r in 0..3 {
            s.rotation[r].copy_from_slice(&f[3 + 3 * r..6 + 3 * r]);
        }
        s.grasper_angle = f[offset::GRASPER];
        s.linear_velocity.copy_from_slice(&f[13..16]);
        s.angular_velocity.copy_from_slice(&f[16..19]);
        s
    }
}

/// One timestamped robot state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KinematicsSample {
    /// Milliseconds since trajectory start.
    pub timestamp_ms: f64,
    pub left: ArmState,
    pub right: ArmState,
}

impl KinematicsSample {
    pub fn arm(&self, arm: Arm) -> &ArmState {
        match arm {
            Arm::Left => &self.left,
            Arm::Right => &self.right,
        }
    }

    pub fn arm_mut(&mut self, arm: Arm) -> &mut ArmState {
        match arm {
            Arm::Left => &mut self.left,
            Arm::Right => &mut self.right,
        }
    }

    pub fn features(&self) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        self.left.write_features(&mut out[..ARM_FEATURES]);
        self.right.write_features(&mut out[ARM_FEATURES..]);
        out
    }

    pub fn from_features(timestamp_ms: f64, f: &[f64]) -> Self {
        KinematicsSample {
            timestamp_ms,
            left: ArmState::from_features(&f[..ARM_FEATURES]),
            right: ArmState::from_features(&f[ARM_FEATURES..NUM_FEATURES]),
        }
    }
}

/// A labelled span of samples, both ends inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureSegment {
    pub gesture: GestureId,
    pub start: usize,
    pub end: usize,
    #[serde(rename = "unsafe")]
    pub unsafe_: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub error_codes: Vec<String>,
}

impl GestureSegment {
    pub fn new(gesture: GestureId, start: usize, end: usize) -> Self {
        GestureSegment {
            gesture,
            start,
            end,
            unsafe_: false,
            error_codes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.start..=self.end).contains(&index)
    }

    pub fn overlaps(&self, lo: usize, hi: usize) -> bool {
        self.start <= hi && lo <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Jigsaws,
    #[default]
    Synthetic,
}

/// Bookkeeping that travels with a trajectory but is not kinematics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub name: String,
    /// Cross-validation group (super-trial or operator group).
    pub group: Option<String>,
    /// Ground-truth error onset when known (fault injection start).
    pub fault_onset_ms: Option<f64>,
}

/// A demonstration: samples plus gesture annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<KinematicsSample>,
    pub sample_rate_hz: f64,
    pub segments: Vec<GestureSegment>,
    pub source: Source,
    pub length_unit: String,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_period_ms(&self) -> f64 {
        1000.0 / self.sample_rate_hz
    }

    /// Timestamp for sample `index` derived from the sample rate.
    pub fn nominal_timestamp(sample_rate_hz: f64, index: usize) -> f64 {
        index as f64 * 1000.0 / sample_rate_hz
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.timestamp_ms)
    }

    /// Segment that contains sample `index`, if any.
    pub fn segment_at(&self, index: usize) -> Option<&GestureSegment> {
        // segments are ordered, so a binary search on start works
        let pos = self.segments.partition_point(|s| s.start <= index);
        pos.checked_sub(1)
            .map(|p| &self.segments[p])
            .filter(|s| s.contains(index))
    }

    /// Per-sample gesture labels (`None` where unannotated).
    pub fn gesture_labels(&self) -> Vec<Option<GestureId>> {
        let mut labels = vec![None; self.len()];
        for seg in &self.segments {
            for l in &mut labels[seg.start..=seg.end.min(self.len().saturating_sub(1))] {
                *l = Some(seg.gesture);
            }
        }
        labels
    }

    /// Gesture sequence in segment order.
    pub fn gesture_sequence(&self) -> Vec<GestureId> {
        self.segments.iter().map(|s| s.gesture).collect()
    }

    /// Index of the first sample whose timestamp is at or after `t_ms`.
    pub fn index_at_ms(&self, t_ms: f64) -> usize {
        self.samples.partition_point(|s| s.timestamp_ms < t_ms)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Structure(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        for (i, pair) in self.samples.windows(2).enumerate() {
            if pair[1].timestamp_ms <= pair[0].timestamp_ms {
                return Err(Error::Structure(format!(
                    "timestamps not strictly increasing at sample {}",
                    i + 1
                )));
            }
        }
        let mut next_free = 0usize;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.start > seg.end {
                return Err(Error::Structure(format!("segment {i} has start after end")));
            }
            if i > 0 && seg.start < next_free {
                return Err(Error::Structure(format!(
                    "segment {i} overlaps or precedes its predecessor"
                )));
            }
            if seg.end >= self.len() {
                return Err(Error::Structure(format!(
                    "segment {i} ends at {} beyond the last sample {}",
                    seg.end,
                    self.len().saturating_sub(1)
                )));
            }
            next_free = seg.end + 1;
        }
        Ok(())
    }
}

/// Sliding window length and stride, both in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlidingWindowSpec {
    pub length: usize,
    pub stride: usize,
}

impl SlidingWindowSpec {
    pub fn new(length: usize, stride: usize) -> Result<Self> {
        let spec = SlidingWindowSpec { length, stride };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "window length and stride must be >= 1 (got w={}, s={})",
                self.length, self.stride
            )));
        }
        Ok(())
    }

    /// Number of windows over `t` samples.
    pub fn count(&self, t: usize) -> usize {
        if t < self.length {
            0
        } else {
            (t - self.length) / self.stride + 1
        }
    }
}

/// A projection of the 38 kinematics features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSubset {
    /// All 38 features.
    All,
    /// Cartesian position, rotation and grasper angle (26).
    Crg,
    /// Cartesian position and grasper angle (8).
    Cg,
    Custom(Vec<usize>),
}

impl FeatureSubset {
    pub fn indices(&self) -> Vec<usize> {
        let per_arm: Vec<usize> = match self {
            FeatureSubset::All => (0..ARM_FEATURES).collect(),
            FeatureSubset::Crg => (0..=offset::GRASPER).collect(),
            FeatureSubset::Cg => vec![0, 1, 2, offset::GRASPER],
            FeatureSubset::Custom(idx) => return idx.clone(),
        };
        let mut out = per_arm.clone();
        out.extend(per_arm.iter().map(|i| i + ARM_FEATURES));
        out
    }

    pub fn dim(&self) -> usize {
        self.indices().len()
    }

    pub fn validate(&self) -> Result<()> {
        if let FeatureSubset::Custom(idx) = self {
            if idx.is_empty() {
                return Err(Error::Config("custom feature subset is empty".into()));
            }
            let mut seen = [false; NUM_FEATURES];
            for &i in idx {
                if i >= NUM_FEATURES {
                    return Err(Error::Config(format!(
                        "feature index {i} outside [0, {NUM_FEATURES})"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Config(format!("feature index {i} listed twice")));
                }
            }
        }
        Ok(())
    }

    /// Rotation-only subset (both arms).
    pub fn rotation_only() -> Self {
        let mut idx: Vec<usize> = (offset::ROTATION..offset::GRASPER).collect();
        idx.extend((offset::ROTATION..offset::GRASPER).map(|i| i + ARM_FEATURES));
        FeatureSubset::Custom(idx)
    }
}
