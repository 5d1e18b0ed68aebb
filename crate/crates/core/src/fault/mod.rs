//! Fault injection, the failure oracle and injection campaigns.
//!
//! Faults perturb one kinematic variable of one arm over a window given as
//! fractions of the trajectory. The oracle then decides, from the faulted
//! and reference kinematics alone, whether the block was dropped during the
//! carry or failed to leave the grasper at the receptacle.

mod campaign;
mod dtw;
mod label;
mod oracle;

use serde::{Deserialize, Serialize};

pub use campaign::{
    run_campaign, CampaignCell, CampaignConfig, CampaignResult, CellResult, RunRecord, WindowAnchor,
};
pub use dtw::{dtw_distance, dtw_scalar};
pub use label::label_erroneous_gestures;
pub use oracle::{calibrate_dtw_threshold, failure_oracle, OracleParams};

use crate::error::{Error, Result};
use crate::kinematics::{Arm, GestureId, Trajectory};

/// Default grasper ramp in radians per sample at [`RAMP_REFERENCE_HZ`].
pub const DEFAULT_RAMP: f64 = 0.005;

/// Sample rate at which campaign ramps are specified.
pub const RAMP_REFERENCE_HZ: f64 = 100.0;

/// Converts a ramp given per sample at [`RAMP_REFERENCE_HZ`] to the same
/// angular rate per sample of `traj`.
pub fn ramp_for(traj: &Trajectory, ramp: f64) -> f64 {
    ramp * RAMP_REFERENCE_HZ / traj.sample_rate_hz
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultVariable {
    GrasperAngle,
    CartesianPosition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub variable: FaultVariable,
    pub start_fraction: f64,
    pub duration: f64,
    /// Target angle in radians, or Euclidean deviation in length units.
    pub target: f64,
    /// Radians per sample; ignored for Cartesian faults.
    pub ramp: f64,
    pub arm: Arm,
}

impl FaultSpec {
    pub fn grasper(start_fraction: f64, duration: f64, target: f64, ramp: f64, arm: Arm) -> Self {
        FaultSpec {
            variable: FaultVariable::GrasperAngle,
            start_fraction,
            duration,
            target,
            ramp,
            arm,
        }
    }

    pub fn cartesian(start_fraction: f64, duration: f64, deviation: f64, arm: Arm) -> Self {
        FaultSpec {
            variable: FaultVariable::CartesianPosition,
            start_fraction,
            duration,
            target: deviation,
            ramp: 0.0,
            arm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.start_fraction, self.duration, self.target, self.ramp]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Injection("fault parameters must be finite".into()));
        }
        if self.start_fraction < 0.0 || self.duration < 0.0 || self.start_fraction + self.duration > 1.0 + 1e-12 {
            return Err(Error::Injection(format!(
                "window [{}, {}+{}] lies outside the trajectory",
                self.start_fraction, self.start_fraction, self.duration
            )));
        }
        match self.variable {
            FaultVariable::GrasperAngle if self.ramp <= 0.0 => {
                Err(Error::Injection(format!("grasper ramp must be positive, got {}", self.ramp)))
            }
            FaultVariable::CartesianPosition if self.target < 0.0 => {
                Err(Error::Injection(format!("Cartesian deviation must be non-negative, got {}", self.target)))
            }
            _ => Ok(()),
        }
    }

    /// Sample range `[start, end)` covered by the fault in a trajectory of
    /// `n` samples.
    pub fn window(&self, n: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let start = (self.start_fraction * n as f64).floor() as usize;
        let end = (((self.start_fraction + self.duration) * n as f64).floor() as usize).min(n);
        if start >= n && self.duration > 0.0 {
            return Err(Error::Injection(format!("window starts at sample {start} of {n}")));
        }
        Ok((start.min(n), end.max(start.min(n))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    BlockDrop,
    DropoffFailure,
}

impl FailureKind {
    pub fn code(self) -> &'static str {
        match self {
            FailureKind::BlockDrop => "block_drop",
            FailureKind::DropoffFailure => "dropoff_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub kind: FailureKind,
    pub timestamp_ms: f64,
    pub sample_index: usize,
    pub gesture: GestureId,
}

/// Ramps the grasper angle toward the target by `ramp` per sample and holds
/// it there until the window closes.
pub fn inject_grasper_fault(traj: &Trajectory, spec: &FaultSpec) -> Result<Trajectory> {
    if spec.variable != FaultVariable::GrasperAngle {
        return Err(Error::Injection("expected a grasper-angle fault".into()));
    }
    let (start, end) = spec.window(traj.len())?;
    let mut out = traj.clone();
    if start == end {
        return Ok(out);
    }
    let s = traj.samples[start].arm(spec.arm).grasper_angle;
    let gap = spec.target - s;
    for (k, sample) in out.samples[start..end].iter_mut().enumerate() {
        let step = spec.ramp * (k + 1) as f64;
        // the tolerance absorbs accumulated rounding so the target is hit on
        // the nominal sample and then held exactly
        let value = if step >= gap.abs() - 1e-12 {
            spec.target
        } else {
            s + gap.signum() * step
        };
        sample.arm_mut(spec.arm).grasper_angle = value;
    }
    Ok(out)
}

/// Adds a linear ramp to x, y and z reaching `δ/√3` per axis on the last
/// sample of the window.
pub fn inject_cartesian_fault(traj: &Trajectory, spec: &FaultSpec) -> Result<Trajectory> {
    if spec.variable != FaultVariable::CartesianPosition {
        return Err(Error::Injection("expected a Cartesian fault".into()));
    }
    let (start, end) = spec.window(traj.len())?;
    let mut out = traj.clone();
    let len = end - start;
    if len == 0 || spec.target == 0.0 {
        return Ok(out);
    }
    let per_axis = spec.target / 3f64.sqrt();
    for (k, sample) in out.samples[start..end].iter_mut().enumerate() {
        let offset = per_axis * (k + 1) as f64 / len as f64;
        for p in &mut sample.arm_mut(spec.arm).position {
            *p += offset;
        }
    }
    Ok(out)
}

/// Dispatches on the fault variable.
pub fn inject(traj: &Trajectory, spec: &FaultSpec) -> Result<Trajectory> {
    match spec.variable {
        FaultVariable::GrasperAngle => inject_grasper_fault(traj, spec),
        FaultVariable::CartesianPosition => inject_cartesian_fault(traj, spec),
    }
}
