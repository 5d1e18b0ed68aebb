use log::warn;
use serde::{Deserialize, Serialize};

use super::dtw::dtw_distance;
use super::{FailureEvent, FailureKind};
use crate::error::{Error, Result};
use crate::kinematics::{Arm, GestureId, Trajectory};

const G5: GestureId = GestureId(5);
const G6: GestureId = GestureId(6);
const G11: GestureId = GestureId(11);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    pub arm: Arm,
    /// A held block slips once the jaws open past this angle (rad).
    pub drop_threshold: f64,
    /// The block only leaves the grasper above this angle (rad).
    pub release_threshold: f64,
    /// End-effector DTW deviation around the drop point above which the
    /// drop-off counts as failed. `None` disables the trace comparison.
    pub dtw_threshold: Option<f64>,
    /// Half-width of the comparison window around the drop point.
    pub dtw_half_window_ms: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            arm: Arm::Left,
            drop_threshold: 0.8,
            release_threshold: 1.0,
            dtw_threshold: None,
            dtw_half_window_ms: 500.0,
        }
    }
}

fn grasper(t: &Trajectory, arm: Arm, i: usize) -> f64 {
    t.samples[i].arm(arm).grasper_angle
}

/// Drop point of a fault-free trajectory: the first G11 sample where the
/// jaws pass the release angle, or the G11 onset if they never do.
fn drop_point(t: &Trajectory, p: &OracleParams) -> Option<usize> {
    let seg = t.segments.iter().find(|s| s.gesture == G11)?;
    Some(
        (seg.start..=seg.end)
            .find(|&i| grasper(t, p.arm, i) > p.release_threshold)
            .unwrap_or(seg.start),
    )
}

fn trace_around(t: &Trajectory, p: &OracleParams, centre: usize) -> Vec<[f64; 3]> {
    let half = (p.dtw_half_window_ms / t.sample_period_ms()).round() as usize;
    let lo = centre.saturating_sub(half);
    let hi = (centre + half).min(t.len() - 1);
    t.samples[lo..=hi].iter().map(|s| s.arm(p.arm).position).collect()
}

/// Decides which failures a faulted run produced.
///
/// The block is held wherever the reference grasper is closed below the
/// drop threshold during G5/G6. A drop-off failure is only reported when
/// the block made it to the receptacle.
pub fn failure_oracle(faulted: &Trajectory, reference: &Trajectory, p: &OracleParams) -> Result<Vec<FailureEvent>> {
    if faulted.segments.is_empty() {
        return Err(Error::Oracle(format!("trajectory '{}' has no gesture annotations", faulted.meta.name)));
    }
    if faulted.len() != reference.len() {
        return Err(Error::Oracle(format!(
            "faulted and reference lengths differ ({} vs {})",
            faulted.len(),
            reference.len()
        )));
    }
    let event = |kind, i: usize, gesture| FailureEvent {
        kind,
        timestamp_ms: faulted.samples[i].timestamp_ms,
        sample_index: i,
        gesture,
    };
    let mut events = Vec::new();
    let carry = faulted
        .segments
        .iter()
        .filter(|s| s.gesture == G5 || s.gesture == G6)
        .flat_map(|s| (s.start..=s.end).map(move |i| (i, s.gesture)));
    for (i, g) in carry {
        let held = grasper(reference, p.arm, i) < p.drop_threshold;
        if held && grasper(faulted, p.arm, i) > p.drop_threshold {
            events.push(event(FailureKind::BlockDrop, i, g));
            break;
        }
    }
    if !events.is_empty() {
        return Ok(events);
    }
    let Some(g11) = faulted.segments.iter().rev().find(|s| s.gesture == G11) else {
        return Ok(events);
    };
    let released = (g11.start..=g11.end).any(|i| grasper(faulted, p.arm, i) > p.release_threshold);
    let deviated = match (p.dtw_threshold, drop_point(reference, p)) {
        (Some(threshold), Some(centre)) => {
            let d = dtw_distance(&trace_around(faulted, p, centre), &trace_around(reference, p, centre))?;
            d > threshold
        }
        _ => false,
    };
    if !released || deviated {
        events.push(event(FailureKind::DropoffFailure, g11.end, G11));
    }
    Ok(events)
}

/// `factor` times the largest DTW deviation between drop-point traces of
/// distinct fault-free demonstrations. Returns `None` for fewer than two.
pub fn calibrate_dtw_threshold(corpus: &[Trajectory], p: &OracleParams, factor: f64) -> Result<Option<f64>> {
    let traces: Vec<Vec<[f64; 3]>> = corpus
        .iter()
        .filter_map(|t| drop_point(t, p).map(|c| trace_around(t, p, c)))
        .collect();
    if traces.len() < 2 {
        warn!("DTW threshold needs two annotated fault-free demonstrations; trace comparison disabled");
        return Ok(None);
    }
    let mut worst: f64 = 0.0;
    for i in 0..traces.len() {
        for j in i + 1..traces.len() {
            worst = worst.max(dtw_distance(&traces[i], &traces[j])?);
        }
    }
    Ok(Some(factor * worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::{inject_cartesian_fault, inject_grasper_fault, FaultSpec};
    use crate::sim::{generate_block_transfer, SimParams};

    fn demo(seed: u64) -> Trajectory {
        generate_block_transfer(&SimParams {
            seed,
            ..SimParams::default()
        })
        .unwrap()
    }

    fn fraction_of(t: &Trajectory, g: u8) -> (f64, f64) {
        let s = t.segments.iter().find(|s| s.gesture == GestureId(g)).unwrap();
        let n = t.len() as f64;
        (s.start as f64 / n, (s.end + 1) as f64 / n)
    }

    #[test]
    fn fault_free_produces_nothing() {
        let t = demo(1);
        let p = OracleParams {
            dtw_threshold: Some(1.0),
            ..OracleParams::default()
        };
        assert!(failure_oracle(&t, &t, &p).unwrap().is_empty());
    }

    #[test]
    fn high_grasper_during_carry_drops_the_block() {
        let t = demo(2);
        let (g5, _) = fraction_of(&t, 5);
        let spec = FaultSpec::grasper(g5, 0.3, 1.55, 0.005, Arm::Left);
        let f = inject_grasper_fault(&t, &spec).unwrap();
        let ev = failure_oracle(&f, &t, &OracleParams::default()).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, FailureKind::BlockDrop);
        assert!(ev[0].gesture == G5 || ev[0].gesture == G6);
        assert!(f.samples[ev[0].sample_index].left.grasper_angle > 0.8);
        assert!(f.samples[ev[0].sample_index - 1].left.grasper_angle <= 0.8);
    }

    #[test]
    fn low_grasper_through_g11_fails_the_dropoff() {
        let t = demo(3);
        let spec = FaultSpec::grasper(0.2, 0.8, 0.35, 0.005, Arm::Left);
        let f = inject_grasper_fault(&t, &spec).unwrap();
        let ev = failure_oracle(&f, &t, &OracleParams::default()).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, FailureKind::DropoffFailure);
        let g11 = t.segments.last().unwrap();
        assert_eq!(ev[0].sample_index, g11.end);
    }

    #[test]
    fn large_cartesian_deviation_at_drop_point_fails_the_dropoff() {
        let corpus: Vec<_> = (10..14).map(demo).collect();
        let threshold = calibrate_dtw_threshold(&corpus, &OracleParams::default(), 5.0).unwrap();
        let p = OracleParams {
            dtw_threshold: threshold,
            ..OracleParams::default()
        };
        let t = &corpus[0];
        let big = inject_cartesian_fault(t, &FaultSpec::cartesian(0.2, 0.8, 65_000.0, Arm::Left)).unwrap();
        let ev = failure_oracle(&big, t, &p).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, FailureKind::DropoffFailure);
        let small = inject_cartesian_fault(t, &FaultSpec::cartesian(0.2, 0.8, 3_000.0, Arm::Left)).unwrap();
        assert!(failure_oracle(&small, t, &p).unwrap().is_empty());
    }

    #[test]
    fn missing_annotations_is_an_error() {
        let mut t = demo(4);
        t.segments.clear();
        assert!(matches!(
            failure_oracle(&t, &t, &OracleParams::default()),
            Err(Error::Oracle(_))
        ));
    }

    #[test]
    fn block_drop_incidence_is_monotone_in_target() {
        for seed in 0..5 {
            let t = demo(seed);
            let mut dropped_before = false;
            for k in 0..=26 {
                let target = 0.3 + 0.05 * k as f64;
                let f = inject_grasper_fault(&t, &FaultSpec::grasper(0.02, 0.6, target, 0.005, Arm::Left)).unwrap();
                let dropped = failure_oracle(&f, &t, &OracleParams::default())
                    .unwrap()
                    .iter()
                    .any(|e| e.kind == FailureKind::BlockDrop);
                assert!(dropped || !dropped_before, "seed {seed}, target {target}");
                dropped_before = dropped;
            }
        }
    }
}
