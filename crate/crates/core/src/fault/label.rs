use super::{FailureEvent, FaultSpec};
use crate::error::Result;
use crate::kinematics::Trajectory;

/// Marks every gesture that overlaps `[injection start, latest failure]` as
/// unsafe and records the ground-truth error onset.
///
/// With no failure events the trajectory is returned without any unsafe
/// segment; a fault that does not manifest is not an error.
pub fn label_erroneous_gestures(traj: &Trajectory, specs: &[FaultSpec], events: &[FailureEvent]) -> Result<Trajectory> {
    let mut out = traj.clone();
    let Some(latest) = events.iter().map(|e| e.sample_index).max() else {
        return Ok(out);
    };
    let mut start = latest;
    for spec in specs {
        start = start.min(spec.window(traj.len())?.0);
    }
    let mut codes: Vec<String> = events.iter().map(|e| e.kind.code().to_string()).collect();
    codes.dedup();
    for seg in out.segments.iter_mut().filter(|s| s.overlaps(start, latest)) {
        seg.unsafe_ = true;
        for c in &codes {
            if !seg.error_codes.contains(c) {
                seg.error_codes.push(c.clone());
            }
        }
    }
    out.meta.fault_onset_ms = Some(traj.samples[start].timestamp_ms);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::tests::flat;
    use crate::fault::{FailureKind, FaultSpec};
    use crate::kinematics::{Arm, GestureId, GestureSegment};

    fn annotated() -> Trajectory {
        let mut t = flat(100, 0.3);
        t.segments = vec![
            GestureSegment::new(GestureId(12), 0, 19),
            GestureSegment::new(GestureId(2), 20, 39),
            GestureSegment::new(GestureId(5), 40, 59),
            GestureSegment::new(GestureId(6), 60, 79),
            GestureSegment::new(GestureId(11), 80, 99),
        ];
        t
    }

    fn event(i: usize, g: u8) -> FailureEvent {
        FailureEvent {
            kind: FailureKind::BlockDrop,
            timestamp_ms: i as f64 * 10.0,
            sample_index: i,
            gesture: GestureId(g),
        }
    }

    fn flags(t: &Trajectory) -> Vec<bool> {
        t.segments.iter().map(|s| s.unsafe_).collect()
    }

    #[test]
    fn overlap_from_injection_to_event() {
        let t = annotated();
        let spec = FaultSpec::grasper(0.45, 0.3, 1.5, 0.01, Arm::Left);
        let out = label_erroneous_gestures(&t, &[spec], &[event(65, 6)]).unwrap();
        assert_eq!(flags(&out), [false, false, true, true, false]);
        assert_eq!(out.meta.fault_onset_ms, Some(450.0));
        assert_eq!(out.segments[2].error_codes, ["block_drop"]);
    }

    #[test]
    fn no_event_no_label() {
        let t = annotated();
        let spec = FaultSpec::grasper(0.45, 0.3, 1.5, 0.01, Arm::Left);
        let out = label_erroneous_gestures(&t, &[spec], &[]).unwrap();
        assert!(flags(&out).iter().all(|f| !f));
        assert_eq!(out.meta.fault_onset_ms, None);
    }

    #[test]
    fn boundary_sample_belongs_to_its_segment() {
        let t = annotated();
        // injection starts on the last sample of G2 and the drop fires on the last G5 sample
        let spec = FaultSpec::grasper(0.39, 0.3, 1.5, 0.01, Arm::Left);
        let out = label_erroneous_gestures(&t, &[spec], &[event(59, 5)]).unwrap();
        assert_eq!(flags(&out), [false, true, true, false, false]);
    }
}
