//! Synthetic Block Transfer demonstrations.
//!
//! The active arm follows a piecewise cubic-eased Cartesian path through
//! fixed waypoints (home, pickup, center, above receptacle, end point) while
//! the grasper opens during the reach, closes during the grasp and reopens
//! during the drop. Gesture labels are recorded inline as the trajectory is
//! generated. Lengths are in micrometres.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    Arm, GestureSegment, KinematicsSample, Source, Trajectory, TrajectoryMeta,
};
use crate::seed;
use crate::task::BLOCK_TRANSFER_ORDER;

type Vec3 = [f64; 3];

/// Standard deviations of additive Gaussian noise per feature family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub position: f64,
    pub rotation: f64,
    pub grasper: f64,
    pub linear_velocity: f64,
    pub angular_velocity: f64,
}

impl NoiseSpec {
    pub fn zero() -> Self {
        NoiseSpec {
            position: 0.0,
            rotation: 0.0,
            grasper: 0.0,
            linear_velocity: 0.0,
            angular_velocity: 0.0,
        }
    }

    fn scaled(&self, k: f64) -> Self {
        NoiseSpec {
            position: self.position * k,
            rotation: self.rotation * k,
            grasper: self.grasper * k,
            linear_velocity: self.linear_velocity * k,
            angular_velocity: self.angular_velocity * k,
        }
    }

    fn sigma_for(&self, feature: usize) -> f64 {
        match feature {
            0..=2 => self.position,
            3..=11 => self.rotation,
            12 => self.grasper,
            13..=15 => self.linear_velocity,
            _ => self.angular_velocity,
        }
    }
}

/// Operator style: slower operators also move less smoothly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorStyle {
    pub duration_scale: f64,
    pub noise_scale: f64,
}

impl OperatorStyle {
    pub const A: OperatorStyle = OperatorStyle {
        duration_scale: 1.0,
        noise_scale: 1.0,
    };
    pub const B: OperatorStyle = OperatorStyle {
        duration_scale: 1.15,
        noise_scale: 1.5,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub sample_rate_hz: f64,
    pub arm: Arm,
    pub home: Vec3,
    pub pickup: Vec3,
    pub receptacle: Vec3,
    pub end_point: Vec3,
    /// Height of the carry path above the table.
    pub carry_height: f64,
    /// Hover height above the receptacle at the drop.
    pub drop_height: f64,
    /// Per-demonstration Gaussian jitter of pickup and receptacle.
    pub waypoint_jitter: f64,
    pub grasper_open: f64,
    pub grasper_closed: f64,
    /// Nominal durations in ms, in Block Transfer order (G12, G2, G5, G6, G11).
    pub durations_ms: [f64; 5],
    /// Each duration is scaled by a uniform factor in `1 ± duration_jitter`.
    pub duration_jitter: f64,
    pub noise: NoiseSpec,
    pub operator: OperatorStyle,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            sample_rate_hz: 100.0,
            arm: Arm::Left,
            home: [0.0, -20_000.0, 60_000.0],
            pickup: [-40_000.0, 10_000.0, 0.0],
            receptacle: [40_000.0, 10_000.0, 0.0],
            end_point: [20_000.0, -10_000.0, 40_000.0],
            carry_height: 30_000.0,
            drop_height: 15_000.0,
            waypoint_jitter: 3_000.0,
            grasper_open: 1.2,
            grasper_closed: 0.3,
            durations_ms: [2000.0, 800.0, 1000.0, 1400.0, 1200.0],
            duration_jitter: 0.08,
            noise: NoiseSpec {
                position: 60.0,
                rotation: 2e-3,
                grasper: 0.01,
                linear_velocity: 300.0,
                angular_velocity: 0.005,
            },
            operator: OperatorStyle::A,
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz <= 1000.0) {
            return Err(Error::Config(format!(
                "sample rate must be in (0, 1000] Hz, got {}",
                self.sample_rate_hz
            )));
        }
        if self.durations_ms.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Config("gesture durations must be positive".into()));
        }
        if !(self.grasper_open > self.grasper_closed) {
            return Err(Error::Config("open grasper angle must exceed the closed angle".into()));
        }
        if !(0.0..1.0).contains(&self.duration_jitter) {
            return Err(Error::Config("duration jitter must be in [0, 1)".into()));
        }
        let n = self.noise;
        if [n.position, n.rotation, n.grasper, n.linear_velocity, n.angular_velocity]
            .iter()
            .any(|s| !(*s >= 0.0))
            || self.waypoint_jitter < 0.0
        {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if !(self.operator.duration_scale > 0.0 && self.operator.noise_scale >= 0.0) {
            return Err(Error::Config("operator scales must be positive".into()));
        }
        Ok(())
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn lerp3(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s]
}

/// Ease between `a` and `b` over the fraction `[u0, u1]` of a phase.
fn ease(a: f64, b: f64, u: f64, u0: f64, u1: f64) -> f64 {
    a + (b - a) * smoothstep((u - u0) / (u1 - u0))
}

struct Plan {
    /// Phase boundaries in ms (6 entries).
    bounds: [f64; 6],
    pickup: Vec3,
    receptacle: Vec3,
}

impl Plan {
    fn phase_at(&self, t: f64) -> (usize, f64) {
        let k = (0..5).rfind(|&k| t >= self.bounds[k]).unwrap_or(0);
        let u = (t - self.bounds[k]) / (self.bounds[k + 1] - self.bounds[k]);
        (k, u.clamp(0.0, 1.0))
    }
}

fn active_state(p: &SimParams, plan: &Plan, t: f64) -> (Vec3, f64) {
    let above_pickup = [plan.pickup[0], plan.pickup[1], plan.pickup[2] + 8_000.0];
    let center = lerp3(
        [plan.pickup[0], plan.pickup[1], p.carry_height],
        [plan.receptacle[0], plan.receptacle[1], p.carry_height],
        0.5,
    );
    let above_receptacle = [plan.receptacle[0], plan.receptacle[1], plan.receptacle[2] + p.drop_height];
    let (open, closed) = (p.grasper_open, p.grasper_closed);
    let (phase, u) = plan.phase_at(t);
    match phase {
        // reach: approach above the block, then descend; grasper opens early
        0 => {
            let pos = if u < 0.7 {
                lerp3(p.home, above_pickup, smoothstep(u / 0.7))
            } else {
                lerp3(above_pickup, plan.pickup, smoothstep((u - 0.7) / 0.3))
            };
            (pos, ease(closed, open, u, 0.05, 0.35))
        }
        // grasp: hold position, close the jaws
        1 => (plan.pickup, ease(open, closed, u, 0.25, 0.75)),
        // move to center with the block
        2 => (lerp3(plan.pickup, center, smoothstep(u)), closed),
        // carry to the receptacle
        3 => (lerp3(center, above_receptacle, smoothstep(u)), closed),
        // drop: open over the receptacle, then move to the end point
        _ => {
            let pos = if u < 0.4 {
                above_receptacle
            } else {
                lerp3(above_receptacle, p.end_point, smoothstep((u - 0.4) / 0.6))
            };
            (pos, ease(closed, open, u, 0.0, 0.25))
        }
    }
}

/// Rodrigues rotation for a small axis-angle vector.
fn small_rotation(w: Vec3) -> [[f64; 3]; 3] {
    let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    if theta == 0.0 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let k = [w[0] / theta, w[1] / theta, w[2] / theta];
    let (s, c) = theta.sin_cos();
    let v = 1.0 - c;
    [
        [c + k[0] * k[0] * v, k[0] * k[1] * v - k[2] * s, k[0] * k[2] * v + k[1] * s],
        [k[1] * k[0] * v + k[2] * s, c + k[1] * k[1] * v, k[1] * k[2] * v - k[0] * s],
        [k[2] * k[0] * v - k[1] * s, k[2] * k[1] * v + k[0] * s, c + k[2] * k[2] * v],
    ]
}

/// Generates one annotated Block Transfer demonstration.
pub fn generate_block_transfer(params: &SimParams) -> Result<Trajectory> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let jitter = Uniform::new_inclusive(1.0 - params.duration_jitter, 1.0 + params.duration_jitter)
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut bounds = [0.0; 6];
    for k in 0..5 {
        let d = params.durations_ms[k] * params.operator.duration_scale * jitter.sample(&mut rng);
        bounds[k + 1] = bounds[k] + d;
    }
    let wj = Normal::new(0.0, params.waypoint_jitter.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut shift = |p: Vec3| [p[0] + wj.sample(&mut rng), p[1] + wj.sample(&mut rng), p[2]];
    let plan = Plan {
        bounds,
        pickup: shift(params.pickup),
        receptacle: shift(params.receptacle),
    };

    let rate = params.sample_rate_hz;
    let total = bounds[5];
    let n = (total * rate / 1000.0).floor() as usize + 1;
    let period = 1000.0 / rate;
    let times: Vec<f64> = (0..n).map(|i| Trajectory::nominal_timestamp(rate, i)).collect();

    let clean: Vec<(Vec3, f64)> = times.iter().map(|&t| active_state(params, &plan, t)).collect();
    let velocity = |i: usize| -> Vec3 {
        let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
        let dt = (hi - lo) as f64 * period / 1000.0;
        let (a, b) = (clean[lo].0, clean[hi].0);
        if dt == 0.0 {
            return [0.0; 3];
        }
        [(b[0] - a[0]) / dt, (b[1] - a[1]) / dt, (b[2] - a[2]) / dt]
    };

    let noise = params.noise.scaled(params.operator.noise_scale);
    let rot_noise = Normal::new(0.0, noise.rotation.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let idle_home = [params.home[0] + 30_000.0, params.home[1], params.home[2]];
    let samples = (0..n)
        .map(|i| {
            let mut s = KinematicsSample {
                timestamp_ms: times[i],
                ..Default::default()
            };
            let active = s.arm_mut(params.arm);
            active.position = clean[i].0;
            active.grasper_angle = clean[i].1;
            active.linear_velocity = velocity(i);
            let other = if params.arm == Arm::Left { Arm::Right } else { Arm::Left };
            let idle = s.arm_mut(other);
            idle.position = idle_home;
            idle.grasper_angle = 0.5 * (params.grasper_open + params.grasper_closed);
            for arm in [Arm::Left, Arm::Right] {
                let w = if noise.rotation > 0.0 {
                    [rot_noise.sample(&mut rng), rot_noise.sample(&mut rng), rot_noise.sample(&mut rng)]
                } else {
                    [0.0; 3]
                };
                s.arm_mut(arm).rotation = small_rotation(w);
            }
            s
        })
        .collect();

    let labels: Vec<usize> = times.iter().map(|&t| plan.phase_at(t).0).collect();
    let mut segments: Vec<GestureSegment> = Vec::new();
    for (i, &k) in labels.iter().enumerate() {
        match segments.last_mut() {
            Some(seg) if seg.gesture == BLOCK_TRANSFER_ORDER[k] => seg.end = i,
            _ => segments.push(GestureSegment::new(BLOCK_TRANSFER_ORDER[k], i, i)),
        }
    }

    let traj = Trajectory {
        samples,
        sample_rate_hz: rate,
        segments,
        source: Source::Synthetic,
        length_unit: "um".into(),
        meta: TrajectoryMeta {
            name: format!("block_transfer_{:016x}", params.seed),
            ..Default::default()
        },
    };
    // rotation was already perturbed on the manifold
    let mut additive = noise;
    additive.rotation = 0.0;
    let seed = params.seed ^ 0x9E37_79B9_7F4A_7C15;
    let traj = add_noise(&traj, &additive, seed)?;
    traj.validate()?;
    Ok(traj)
}

/// Adds independent Gaussian noise to every feature; labels are untouched.
pub fn add_noise(traj: &Trajectory, sigma: &NoiseSpec, seed: u64) -> Result<Trajectory> {
    let sigmas: Vec<f64> = (0..19).map(|f| sigma.sigma_for(f)).collect();
    if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::Config("noise standard deviations must be finite and >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = traj.clone();
    for s in &mut out.samples {
        let mut f = s.features();
        for (j, v) in f.iter_mut().enumerate() {
            let sd = sigmas[j % 19];
            if sd > 0.0 {
                *v += sd * std_normal.sample(&mut rng);
            }
        }
        *s = KinematicsSample::from_features(s.timestamp_ms, &f);
    }
    Ok(out)
}

/// A corpus of demonstrations split into cross-validation groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub demos: usize,
    pub groups: usize,
    pub seed: u64,
    pub params: SimParams,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            demos: 50,
            groups: 5,
            seed: 0,
            params: SimParams::default(),
        }
    }
}

/// Demonstration `i` belongs to group `S{i mod groups + 1}`; operators
/// alternate between successive rounds so every group has both styles.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<Trajectory>> {
    if spec.groups == 0 {
        return Err(Error::Config("corpus needs at least one group".into()));
    }
    (0..spec.demos)
        .map(|i| {
            let round = i / spec.groups;
            let params = SimParams {
                seed: seed::derive_indexed(spec.seed, "demo", i as u64),
                operator: if round % 2 == 0 { OperatorStyle::A } else { OperatorStyle::B },
                ..spec.params.clone()
            };
            let mut t = generate_block_transfer(&params)?;
            t.meta.name = format!("demo{i:03}");
            t.meta.group = Some(format!("S{}", i % spec.groups + 1));
            Ok(t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::GestureId;

    fn quiet() -> SimParams {
        SimParams {
            noise: NoiseSpec::zero(),
            waypoint_jitter: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn default_demo_has_five_contiguous_segments() {
        let t = generate_block_transfer(&SimParams::default()).unwrap();
        assert_eq!(t.gesture_sequence(), BLOCK_TRANSFER_ORDER.to_vec());
        assert_eq!(t.segments[0].start, 0);
        assert_eq!(t.segments.last().unwrap().end, t.len() - 1);
        for w in t.segments.windows(2) {
            assert_eq!(w[0].end + 1, w[1].start);
        }
    }

    #[test]
    fn grasper_schedule() {
        let p = SimParams::default();
        let t = generate_block_transfer(&p).unwrap();
        let g6 = t.segments.iter().find(|s| s.gesture == GestureId(6)).unwrap();
        let mid = (g6.start + g6.end) / 2;
        assert!((t.samples[mid].left.grasper_angle - p.grasper_closed).abs() < 0.05);
        let last = t.samples.last().unwrap().left.grasper_angle;
        assert!((last - p.grasper_open).abs() < 0.05);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let p = SimParams {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(generate_block_transfer(&p).unwrap(), generate_block_transfer(&p).unwrap());
        let q = SimParams { seed: 10, ..p };
        assert_ne!(generate_block_transfer(&p).unwrap(), generate_block_transfer(&q).unwrap());
    }

    #[test]
    fn rotations_stay_orthonormal() {
        let t = generate_block_transfer(&SimParams::default()).unwrap();
        for s in t.samples.iter().step_by(17) {
            let r = s.left.rotation;
            for a in 0..3 {
                for b in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[k][a] * r[k][b]).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn terminal_position_is_near_the_end_point() {
        let p = quiet();
        let t = generate_block_transfer(&p).unwrap();
        let end = t.samples.last().unwrap().left.position;
        for k in 0..3 {
            assert!((end[k] - p.end_point[k]).abs() < 100.0);
        }
        // the drop happens above the receptacle
        let g11 = t.segments.last().unwrap();
        let drop = t.samples[g11.start + 2].left.position;
        assert!((drop[0] - p.receptacle[0]).abs() < 10.0);
    }

    #[test]
    fn doubling_the_rate_keeps_boundaries() {
        let p = quiet();
        let slow = generate_block_transfer(&p).unwrap();
        let fast = generate_block_transfer(&SimParams {
            sample_rate_hz: 200.0,
            ..p
        })
        .unwrap();
        assert!((fast.len() as i64 - 2 * slow.len() as i64).abs() <= 1);
        for (a, b) in slow.segments.iter().zip(&fast.segments) {
            let ta = slow.samples[a.start].timestamp_ms;
            let tb = fast.samples[b.start].timestamp_ms;
            assert!((ta - tb).abs() <= slow.sample_period_ms());
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = SimParams::default();
        p.grasper_open = 0.2;
        assert!(matches!(generate_block_transfer(&p), Err(Error::Config(_))));
        let mut p = SimParams::default();
        p.durations_ms[2] = 0.0;
        assert!(generate_block_transfer(&p).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let t = generate_block_transfer(&SimParams::default()).unwrap();
        assert_eq!(add_noise(&t, &NoiseSpec::zero(), 3).unwrap(), t);
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let base = generate_block_transfer(&quiet()).unwrap();
        let mut long = base.clone();
        while long.len() < 100_000 {
            let offset = long.duration_ms() + 10.0;
            long.samples.extend(base.samples.iter().map(|s| KinematicsSample {
                timestamp_ms: s.timestamp_ms + offset,
                ..*s
            }));
        }
        long.segments.clear();
        let sigma = NoiseSpec {
            grasper: 0.05,
            ..NoiseSpec::zero()
        };
        let noisy = add_noise(&long, &sigma, 77).unwrap();
        let diffs: Vec<f64> = noisy
            .samples
            .iter()
            .zip(&long.samples)
            .map(|(a, b)| a.left.grasper_angle - b.left.grasper_angle)
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 0.0025 - 1.0).abs() < 0.05, "variance {var}");
        assert_eq!(noisy, add_noise(&long, &sigma, 77).unwrap());
    }
}
