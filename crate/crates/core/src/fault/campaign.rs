use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    calibrate_dtw_threshold, failure_oracle, inject_cartesian_fault, inject_grasper_fault, label_erroneous_gestures,
    FailureEvent, FailureKind, FaultSpec, OracleParams, ramp_for, DEFAULT_RAMP,
};
use crate::error::{Error, Result};
use crate::kinematics::{save_trajectory, Arm, Trajectory};
use crate::seed;

/// Where a cell's injection window sits in the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowAnchor {
    /// Start fraction drawn uniformly from `[lo, hi]`.
    Start { lo: f64, hi: f64 },
    /// Window ends on the last sample.
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignCell {
    /// Target grasper angle range (rad).
    pub grasper: [f64; 2],
    /// Grasper fault duration range (fraction of the trajectory).
    pub duration: [f64; 2],
    /// Cartesian deviation range; `[0, 0]` injects no Cartesian fault.
    pub cartesian: [f64; 2],
    pub cartesian_duration: [f64; 2],
    pub anchor: WindowAnchor,
    pub injections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub cells: Vec<CampaignCell>,
    /// Grasper ramp (rad per sample at 100 Hz), rescaled to each
    /// trajectory's sample rate.
    pub ramp: f64,
    pub arm: Arm,
    pub drop_threshold: f64,
    pub release_threshold: f64,
    /// Multiplier on the largest fault-free DTW deviation.
    pub dtw_factor: f64,
    pub dtw_half_window_ms: f64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let o = OracleParams::default();
        CampaignConfig {
            cells: Self::standard_grid(),
            ramp: DEFAULT_RAMP,
            arm: Arm::Left,
            drop_threshold: o.drop_threshold,
            release_threshold: o.release_threshold,
            dtw_factor: 5.0,
            dtw_half_window_ms: o.dtw_half_window_ms,
        }
    }
}

impl CampaignConfig {
    /// The 160-injection grid: seven grasper ranges, an early and a late
    /// window, and small and large Cartesian deviations.
    pub fn standard_grid() -> Vec<CampaignCell> {
        let grasper = [
            [0.3, 0.4],
            [0.5, 0.6],
            [0.7, 0.8],
            [0.9, 1.0],
            [1.1, 1.2],
            [1.3, 1.4],
            [1.5, 1.6],
        ];
        let windows = [
            ([0.55, 0.70], [0.50, 0.60], WindowAnchor::Start { lo: 0.0, hi: 0.05 }),
            ([0.65, 0.90], [0.70, 0.90], WindowAnchor::End),
        ];
        let cartesian = [[3_000.0, 6_000.0], [6_000.0, 65_000.0]];
        let mut cells = Vec::new();
        let mut spare = 0;
        for (gi, g) in grasper.iter().enumerate() {
            for (wi, (d, cd, anchor)) in windows.iter().enumerate() {
                let checked = (gi == 0) || (gi == 6 && wi == 0);
                for c in &cartesian {
                    let injections = if checked {
                        10
                    } else {
                        spare += 1;
                        if spare <= 12 {
                            5
                        } else {
                            4
                        }
                    };
                    cells.push(CampaignCell {
                        grasper: *g,
                        duration: *d,
                        cartesian: *c,
                        cartesian_duration: *cd,
                        anchor: anchor.clone(),
                        injections,
                    });
                }
            }
        }
        cells
    }

    fn oracle(&self, dtw_threshold: Option<f64>) -> OracleParams {
        OracleParams {
            arm: self.arm,
            drop_threshold: self.drop_threshold,
            release_threshold: self.release_threshold,
            dtw_threshold,
            dtw_half_window_ms: self.dtw_half_window_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: CampaignCell,
    pub n_injections: usize,
    pub n_blockdrop: usize,
    pub n_dropoff: usize,
}

impl CellResult {
    pub fn blockdrop_rate(&self) -> f64 {
        self.n_blockdrop as f64 / self.n_injections.max(1) as f64
    }

    pub fn dropoff_rate(&self) -> f64 {
        self.n_dropoff as f64 / self.n_injections.max(1) as f64
    }

    pub fn failure_rate(&self) -> f64 {
        (self.n_blockdrop + self.n_dropoff) as f64 / self.n_injections.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub cell_index: usize,
    pub corpus_index: usize,
    pub source_name: String,
    pub seed: u64,
    pub grasper: FaultSpec,
    pub cartesian: Option<FaultSpec>,
    pub events: Vec<FailureEvent>,
    pub labeled_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub seed: u64,
    pub dtw_threshold: Option<f64>,
    pub cells: Vec<CellResult>,
    pub runs: Vec<RunRecord>,
    /// Faulted, labelled trajectories in run order.
    #[serde(skip)]
    pub labeled: Vec<Trajectory>,
}

impl CampaignResult {
    pub fn total_injections(&self) -> usize {
        self.cells.iter().map(|c| c.n_injections).sum()
    }

    pub fn total_blockdrops(&self) -> usize {
        self.cells.iter().map(|c| c.n_blockdrop).sum()
    }

    pub fn total_dropoffs(&self) -> usize {
        self.cells.iter().map(|c| c.n_dropoff).sum()
    }

    /// One row per cell with the injection and failure counts.
    pub fn report_csv(&self) -> String {
        let mut s = String::from("grasper_lo,grasper_hi,dur_lo,dur_hi,cart_lo,cart_hi,n_injections,n_blockdrop,n_dropoff\n");
        for c in &self.cells {
            let k = &c.cell;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                k.grasper[0],
                k.grasper[1],
                k.duration[0],
                k.duration[1],
                k.cartesian[0],
                k.cartesian[1],
                c.n_injections,
                c.n_blockdrop,
                c.n_dropoff
            );
        }
        s
    }

    /// Writes `report.csv`, `runs.json` and one labelled CSV per run under
    /// `dir/labeled/`, filling in each record's `labeled_path`.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        let labeled_dir = dir.join("labeled");
        std::fs::create_dir_all(&labeled_dir).map_err(|e| Error::file(&labeled_dir, e))?;
        for (run, traj) in self.runs.iter_mut().zip(&self.labeled) {
            let name = format!("run_{:05}.csv", run.run_id);
            save_trajectory(traj, &labeled_dir.join(&name))?;
            run.labeled_path = Some(format!("labeled/{name}"));
        }
        let report = dir.join("report.csv");
        std::fs::write(&report, self.report_csv()).map_err(|e| Error::file(&report, e))?;
        let runs = dir.join("runs.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&runs, json + "\n").map_err(|e| Error::file(&runs, e))?;
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, range: [f64; 2]) -> Result<f64> {
    let [lo, hi] = range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Config(format!("invalid range [{lo}, {hi}]")));
    }
    Ok(if lo == hi { lo } else { rng.random_range(lo..=hi) })
}

fn start_for(rng: &mut ChaCha8Rng, anchor: &WindowAnchor, duration: f64) -> Result<f64> {
    Ok(match anchor {
        WindowAnchor::Start { lo, hi } => draw(rng, [*lo, *hi])?.min(1.0 - duration),
        WindowAnchor::End => 1.0 - duration,
    })
}

/// Runs every cell of the grid against randomly chosen corpus members.
///
/// Each run draws its own parameters from a seed derived from the campaign
/// seed and the run number, so results do not depend on execution order.
pub fn run_campaign(config: &CampaignConfig, corpus: &[Trajectory], seed: u64) -> Result<CampaignResult> {
    let mut result = CampaignResult {
        seed,
        dtw_threshold: None,
        cells: Vec::new(),
        runs: Vec::new(),
        labeled: Vec::new(),
    };
    if config.cells.is_empty() {
        return Ok(result);
    }
    if corpus.is_empty() {
        return Err(Error::Config("campaign needs a non-empty fault-free corpus".into()));
    }
    let probe = config.oracle(None);
    result.dtw_threshold = calibrate_dtw_threshold(corpus, &probe, config.dtw_factor)?;
    let oracle = config.oracle(result.dtw_threshold);
    let mut run_id = 0;
    for (cell_index, cell) in config.cells.iter().enumerate() {
        let mut counts = CellResult {
            cell: cell.clone(),
            n_injections: 0,
            n_blockdrop: 0,
            n_dropoff: 0,
        };
        for _ in 0..cell.injections {
            let run_seed = seed::derive_indexed(seed, "campaign-run", run_id as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
            let corpus_index = rng.random_range(0..corpus.len());
            let reference = &corpus[corpus_index];
            let target = draw(&mut rng, cell.grasper)?;
            let duration = draw(&mut rng, cell.duration)?;
            let start = start_for(&mut rng, &cell.anchor, duration)?;
            let grasper = FaultSpec::grasper(start, duration, target, ramp_for(reference, config.ramp), config.arm);
            let mut faulted = inject_grasper_fault(reference, &grasper)?;
            let mut specs = vec![grasper.clone()];
            let cartesian = if cell.cartesian[1] > 0.0 {
                let delta = draw(&mut rng, cell.cartesian)?;
                let cd = draw(&mut rng, cell.cartesian_duration)?;
                let cs = match cell.anchor {
                    WindowAnchor::Start { .. } => start.min(1.0 - cd),
                    WindowAnchor::End => 1.0 - cd,
                };
                let spec = FaultSpec::cartesian(cs, cd, delta, config.arm);
                faulted = inject_cartesian_fault(&faulted, &spec)?;
                specs.push(spec.clone());
                Some(spec)
            } else {
                None
            };
            let events = failure_oracle(&faulted, reference, &oracle)?;
            let mut labeled = label_erroneous_gestures(&faulted, &specs, &events)?;
            labeled.meta.name = format!("{}_run{run_id:05}", reference.meta.name);
            counts.n_injections += 1;
            counts.n_blockdrop += events.iter().filter(|e| e.kind == FailureKind::BlockDrop).count();
            counts.n_dropoff += events.iter().filter(|e| e.kind == FailureKind::DropoffFailure).count();
            result.runs.push(RunRecord {
                run_id,
                cell_index,
                corpus_index,
                source_name: reference.meta.name.clone(),
                seed: run_seed,
                grasper,
                cartesian,
                events,
                labeled_path: None,
            });
            result.labeled.push(labeled);
            run_id += 1;
        }
        result.cells.push(counts);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_block_transfer, SimParams};

    fn corpus(n: u64) -> Vec<Trajectory> {
        (0..n)
            .map(|seed| {
                let mut t = generate_block_transfer(&SimParams {
                    seed,
                    ..SimParams::default()
                })
                .unwrap();
                t.meta.name = format!("demo{seed}");
                t
            })
            .collect()
    }

    #[test]
    fn standard_grid_has_160_injections() {
        let cells = CampaignConfig::standard_grid();
        assert_eq!(cells.len(), 28);
        assert_eq!(cells.iter().map(|c| c.injections).sum::<usize>(), 160);
    }

    #[test]
    fn empty_grid_gives_empty_result() {
        let cfg = CampaignConfig {
            cells: vec![],
            ..CampaignConfig::default()
        };
        let r = run_campaign(&cfg, &[], 1).unwrap();
        assert!(r.cells.is_empty() && r.runs.is_empty());
    }

    #[test]
    fn small_campaign_is_deterministic_and_consistent() {
        let c = corpus(3);
        let mut cfg = CampaignConfig::default();
        cfg.cells.truncate(4);
        for cell in &mut cfg.cells {
            cell.injections = 2;
        }
        let a = run_campaign(&cfg, &c, 42).unwrap();
        let b = run_campaign(&cfg, &c, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_injections(), 8);
        for cell in &a.cells {
            assert!(cell.n_blockdrop + cell.n_dropoff <= cell.n_injections);
        }
        for (run, traj) in a.runs.iter().zip(&a.labeled) {
            let any_unsafe = traj.segments.iter().any(|s| s.unsafe_);
            assert_eq!(any_unsafe, !run.events.is_empty());
        }
        let dir = tempfile::tempdir().unwrap();
        let mut w = a.clone();
        w.write(dir.path()).unwrap();
        let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(report.lines().count(), 5);
        assert!(dir.path().join("labeled/run_00007.csv").exists());
    }
}
