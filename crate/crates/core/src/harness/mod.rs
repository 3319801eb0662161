//! Seeded single runs, Monte-Carlo batches, result files and the oracle
//! validation suite.

pub mod oracles;

pub use oracles::{random_mixture, validate_oracles, OracleEntry, OracleReport, ValidationLevel};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{choose_position, ideal_measurements, reward, Policy};
use crate::error::{Error, Result};
use crate::gaussmix::{prune_merge, GaussianMixture};
use crate::gmphd::{extract_states, phd_predict, phd_update, GmPhdState, UpdateOutput};
use crate::metrics::ospa;
use crate::pointprocess::PointPattern;
use crate::rng::{purpose, run_seed, RngStream};
use crate::scenario::{generate_measurements, step_truth, Scenario, ScenarioConfig, TruthState};

/// One row of a run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub sensor_x: f64,
    pub sensor_y: f64,
    pub action: usize,
    /// Divergence reward of the chosen action under ideal measurements.
    pub reward: f64,
    pub n_true: usize,
    pub n_est: usize,
    pub n_meas: usize,
    pub ospa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub policy: Policy,
    pub steps: Vec<StepRecord>,
}

impl RunRecord {
    /// Mean OSPA over steps `k >= from_step`.
    pub fn mean_ospa_from(&self, from_step: usize) -> f64 {
        let tail: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.step >= from_step)
            .map(|s| s.ospa)
            .collect();
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Everything the filter saw and produced at one step, for inspection by
/// callers of [`run_simulation_observed`].
pub struct StepTrace<'a> {
    pub step: usize,
    pub prior: &'a GaussianMixture,
    pub predicted: &'a GaussianMixture,
    pub measurements: &'a PointPattern,
    pub update: &'a UpdateOutput,
    pub pruned: &'a GaussianMixture,
    pub truth: &'a TruthState,
    pub sensor: &'a DVector<f64>,
}

pub fn run_simulation(scn: &Scenario, seed: u64) -> Result<RunRecord> {
    run_simulation_observed(scn, seed, |_| {})
}

/// Runs the tracking loop for the configured horizon. At each step: predict,
/// pick and apply a sensor move, advance the truth, measure, update, prune,
/// extract and score.
pub fn run_simulation_observed(scn: &Scenario, seed: u64, mut observe: impl FnMut(&StepTrace)) -> Result<RunRecord> {
    let mut rng_truth = RngStream::new(seed, purpose::TRUTH);
    let mut rng_detect = RngStream::new(seed, purpose::DETECTION);
    let mut rng_clutter = RngStream::new(seed, purpose::CLUTTER);
    let mut rng_policy = RngStream::new(seed, purpose::POLICY);
    let policy = scn.config.policy;
    let positions = [0, 1];

    let mut state = GmPhdState::empty(4);
    let mut truth = TruthState::default();
    let mut sensor = scn.sensor_start.clone();
    let mut steps = Vec::with_capacity(scn.horizon());
    for k in 1..=scn.horizon() {
        let predicted = phd_predict(&state, &scn.motion, &scn.birth)?;
        let (next, action, chosen_reward) = choose_position(policy, &predicted, &sensor, scn, &mut rng_policy)?;
        let chosen_reward = match chosen_reward {
            Some(r) => r,
            None => reward(
                &next,
                &predicted,
                &ideal_measurements(&predicted, &scn.meas.observation),
                scn,
            )?,
        };
        sensor = next;

        truth = step_truth(&truth, scn, &mut rng_truth, k);
        let det = scn.detection_profile(&sensor)?;
        let z = generate_measurements(&truth, &det, &scn.meas, &mut rng_detect, &mut rng_clutter)?;
        let update = phd_update(&predicted, &z, &det, &scn.meas)?;
        let pruned = prune_merge(&update.posterior, &scn.config.filter.prune);
        let estimates = extract_states(&pruned, scn.config.filter.extraction_threshold);
        let miss = ospa(&truth.positions(), &estimates.project(&positions), &scn.config.ospa)?;
        observe(&StepTrace {
            step: k,
            prior: &state.intensity,
            predicted: &predicted,
            measurements: &z,
            update: &update,
            pruned: &pruned,
            truth: &truth,
            sensor: &sensor,
        });

        steps.push(StepRecord {
            step: k,
            sensor_x: sensor[0],
            sensor_y: sensor[1],
            action,
            reward: chosen_reward,
            n_true: truth.len(),
            n_est: estimates.len(),
            n_meas: z.len(),
            ospa: miss,
        });
        state = GmPhdState {
            intensity: pruned,
            timestep: k,
        };
    }
    Ok(RunRecord { seed, policy, steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStep {
    pub step: usize,
    pub ospa_mean: f64,
    pub ospa_std: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone)]
pub struct McSummary {
    pub master_seed: u64,
    pub policy: Policy,
    pub steps: Vec<McStep>,
    /// Per-run steady-state mean OSPA, in run order. Short horizons use the
    /// final step only.
    pub run_means: Vec<f64>,
    pub wall_clock_secs: f64,
}

impl McSummary {
    pub fn n_runs(&self) -> usize {
        self.run_means.len()
    }

    /// Mean of the per-step OSPA means over steps `k >= from_step`.
    pub fn steady_state_mean(&self, from_step: usize) -> f64 {
        let tail: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.step >= from_step)
            .map(|s| s.ospa_mean)
            .collect();
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Steps from which OSPA is considered steady-state.
pub const STEADY_STATE_FROM: usize = 10;

/// `n_runs` independent runs; run `i` uses seed `run_seed(master_seed, i)`.
/// Results are reduced in run order, so the summary does not depend on `jobs`.
pub fn run_montecarlo(scn: &Scenario, n_runs: usize, master_seed: u64, jobs: usize) -> Result<McSummary> {
    if n_runs == 0 {
        return Err(Error::InvalidParameter {
            name: "n_runs",
            reason: "must be at least 1".into(),
        });
    }
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter {
            name: "jobs",
            reason: e.to_string(),
        })?;
    let runs: Vec<RunRecord> = pool.install(|| {
        (0..n_runs)
            .into_par_iter()
            .map(|i| run_simulation(scn, run_seed(master_seed, i as u64)))
            .collect::<Result<_>>()
    })?;
    let horizon = scn.horizon();
    let n = n_runs as f64;
    let steps = (0..horizon)
        .map(|t| {
            let mean = runs.iter().map(|r| r.steps[t].ospa).sum::<f64>() / n;
            let var = if n_runs > 1 {
                runs.iter().map(|r| (r.steps[t].ospa - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            McStep {
                step: t + 1,
                ospa_mean: mean,
                ospa_std: var.sqrt(),
                n_runs,
            }
        })
        .collect();
    Ok(McSummary {
        master_seed,
        policy: scn.config.policy,
        steps,
        run_means: runs
            .iter()
            .map(|r| r.mean_ospa_from(STEADY_STATE_FROM.min(horizon)))
            .collect(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Hex SHA-256 of the canonical TOML rendering of `cfg`.
pub fn config_hash(cfg: &ScenarioConfig) -> Result<String> {
    let text = toml::to_string(cfg).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

fn write_rows<T: Serialize>(out: impl Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_run_csv(out: impl Write, run: &RunRecord) -> Result<()> {
    write_rows(out, &run.steps)
}

pub fn write_summary_csv(out: impl Write, summary: &McSummary) -> Result<()> {
    write_rows(out, &summary.steps)
}

/// Path of the metadata file written next to `out`.
pub fn sidecar_path(out: &Path) -> std::path::PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

pub fn write_sidecar(out: &Path, meta: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(sidecar_path(out), text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(horizon: usize, policy: Policy) -> Scenario {
        let mut cfg = ScenarioConfig::default();
        cfg.horizon = horizon;
        cfg.policy = policy;
        cfg.build().unwrap()
    }

    #[test]
    fn runs_are_reproducible() {
        let scn = short(8, Policy::Cs);
        let a = run_simulation(&scn, 7).unwrap();
        let b = run_simulation(&scn, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps.len(), 8);
        assert_ne!(a, run_simulation(&scn, 8).unwrap());
    }

    #[test]
    fn horizon_one_gives_one_row() {
        let run = run_simulation(&short(1, Policy::Stay), 3).unwrap();
        assert_eq!(run.steps.len(), 1);
        assert_eq!(run.steps[0].action, 0);
        let mut buf = Vec::new();
        write_run_csv(&mut buf, &run).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,sensor_x,sensor_y,action,reward,n_true,n_est,n_meas,ospa\n"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn truth_is_policy_independent() {
        let a = run_simulation(&short(12, Policy::Stay), 11).unwrap();
        let b = run_simulation(&short(12, Policy::Random), 11).unwrap();
        let n = |r: &RunRecord| r.steps.iter().map(|s| s.n_true).collect::<Vec<_>>();
        assert_eq!(n(&a), n(&b));
    }

    #[test]
    fn single_run_batch_matches_run() {
        let scn = short(5, Policy::Cs);
        let summary = run_montecarlo(&scn, 1, 99, 1).unwrap();
        let run = run_simulation(&scn, run_seed(99, 0)).unwrap();
        for (m, s) in summary.steps.iter().zip(&run.steps) {
            assert_eq!(m.ospa_mean, s.ospa);
            assert_eq!(m.ospa_std, 0.0);
        }
    }

    #[test]
    fn batch_independent_of_jobs() {
        let scn = short(4, Policy::Random);
        let a = run_montecarlo(&scn, 6, 5, 1).unwrap();
        let b = run_montecarlo(&scn, 6, 5, 4).unwrap();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.run_means, b.run_means);
    }

    #[test]
    fn sidecar_sits_next_to_output() {
        assert_eq!(
            sidecar_path(Path::new("/tmp/x/run.csv")),
            Path::new("/tmp/x/run.csv.meta.json")
        );
        let h = config_hash(&ScenarioConfig::default()).unwrap();
        assert_eq!(h.len(), 64);
    }
}
