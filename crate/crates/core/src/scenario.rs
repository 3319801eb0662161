//! Ground truth for the mobile-sensor tracking experiment: scripted target
//! births and deaths, constant-velocity motion, position-dependent detection,
//! noisy position returns and uniform Poisson clutter.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::Policy;
use crate::error::{Error, Result};
use crate::gaussmix::{Gaussian, GaussianMixture, HyperVolumeUnit, PruneConfig};
use crate::gmphd::{BirthSpawnModel, DetectionProfile, MeasModel, MotionModel, Region};
use crate::metrics::OspaParams;
use crate::pointprocess::{psd_sqrt, sample_gaussian, sample_poisson_count, PointPattern};
use crate::rng::RngStream;

type Rows = Vec<Vec<f64>>;

/// One scripted target. Alive from `birth_step` up to, but excluding,
/// `death_step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScript {
    pub birth_step: usize,
    #[serde(default)]
    pub death_step: Option<usize>,
    /// `[px, py, vx, vy]` at the birth step.
    pub state: Vec<f64>,
}

impl TargetScript {
    pub fn alive_at(&self, k: usize) -> bool {
        k >= self.birth_step && self.death_step.is_none_or(|d| k < d)
    }
}

/// Polar grid of sensor moves around the current position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionGrid {
    pub radial_step: f64,
    pub radial_steps: usize,
    pub angular_steps: usize,
}

impl Default for ActionGrid {
    fn default() -> Self {
        Self {
            radial_step: 50.0,
            radial_steps: 2,
            angular_steps: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub survival: f64,
    pub birth: GaussianMixture,
    pub prune: PruneConfig,
    pub extraction_threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let birth = GaussianMixture::single(
            0.05,
            Gaussian::diagonal(&[500.0, 500.0, 0.0, 0.0], &[300.0 * 300.0, 300.0 * 300.0, 100.0, 100.0])
                .expect("diagonal covariance"),
        )
        .expect("positive weight");
        Self {
            survival: 0.99,
            birth,
            prune: PruneConfig::default(),
            extraction_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AreaConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Default for AreaConfig {
    fn default() -> Self {
        Self {
            lo: vec![0.0, 0.0],
            hi: vec![1000.0, 1000.0],
        }
    }
}

/// Complete parameterization of a simulation. Every field has a default, so
/// an empty file describes the standard 1000 m x 1000 m scenario. Matrices
/// left unset are derived from `period`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub area: AreaConfig,
    /// Sampling period in seconds.
    pub period: f64,
    pub transition: Option<Rows>,
    pub process_noise: Option<Rows>,
    pub observation: Option<Rows>,
    pub measurement_noise: Option<Rows>,
    /// Covariance of the Gaussian detection profile around the sensor.
    pub detection_shape: Rows,
    /// Expected clutter points per square meter.
    pub clutter_rate: f64,
    pub targets: Vec<TargetScript>,
    pub sensor_start: Vec<f64>,
    pub horizon: usize,
    pub actions: ActionGrid,
    pub filter: FilterConfig,
    pub ospa: OspaParams,
    pub policy: Policy,
    /// Numeric value of the hyper-volume unit used by the reward.
    pub unit: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area: AreaConfig::default(),
            period: 1.0,
            transition: None,
            process_noise: None,
            observation: None,
            measurement_noise: None,
            detection_shape: vec![vec![3.0e6, -2.4e6], vec![-2.4e6, 3.6e6]],
            clutter_rate: 2e-5,
            targets: vec![
                TargetScript {
                    birth_step: 1,
                    death_step: None,
                    state: vec![200.0, 800.0, 5.0, -8.0],
                },
                TargetScript {
                    birth_step: 1,
                    death_step: Some(20),
                    state: vec![800.0, 200.0, -8.0, 6.0],
                },
                TargetScript {
                    birth_step: 27,
                    death_step: None,
                    state: vec![500.0, 500.0, 6.0, 0.0],
                },
            ],
            sensor_start: vec![250.0, 250.0],
            horizon: 40,
            actions: ActionGrid::default(),
            filter: FilterConfig::default(),
            ospa: OspaParams::default(),
            policy: Policy::Cs,
            unit: 1.0,
        }
    }
}

/// Constant-velocity transition for state `[px, py, vx, vy]`.
pub fn cv_transition(t: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, t, 0.0, 0.0, 1.0, 0.0, t, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        ],
    )
}

/// `27 [T^3 I, T^2/54 I; T^2/54 I, T/81 I]`.
pub fn cv_process_noise(t: f64) -> DMatrix<f64> {
    let (a, b, c) = (t.powi(3), t * t / 54.0, t / 81.0);
    DMatrix::from_row_slice(4, 4, &[a, 0.0, b, 0.0, 0.0, a, 0.0, b, b, 0.0, c, 0.0, 0.0, b, 0.0, c]) * 27.0
}

pub fn position_observation() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
}

fn cfg_err(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

fn matrix(path: &str, rows: &Rows, shape: (usize, usize)) -> Result<DMatrix<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(cfg_err(path, format!("expected a {}x{} matrix", shape.0, shape.1)));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(cfg_err(path, "non-finite entry"));
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

/// A validated scenario with its models assembled.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub area: Region,
    pub motion: MotionModel,
    pub birth: BirthSpawnModel,
    pub meas: MeasModel,
    pub detection_shape: DMatrix<f64>,
    pub sensor_start: DVector<f64>,
    pub unit: HyperVolumeUnit,
    process_noise_sqrt: DMatrix<f64>,
}

impl ScenarioConfig {
    /// Validates every field and assembles the models. Errors name the
    /// offending field path.
    pub fn build(&self) -> Result<Scenario> {
        if !(self.period > 0.0) {
            return Err(cfg_err("period", "must be positive"));
        }
        if self.horizon < 1 {
            return Err(cfg_err("horizon", "must be at least 1"));
        }
        let area =
            Region::new(self.area.lo.clone(), self.area.hi.clone()).map_err(|e| cfg_err("area", e.to_string()))?;
        if area.dim() != 2 {
            return Err(cfg_err("area", "must be two-dimensional"));
        }
        let f = match &self.transition {
            Some(rows) => matrix("transition", rows, (4, 4))?,
            None => cv_transition(self.period),
        };
        let q = match &self.process_noise {
            Some(rows) => matrix("process_noise", rows, (4, 4))?,
            None => cv_process_noise(self.period),
        };
        let h = match &self.observation {
            Some(rows) => matrix("observation", rows, (2, 4))?,
            None => position_observation(),
        };
        let r = match &self.measurement_noise {
            Some(rows) => matrix("measurement_noise", rows, (2, 2))?,
            None => DMatrix::identity(2, 2) * 9.0,
        };
        let s = matrix("detection_shape", &self.detection_shape, (2, 2))?;
        if Gaussian::new(DVector::zeros(2), s.clone()).is_err() {
            return Err(cfg_err("detection_shape", "not positive definite"));
        }
        let motion = MotionModel::new(f, q, self.filter.survival)
            .map_err(|e| cfg_err("filter.survival / process_noise", e.to_string()))?;
        let meas = MeasModel::new(h, r, self.clutter_rate, area.clone())
            .map_err(|e| cfg_err("measurement_noise / clutter_rate", e.to_string()))?;
        let birth = self.filter.birth.clone();
        if birth.dim() != 4 {
            return Err(cfg_err("filter.birth.dim", "must be 4"));
        }
        if self.sensor_start.len() != 2 {
            return Err(cfg_err("sensor_start", "must have two coordinates"));
        }
        let sensor_start = DVector::from_column_slice(&self.sensor_start);
        if !area.contains(&sensor_start) {
            return Err(cfg_err("sensor_start", "must lie inside the area"));
        }
        for (i, t) in self.targets.iter().enumerate() {
            if t.state.len() != 4 {
                return Err(cfg_err(format!("targets[{i}].state"), "must have four entries"));
            }
            if t.birth_step < 1 {
                return Err(cfg_err(format!("targets[{i}].birth_step"), "steps start at 1"));
            }
            if t.death_step.is_some_and(|d| d <= t.birth_step) {
                return Err(cfg_err(format!("targets[{i}].death_step"), "must follow birth_step"));
            }
        }
        let a = &self.actions;
        if !(a.radial_step > 0.0) || a.angular_steps < 1 {
            return Err(cfg_err(
                "actions",
                "radial_step must be positive and angular_steps at least 1",
            ));
        }
        let p = &self.filter.prune;
        if p.truncation_threshold < 0.0 || p.merge_threshold < 0.0 || p.max_components < 1 {
            return Err(cfg_err(
                "filter.prune",
                "thresholds must be >= 0 and max_components >= 1",
            ));
        }
        if !(self.filter.extraction_threshold > 0.0 && self.filter.extraction_threshold <= 1.0) {
            return Err(cfg_err("filter.extraction_threshold", "must lie in (0, 1]"));
        }
        self.ospa.validate().map_err(|e| cfg_err("ospa", e.to_string()))?;
        let unit = HyperVolumeUnit::new(self.unit).map_err(|e| cfg_err("unit", e.to_string()))?;
        Ok(Scenario {
            config: self.clone(),
            area,
            process_noise_sqrt: psd_sqrt(&motion.process_noise),
            motion,
            birth: BirthSpawnModel::births_only(birth),
            meas,
            detection_shape: s,
            sensor_start,
            unit,
        })
    }
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// Detection profile of a sensor parked at `sensor`.
    pub fn detection_profile(&self, sensor: &DVector<f64>) -> Result<DetectionProfile> {
        DetectionProfile::sensor_centered(
            sensor.clone(),
            self.detection_shape.clone(),
            self.meas.observation.clone(),
        )
    }

    pub fn in_area(&self, p: &DVector<f64>) -> bool {
        self.area.contains(p)
    }
}

/// Live targets, keyed by their index in the truth script.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TruthState {
    pub live: Vec<(usize, DVector<f64>)>,
}

impl TruthState {
    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn states(&self) -> PointPattern {
        PointPattern::from_points(4, self.live.iter().map(|(_, x)| x.clone()).collect()).expect("4-d states")
    }

    pub fn positions(&self) -> PointPattern {
        self.states().project(&[0, 1])
    }
}

/// Advances the truth to step `k`: removes targets whose death step is `k`,
/// propagates the survivors through `N(F x, Q)`, and adds scripted births.
pub fn step_truth(truth: &TruthState, scn: &Scenario, rng: &mut RngStream, k: usize) -> TruthState {
    let script = &scn.config.targets;
    let f = &scn.motion.transition;
    let mut live = Vec::with_capacity(truth.len() + 1);
    for (id, x) in &truth.live {
        if script[*id].alive_at(k) {
            live.push((*id, sample_gaussian(rng, &(f * x), &scn.process_noise_sqrt)));
        }
    }
    for (id, t) in script.iter().enumerate() {
        if t.birth_step == k && t.alive_at(k) {
            live.push((id, DVector::from_column_slice(&t.state)));
        }
    }
    TruthState { live }
}

/// `p_D(x) = N(s; H x, S) / N(0; 0, S)` for a sensor at `sensor`.
pub fn detection_probability(x: &DVector<f64>, sensor: &DVector<f64>, scn: &Scenario) -> Result<f64> {
    scn.detection_profile(sensor)?.eval(x)
}

/// Measurement set for one scan. Each target is detected independently with
/// probability `p_D`; a detected target returns `z ~ N(H x, R)`. Clutter is a
/// Poisson number of points uniform over the clutter region.
///
/// Every target consumes the same number of draws whether or not it is
/// detected, so the detection stream stays aligned across sensor paths.
pub fn generate_measurements(
    truth: &TruthState,
    det: &DetectionProfile,
    meas: &MeasModel,
    rng_detect: &mut RngStream,
    rng_clutter: &mut RngStream,
) -> Result<PointPattern> {
    let h = &meas.observation;
    let r_sqrt = psd_sqrt(&meas.noise);
    let mut out = PointPattern::empty(meas.meas_dim());
    for (_, x) in &truth.live {
        let u: f64 = rng_detect.random();
        let z = sample_gaussian(rng_detect, &(h * x), &r_sqrt);
        if u < det.eval(x)? {
            out.push(z)?;
        }
    }
    let region = &meas.clutter_region;
    let n_clutter = sample_poisson_count(rng_clutter, meas.expected_clutter());
    for _ in 0..n_clutter {
        let z = DVector::from_fn(region.dim(), |i, _| {
            region.lo[i] + rng_clutter.random::<f64>() * (region.hi[i] - region.lo[i])
        });
        out.push(z)?;
    }
    Ok(out)
}

/// A candidate sensor move.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    /// 0 is "stay"; then ring `radial = 1` for every angle, then ring 2, ...
    pub index: usize,
    pub radial: usize,
    pub angular: usize,
    pub position: DVector<f64>,
}

/// All admissible sensor positions around `s_prev`: the stay option once,
/// followed by every (ring, angle) pair in ring-major order.
pub fn action_positions(s_prev: &DVector<f64>, grid: &ActionGrid) -> Vec<Action> {
    let mut out = vec![Action {
        index: 0,
        radial: 0,
        angular: 0,
        position: s_prev.clone(),
    }];
    let dtheta = 2.0 * std::f64::consts::PI / grid.angular_steps as f64;
    for j in 1..=grid.radial_steps {
        for l in 0..grid.angular_steps {
            let r = j as f64 * grid.radial_step;
            let theta = l as f64 * dtheta;
            let position = DVector::from_column_slice(&[s_prev[0] + r * theta.cos(), s_prev[1] + r * theta.sin()]);
            out.push(Action {
                index: out.len(),
                radial: j,
                angular: l,
                position,
            });
        }
    }
    out
}
