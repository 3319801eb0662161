//! Gaussian-mixture PHD filter with a constant-plus-Gaussian detection
//! probability.
//!
//! The detection probability is
//! `p_D(x) = w0 + Σ_j w_j N(D_j x; c_j, S_j)`, where `D_j` projects the state
//! into the space in which the sensor's detection profile is Gaussian. With
//! `D_j = I` the update below is the textbook recursion with a Gaussian-mixture
//! detection probability; the scenario uses `D_j = H` so that detection
//! depends on position only.
//!
//! The missed-detection part of the posterior keeps the predicted Gaussians and
//! redistributes the missed mass
//! `T = Σ_i w_i - Σ_i Σ_j w_i w_j q_ij` in proportion to
//! `(1 - p_D(m_i)) w_i`, so that every weight stays nonnegative.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergence::log_sum_exp;
use crate::error::{check_dim, Error, Result};
use crate::gaussmix::{log_normal, peak_normalizer, symmetrize, Gaussian, GaussianMixture};
use crate::pointprocess::PointPattern;

/// Below this, the missed-detection weights are set to zero instead of
/// evaluating `0/0`.
const MISSED_EPS: f64 = 1e-12;
/// Largest tolerated excess of `p_D` over one (or of `Σ w q` over `Σ w`).
const PD_TOL: f64 = 1e-9;

/// Single-target motion: `x' ~ N(F x, Q)`, survival probability `p_S`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub transition: DMatrix<f64>,
    pub process_noise: DMatrix<f64>,
    pub survival: f64,
}

impl MotionModel {
    pub fn new(transition: DMatrix<f64>, process_noise: DMatrix<f64>, survival: f64) -> Result<Self> {
        if !transition.is_square() || transition.shape() != process_noise.shape() {
            return Err(Error::InvalidParameter {
                name: "motion",
                reason: "F and Q must be square and equal-sized".into(),
            });
        }
        if !(0.0..=1.0).contains(&survival) {
            return Err(Error::InvalidParameter {
                name: "survival",
                reason: format!("{survival} not in [0, 1]"),
            });
        }
        let process_noise = symmetrize(&process_noise);
        let min_eig = process_noise.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-9 * process_noise.amax().max(1.0) {
            return Err(Error::InvalidParameter {
                name: "process_noise",
                reason: "not positive semidefinite".into(),
            });
        }
        Ok(Self {
            transition,
            process_noise,
            survival,
        })
    }

    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }
}

/// Spawned-target term `w N(x; F_b ζ + d_b, Q_b)` attached to each parent ζ.
#[derive(Debug, Clone, PartialEq)]
pub struct SpawnTerm {
    pub weight: f64,
    pub transition: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub noise: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirthSpawnModel {
    pub birth: GaussianMixture,
    pub spawns: Vec<SpawnTerm>,
}

impl BirthSpawnModel {
    pub fn births_only(birth: GaussianMixture) -> Self {
        Self {
            birth,
            spawns: Vec::new(),
        }
    }
}

/// Axis-aligned box in measurement space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.iter().zip(&hi).any(|(l, h)| !(h > l)) {
            return Err(Error::InvalidParameter {
                name: "region",
                reason: "needs lo < hi on every axis".into(),
            });
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        z.len() == self.lo.len()
            && z.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }
}

/// Linear-Gaussian measurement model with uniform Poisson clutter.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasModel {
    pub observation: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    /// Expected clutter points per unit measurement-space volume.
    pub clutter_rate: f64,
    pub clutter_region: Region,
}

impl MeasModel {
    pub fn new(
        observation: DMatrix<f64>,
        noise: DMatrix<f64>,
        clutter_rate: f64,
        clutter_region: Region,
    ) -> Result<Self> {
        check_dim(observation.nrows(), noise.nrows())?;
        check_dim(observation.nrows(), clutter_region.dim())?;
        if !noise.is_square() {
            return Err(Error::InvalidParameter {
                name: "noise",
                reason: "R must be square".into(),
            });
        }
        let noise = symmetrize(&noise);
        if noise.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        if !(clutter_rate >= 0.0 && clutter_rate.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "clutter_rate",
                reason: format!("{clutter_rate} must be >= 0"),
            });
        }
        Ok(Self {
            observation,
            noise,
            clutter_rate,
            clutter_region,
        })
    }

    pub fn meas_dim(&self) -> usize {
        self.observation.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.observation.ncols()
    }

    /// Clutter intensity `κ(z)`.
    pub fn clutter_intensity(&self, z: &DVector<f64>) -> f64 {
        if self.clutter_region.contains(z) {
            self.clutter_rate
        } else {
            0.0
        }
    }

    /// Expected clutter count over the region.
    pub fn expected_clutter(&self) -> f64 {
        self.clutter_rate * self.clutter_region.volume()
    }
}

/// One Gaussian term `w N(D x; c, S)` of a detection profile.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTerm {
    pub weight: f64,
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub projection: DMatrix<f64>,
}

/// State-dependent detection probability `w0 + Σ_j w_j N(D_j x; c_j, S_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionProfile {
    constant: f64,
    terms: Vec<DetectionTerm>,
}

impl DetectionProfile {
    /// Validates the profile. The bound `w0 + Σ_j w_j max N(.; c_j, S_j) <= 1`
    /// guarantees `p_D <= 1` everywhere.
    pub fn new(constant: f64, terms: Vec<DetectionTerm>) -> Result<Self> {
        if !(0.0..=1.0).contains(&constant) {
            return Err(Error::InvalidParameter {
                name: "detection.constant",
                reason: format!("{constant} not in [0, 1]"),
            });
        }
        let mut bound = constant;
        for t in &terms {
            check_dim(t.center.len(), t.projection.nrows())?;
            check_dim(t.center.len(), t.shape.nrows())?;
            if !(t.weight >= 0.0 && t.weight.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "detection.weight",
                    reason: format!("{}", t.weight),
                });
            }
            bound += t.weight / peak_normalizer(&t.shape)?;
        }
        if bound > 1.0 + PD_TOL {
            return Err(Error::InvalidParameter {
                name: "detection",
                reason: format!("peak detection probability bound {bound} exceeds one"),
            });
        }
        let terms = terms
            .into_iter()
            .map(|t| DetectionTerm {
                shape: symmetrize(&t.shape),
                ..t
            })
            .collect();
        Ok(Self { constant, terms })
    }

    /// `p_D ≡ p`.
    pub fn constant(p: f64) -> Result<Self> {
        Self::new(p, Vec::new())
    }

    /// `p_D(x) = N(s; D x, S) / N(0; 0, S)`: one at `D x = s`, decaying with
    /// the Mahalanobis distance to the sensor.
    pub fn sensor_centered(sensor: DVector<f64>, shape: DMatrix<f64>, projection: DMatrix<f64>) -> Result<Self> {
        let weight = peak_normalizer(&shape)?;
        Self::new(
            0.0,
            vec![DetectionTerm {
                weight,
                center: sensor,
                shape,
                projection,
            }],
        )
    }

    pub fn constant_term(&self) -> f64 {
        self.constant
    }

    pub fn terms(&self) -> &[DetectionTerm] {
        &self.terms
    }

    /// Detection probability at state `x`, clamped into `[0, 1]`.
    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        let mut p = self.constant;
        for t in &self.terms {
            check_dim(t.projection.ncols(), x.len())?;
            if t.weight > 0.0 {
                p += (t.weight.ln() + log_normal(&(&t.projection * x), &t.center, &t.shape)?).exp();
            }
        }
        Ok(p.clamp(0.0, 1.0))
    }
}

/// Posterior intensity after the update at `timestep`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmPhdState {
    pub intensity: GaussianMixture,
    pub timestep: usize,
}

impl GmPhdState {
    pub fn empty(dim: usize) -> Self {
        Self {
            intensity: GaussianMixture::empty(dim),
            timestep: 0,
        }
    }
}

/// Predicted intensity: survivors, spawns, then births.
pub fn phd_predict(state: &GmPhdState, motion: &MotionModel, birth: &BirthSpawnModel) -> Result<GaussianMixture> {
    let prior = &state.intensity;
    let dim = motion.dim();
    check_dim(dim, prior.dim())?;
    check_dim(dim, birth.birth.dim())?;
    let f = &motion.transition;
    let mut out = GaussianMixture::empty(dim);
    for c in prior.iter() {
        let g = &c.gaussian;
        let cov = &motion.process_noise + f * g.cov() * f.transpose();
        out.push(motion.survival * c.weight, Gaussian::new(f * g.mean(), cov)?)?;
    }
    for c in prior.iter() {
        let g = &c.gaussian;
        for s in &birth.spawns {
            check_dim(dim, s.offset.len())?;
            let mean = &s.transition * g.mean() + &s.offset;
            let cov = &s.noise + &s.transition * g.cov() * s.transition.transpose();
            out.push(c.weight * s.weight, Gaussian::new(mean, cov)?)?;
        }
    }
    for c in birth.birth.iter() {
        out.push(c.weight, c.gaussian.clone())?;
    }
    Ok(out)
}

/// Posterior intensity together with the quantities of its mass balance.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutput {
    pub posterior: GaussianMixture,
    /// `T = Σ_i w_i - Σ_i Σ_j w_i w_j q_ij`, the expected number of missed targets.
    pub missed_mass_target: f64,
    /// Mass actually carried by the missed-detection components.
    pub missed_mass: f64,
    /// Mass contributed by each measurement, in the order of `Z`.
    pub detection_masses: Vec<f64>,
}

/// A predicted component conditioned on one detection-profile term, with its
/// measurement-update quantities precomputed.
struct Hypothesis {
    log_weight: f64,
    mean: DVector<f64>,
    predicted_meas: DVector<f64>,
    innovation_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    gain: DMatrix<f64>,
    posterior_cov: DMatrix<f64>,
    log_det_half: f64,
}

/// Conditions `N(m, P)` on the detection term: returns `(q, m', P')` with
/// `q = N(c; D m, D P D' + S)`, `m' = m + K (c - D m)`, `P' = (I - K D) P`.
fn condition_on_term(g: &Gaussian, t: &DetectionTerm) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let d = &t.projection;
    check_dim(d.ncols(), g.dim())?;
    let s = d * g.cov() * d.transpose() + &t.shape;
    let log_q = log_normal(&t.center, &(d * g.mean()), &s)?;
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    // K = P D' S^-1
    let gain = chol.solve(&(d * g.cov())).transpose();
    let mean = g.mean() + &gain * (&t.center - d * g.mean());
    let eye = DMatrix::identity(g.dim(), g.dim());
    let cov = symmetrize(&((eye - &gain * d) * g.cov()));
    Ok((log_q, mean, cov))
}

/// Bayes update of a predicted intensity with measurement set `z`.
pub fn phd_update(
    predicted: &GaussianMixture,
    z: &PointPattern,
    det: &DetectionProfile,
    meas: &MeasModel,
) -> Result<UpdateOutput> {
    let dim = predicted.dim();
    check_dim(meas.state_dim(), dim)?;
    check_dim(meas.meas_dim(), z.dim())?;
    let h = &meas.observation;

    let mut hyps = Vec::new();
    let mut detected_expectation = 0.0;
    let mut missed_seed = Vec::with_capacity(predicted.len());
    for c in predicted.iter() {
        let g = &c.gaussian;
        let p_at_mean = det.eval(g.mean())?;
        missed_seed.push(((1.0 - p_at_mean) * c.weight).max(0.0));
        if c.weight <= 0.0 {
            continue;
        }
        let mut branches: Vec<(f64, DVector<f64>, DMatrix<f64>)> = Vec::new();
        if det.constant > 0.0 {
            // j = 0: q = 1, mean and covariance unchanged
            branches.push((det.constant.ln(), g.mean().clone(), g.cov().clone()));
        }
        for t in det.terms.iter().filter(|t| t.weight > 0.0) {
            let (log_q, m, p) = condition_on_term(g, t)?;
            branches.push((t.weight.ln() + log_q, m, p));
        }
        for (log_wq, m, p) in branches {
            let log_weight = c.weight.ln() + log_wq;
            detected_expectation += log_weight.exp();
            let s = h * &p * h.transpose() + &meas.noise;
            let innovation_chol = s.clone().cholesky().ok_or(Error::SingularInnovation)?;
            let gain = innovation_chol.solve(&(h * &p)).transpose();
            let eye = DMatrix::identity(dim, dim);
            let posterior_cov = symmetrize(&((eye - &gain * h) * &p));
            let log_det_half: f64 = (0..s.nrows()).map(|i| innovation_chol.l_dirty()[(i, i)].ln()).sum();
            hyps.push(Hypothesis {
                log_weight,
                predicted_meas: h * &m,
                mean: m,
                innovation_chol,
                gain,
                posterior_cov,
                log_det_half,
            });
        }
    }

    let total = predicted.mass();
    let missed_target = total - detected_expectation;
    if missed_target < -PD_TOL {
        return Err(Error::InvalidDetectionProfile(missed_target));
    }
    let missed_target = missed_target.max(0.0);
    let seed_total: f64 = missed_seed.iter().sum();

    let mut posterior = GaussianMixture::empty(dim);
    let mut missed_mass = 0.0;
    for (c, seed) in predicted.iter().zip(&missed_seed) {
        let w = if missed_target <= MISSED_EPS || seed_total <= MISSED_EPS {
            0.0
        } else {
            seed * missed_target / seed_total
        };
        missed_mass += w;
        posterior.push(w, c.gaussian.clone())?;
    }

    let m_dim = meas.meas_dim() as f64;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut detection_masses = Vec::with_capacity(z.len());
    for zi in z.iter() {
        let logs: Vec<f64> = hyps
            .iter()
            .map(|hy| {
                let innov = zi - &hy.predicted_meas;
                let y = hy
                    .innovation_chol
                    .l_dirty()
                    .solve_lower_triangular(&innov)
                    .expect("factor is nonsingular");
                hy.log_weight - 0.5 * y.norm_squared() - hy.log_det_half - 0.5 * m_dim * ln_2pi
            })
            .collect();
        let kappa = meas.clutter_intensity(zi);
        let lse = log_sum_exp(&logs);
        // weights = exp(l) / (κ + Σ exp(l)), evaluated relative to the largest term
        let log_denom = if kappa > 0.0 {
            log_sum_exp(&[kappa.ln(), lse])
        } else {
            lse
        };
        let mut mass = 0.0;
        for (hy, l) in hyps.iter().zip(&logs) {
            let w = if log_denom.is_finite() {
                (l - log_denom).exp()
            } else {
                0.0
            };
            mass += w;
            let mean = &hy.mean + &hy.gain * (zi - &hy.predicted_meas);
            posterior.push(w, Gaussian::new(mean, hy.posterior_cov.clone())?)?;
        }
        detection_masses.push(mass);
    }

    Ok(UpdateOutput {
        posterior,
        missed_mass_target: missed_target,
        missed_mass,
        detection_masses,
    })
}

/// Means of all components heavier than `threshold`.
pub fn extract_states(intensity: &GaussianMixture, threshold: f64) -> PointPattern {
    let points = intensity
        .iter()
        .filter(|c| c.weight > threshold)
        .map(|c| c.gaussian.mean().clone())
        .collect();
    PointPattern::from_points(intensity.dim(), points).expect("component means share the mixture dimension")
}
