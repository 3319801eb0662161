//! Sensor control: score every candidate move by the Cauchy-Schwarz
//! divergence between the predicted intensity and the posterior it would
//! produce under ideal measurements, then take the best.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{csd_poisson_gm, PoissonModel};
use crate::error::{Error, Result};
use crate::gaussmix::GaussianMixture;
use crate::gmphd::{extract_states, phd_update};
use crate::pointprocess::PointPattern;
use crate::rng::RngStream;
use crate::scenario::{action_positions, Scenario};

/// Weight a predicted component needs to produce an ideal measurement.
pub const IDEAL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Maximize the divergence reward.
    #[default]
    Cs,
    /// Uniform over in-area candidates.
    Random,
    /// Never move.
    Stay,
}

#[derive(Debug, Clone)]
pub struct ActionEvaluation {
    pub action_index: usize,
    pub candidate_position: DVector<f64>,
    /// `-inf` exactly when the candidate lies outside the area.
    pub reward: f64,
    pub posterior_preview: Option<GaussianMixture>,
}

/// Noise-free, clutter-free measurements `H m` of every confidently present
/// predicted component.
pub fn ideal_measurements(predicted: &GaussianMixture, h: &DMatrix<f64>) -> PointPattern {
    let states = extract_states(predicted, IDEAL_THRESHOLD);
    let points = states.iter().map(|m| h * m).collect();
    PointPattern::from_points(h.nrows(), points).expect("projected means share a dimension")
}

fn evaluate(
    position: &DVector<f64>,
    predicted: &GaussianMixture,
    z_star: &PointPattern,
    scn: &Scenario,
) -> Result<(f64, Option<GaussianMixture>)> {
    if !scn.in_area(position) {
        return Ok((f64::NEG_INFINITY, None));
    }
    let det = scn.detection_profile(position)?;
    let post = phd_update(predicted, z_star, &det, &scn.meas)?.posterior;
    let r = csd_poisson_gm(
        &PoissonModel::new(predicted.clone(), scn.unit),
        &PoissonModel::new(post.clone(), scn.unit),
    )?;
    Ok((r, Some(post)))
}

/// `(K/2) ||v_pred - v_post(a, Z*)||^2` for a sensor at `a`, or `-inf` when
/// `a` leaves the area.
pub fn reward(a: &DVector<f64>, predicted: &GaussianMixture, z_star: &PointPattern, scn: &Scenario) -> Result<f64> {
    evaluate(a, predicted, z_star, scn).map(|(r, _)| r)
}

/// Scores every candidate around `s_prev` and returns the best position with
/// all evaluations in action order. Ties go to the earlier action, which is
/// the smaller displacement and then the smaller angle.
pub fn select_action(
    predicted: &GaussianMixture,
    s_prev: &DVector<f64>,
    scn: &Scenario,
) -> Result<(DVector<f64>, Vec<ActionEvaluation>)> {
    let z_star = ideal_measurements(predicted, &scn.meas.observation);
    let actions = action_positions(s_prev, &scn.config.actions);
    let evals = actions
        .par_iter()
        .map(|a| {
            let (reward, posterior_preview) = evaluate(&a.position, predicted, &z_star, scn)?;
            Ok(ActionEvaluation {
                action_index: a.index,
                candidate_position: a.position.clone(),
                reward,
                posterior_preview,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<&ActionEvaluation> = None;
    for e in &evals {
        if e.reward > f64::NEG_INFINITY && best.is_none_or(|b| e.reward > b.reward) {
            best = Some(e);
        }
    }
    let best = best.ok_or(Error::NoAdmissibleAction)?;
    Ok((best.candidate_position.clone(), evals))
}

/// Next sensor position under `policy`. Returns the chosen action index and,
/// for the divergence policy, its reward.
pub fn choose_position(
    policy: Policy,
    predicted: &GaussianMixture,
    s_prev: &DVector<f64>,
    scn: &Scenario,
    rng: &mut RngStream,
) -> Result<(DVector<f64>, usize, Option<f64>)> {
    match policy {
        Policy::Cs => {
            let (pos, evals) = select_action(predicted, s_prev, scn)?;
            let best = evals
                .iter()
                .find(|e| e.candidate_position == pos)
                .expect("chosen action is evaluated");
            Ok((pos, best.action_index, Some(best.reward)))
        }
        Policy::Stay => Ok((s_prev.clone(), 0, None)),
        Policy::Random => {
            let admissible: Vec<_> = action_positions(s_prev, &scn.config.actions)
                .into_iter()
                .filter(|a| scn.in_area(&a.position))
                .collect();
            if admissible.is_empty() {
                return Err(Error::NoAdmissibleAction);
            }
            let a = &admissible[rng.random_range(0..admissible.len())];
            Ok((a.position.clone(), a.index, None))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussmix::Gaussian;
    use crate::gmphd::{phd_predict, GmPhdState};
    use crate::scenario::ScenarioConfig;

    fn scn() -> Scenario {
        ScenarioConfig::default().build().unwrap()
    }

    fn comp(w: f64, x: f64, y: f64) -> (f64, Gaussian) {
        (
            w,
            Gaussian::diagonal(&[x, y, 0.0, 0.0], &[100.0, 100.0, 4.0, 4.0]).unwrap(),
        )
    }

    fn wide(w: f64, x: f64, y: f64) -> (f64, Gaussian) {
        (
            w,
            Gaussian::diagonal(&[x, y, 0.0, 0.0], &[2500.0, 2500.0, 25.0, 25.0]).unwrap(),
        )
    }

    #[test]
    fn ideal_measurement_examples() {
        let h = crate::scenario::position_observation();
        let one = GaussianMixture::from_components(4, [comp(0.95, 10.0, 20.0)]).unwrap();
        let z = ideal_measurements(&one, &h);
        assert_eq!(z.points(), &[DVector::from_column_slice(&[10.0, 20.0])]);
        let light = GaussianMixture::from_components(4, [comp(0.5, 1.0, 1.0), comp(0.3, 2.0, 2.0)]).unwrap();
        assert!(ideal_measurements(&light, &h).is_empty());
        let two = GaussianMixture::from_components(4, [comp(0.9, 1.0, 1.0), comp(0.8, 2.0, 2.0)]).unwrap();
        assert_eq!(ideal_measurements(&two, &h).len(), 2);
    }

    #[test]
    fn distant_sensor_earns_nothing() {
        let mut cfg = ScenarioConfig::default();
        cfg.area.lo = vec![-1e9, -1e9];
        cfg.area.hi = vec![1e9, 1e9];
        let scn = cfg.build().unwrap();
        let pred = GaussianMixture::from_components(4, [comp(0.9, 100.0, 100.0)]).unwrap();
        let far = DVector::from_column_slice(&[1e8, 1e8]);
        let r = reward(&far, &pred, &PointPattern::empty(2), &scn).unwrap();
        assert!(r.abs() < 1e-9);
    }

    #[test]
    fn outside_area_is_negative_infinity() {
        let scn = scn();
        let pred = GaussianMixture::from_components(4, [comp(0.9, 100.0, 100.0)]).unwrap();
        let out = DVector::from_column_slice(&[-1.0, 500.0]);
        assert_eq!(
            reward(&out, &pred, &PointPattern::empty(2), &scn).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn equal_rewards_choose_stay() {
        let scn = scn();
        // no intensity at all: every in-area reward is zero
        let pred = GaussianMixture::empty(4);
        let s = DVector::from_column_slice(&[500.0, 500.0]);
        let (pos, evals) = select_action(&pred, &s, &scn).unwrap();
        assert_eq!(pos, s);
        assert_eq!(evals.len(), 17);
        assert!(evals.iter().all(|e| e.reward == 0.0));
    }

    #[test]
    fn corner_leaves_single_candidate() {
        let mut cfg = ScenarioConfig::default();
        cfg.sensor_start = vec![0.0, 0.0];
        cfg.actions.radial_steps = 1;
        cfg.actions.angular_steps = 2;
        let scn = cfg.build().unwrap();
        let pred = GaussianMixture::from_components(4, [wide(0.9, 800.0, 800.0)]).unwrap();
        let (pos, evals) = select_action(&pred, &scn.sensor_start, &scn).unwrap();
        // only "stay" and the +x move are inside; the move is closer to the target
        assert_eq!(evals.iter().filter(|e| e.reward.is_finite()).count(), 2);
        assert_eq!(pos, DVector::from_column_slice(&[50.0, 0.0]));
    }

    #[test]
    fn first_step_prefers_moving_toward_prior_mass() {
        let scn = scn();
        let pred = phd_predict(&GmPhdState::empty(4), &scn.motion, &scn.birth).unwrap();
        let (_, evals) = select_action(&pred, &scn.sensor_start, &scn).unwrap();
        let centre = DVector::from_column_slice(&[500.0, 500.0]);
        let near = evals.iter().filter(|e| e.reward.is_finite()).min_by(|a, b| {
            (&a.candidate_position - &centre)
                .norm()
                .total_cmp(&(&b.candidate_position - &centre).norm())
        });
        let far = evals.iter().filter(|e| e.reward.is_finite()).max_by(|a, b| {
            (&a.candidate_position - &centre)
                .norm()
                .total_cmp(&(&b.candidate_position - &centre).norm())
        });
        assert!(near.unwrap().reward > far.unwrap().reward);
        assert!(evals.iter().filter(|e| e.reward.is_finite()).all(|e| e.reward >= 0.0));
    }

    #[test]
    fn uncertain_target_reward_falls_with_distance() {
        let mut cfg = ScenarioConfig::default();
        cfg.area.lo = vec![-1e5, -1e5];
        cfg.area.hi = vec![1e5, 1e5];
        let scn = cfg.build().unwrap();
        let pred = GaussianMixture::from_components(4, [wide(0.9, 500.0, 500.0)]).unwrap();
        let z = ideal_measurements(&pred, &scn.meas.observation);
        assert_eq!(z.len(), 1);
        for l in 0..8 {
            let th = l as f64 * std::f64::consts::FRAC_PI_4;
            let mut last = f64::INFINITY;
            for r in 0..30 {
                let d = r as f64 * 100.0;
                let a = DVector::from_column_slice(&[500.0 + d * th.cos(), 500.0 + d * th.sin()]);
                let v = reward(&a, &pred, &z, &scn).unwrap();
                assert!(v >= 0.0 && v <= last + 1e-15, "ray {l} at {d}: {v} after {last}");
                last = v;
            }
        }
    }
}
