use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use ppdiv::gaussmix::{peak_normalizer, prune_merge, Gaussian, GaussianMixture, PruneConfig};
use ppdiv::gmphd::{
    extract_states, phd_predict, phd_update, BirthSpawnModel, DetectionProfile, DetectionTerm, GmPhdState, MeasModel,
    MotionModel, Region,
};
use ppdiv::pointprocess::PointPattern;
use ppdiv::rng::RngStream;
use ppdiv::scenario::{cv_process_noise, cv_transition, position_observation};
use rand::Rng;
use rand_distr::StandardNormal;

fn normal(x: &DVector<f64>, m: &DVector<f64>, p: &DMatrix<f64>) -> f64 {
    let d = x - m;
    let inv = p.clone().try_inverse().unwrap();
    let q = (d.transpose() * inv * &d)[(0, 0)];
    (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powi(x.len() as i32) * p.determinant()).sqrt()
}

fn random_spd(rng: &mut RngStream, d: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&a * a.transpose() + DMatrix::identity(d, d)) * scale
}

fn random_vec(rng: &mut RngStream, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

type Comp = (f64, DVector<f64>, DMatrix<f64>);

/// The update written out term by term with explicit inverses, full-state
/// detection Gaussians and the constant term in slot 0.
fn reference_update(
    pred: &[Comp],
    z: &[DVector<f64>],
    w0: f64,
    terms: &[(f64, DVector<f64>, DMatrix<f64>)],
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    kappa: f64,
) -> Vec<Comp> {
    let n = pred[0].1.len();
    let eye = DMatrix::identity(n, n);
    let p_d = |x: &DVector<f64>| w0 + terms.iter().map(|(w, c, s)| w * normal(x, c, s)).sum::<f64>();
    // (w_ij, m_ij, P_ij) for every i and j = 0..J_D
    let mut inter: Vec<Comp> = Vec::new();
    for (w, m, p) in pred {
        inter.push((w * w0, m.clone(), p.clone()));
        for (wd, c, s) in terms {
            let q = normal(c, m, &(p + s));
            let k = p * (p + s).try_inverse().unwrap();
            inter.push((w * wd * q, m + &k * (c - m), (&eye - &k) * p));
        }
    }
    let total: f64 = pred.iter().map(|c| c.0).sum();
    let t = total - inter.iter().map(|c| c.0).sum::<f64>();
    let w_mu: Vec<f64> = pred.iter().map(|(w, m, _)| (1.0 - p_d(m)) * w).collect();
    let sum_mu: f64 = w_mu.iter().sum();
    let mut out: Vec<Comp> = pred
        .iter()
        .zip(&w_mu)
        .map(|((_, m, p), wm)| (wm * t / sum_mu, m.clone(), p.clone()))
        .collect();
    for zz in z {
        let mut branch = Vec::new();
        for (w, m, p) in &inter {
            let s = h * p * h.transpose() + r;
            let q = normal(zz, &(h * m), &s);
            let k = p * h.transpose() * s.try_inverse().unwrap();
            branch.push((w * q, m + &k * (zz - h * m), (&eye - &k * h) * p));
        }
        let denom = kappa + branch.iter().map(|c| c.0).sum::<f64>();
        out.extend(branch.into_iter().map(|(w, m, p)| (w / denom, m, p)));
    }
    out
}

fn same_components(got: &GaussianMixture, want: &[Comp], tol: f64) {
    assert_eq!(got.len(), want.len());
    let mut used = vec![false; want.len()];
    for c in got.iter() {
        let hit = want.iter().enumerate().position(|(i, (w, m, p))| {
            !used[i]
                && (c.weight - w).abs() <= tol * w.abs().max(1e-300)
                && (c.gaussian.mean() - m).amax() <= tol * m.amax().max(1.0)
                && (c.gaussian.cov() - p).amax() <= tol * p.amax()
        });
        let i = hit.unwrap_or_else(|| panic!("no reference component matches {c:?}"));
        used[i] = true;
    }
}

#[test]
fn identity_projection_matches_printed_update() {
    let mut rng = RngStream::new(41, 0);
    for trial in 0..20 {
        let n = 4;
        let pred: Vec<Comp> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.1..1.5),
                    random_vec(&mut rng, n, 3.0),
                    random_spd(&mut rng, n, 2.0),
                )
            })
            .collect();
        let terms: Vec<(f64, DVector<f64>, DMatrix<f64>)> = (0..2)
            .map(|_| {
                let s = random_spd(&mut rng, n, 4.0);
                let w = 0.35 * peak_normalizer(&s).unwrap();
                (w, random_vec(&mut rng, n, 3.0), s)
            })
            .collect();
        let w0 = 0.25;
        let h = DMatrix::from_fn(2, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = random_spd(&mut rng, 2, 0.5);
        let z: Vec<DVector<f64>> = (0..3).map(|_| random_vec(&mut rng, 2, 3.0)).collect();
        let region = Region::new(vec![-1e3, -1e3], vec![1e3, 1e3]).unwrap();
        let kappa_rate = if trial % 2 == 0 { 0.0 } else { 1e-3 };
        let meas = MeasModel::new(h.clone(), r.clone(), kappa_rate, region).unwrap();
        let det = DetectionProfile::new(
            w0,
            terms
                .iter()
                .map(|(w, c, s)| DetectionTerm {
                    weight: *w,
                    center: c.clone(),
                    shape: s.clone(),
                    projection: DMatrix::identity(n, n),
                })
                .collect(),
        )
        .unwrap();
        let gm = GaussianMixture::from_components(
            n,
            pred.iter()
                .map(|(w, m, p)| (*w, Gaussian::new(m.clone(), p.clone()).unwrap())),
        )
        .unwrap();
        let zs = PointPattern::from_points(2, z.clone()).unwrap();
        let got = phd_update(&gm, &zs, &det, &meas).unwrap();
        let want = reference_update(&pred, &z, w0, &terms, &h, &r, kappa_rate);
        same_components(&got.posterior, &want, 1e-8);
    }
}

#[test]
fn measurement_order_does_not_matter() {
    let mut rng = RngStream::new(42, 0);
    let gm = GaussianMixture::from_components(
        4,
        (0..4).map(|_| {
            (
                rng.random_range(0.2..1.0),
                Gaussian::new(random_vec(&mut rng, 4, 50.0), random_spd(&mut rng, 4, 20.0)).unwrap(),
            )
        }),
    )
    .unwrap();
    let meas = MeasModel::new(
        position_observation(),
        DMatrix::identity(2, 2) * 9.0,
        2e-5,
        Region::new(vec![-500.0, -500.0], vec![500.0, 500.0]).unwrap(),
    )
    .unwrap();
    let det = DetectionProfile::sensor_centered(
        DVector::from_column_slice(&[10.0, -20.0]),
        DMatrix::identity(2, 2) * 1e4,
        position_observation(),
    )
    .unwrap();
    let z: Vec<DVector<f64>> = (0..5).map(|_| random_vec(&mut rng, 2, 50.0)).collect();
    let forward = phd_update(&gm, &PointPattern::from_points(2, z.clone()).unwrap(), &det, &meas)
        .unwrap()
        .posterior;
    let mut rev = z;
    rev.reverse();
    rev.swap(0, 2);
    let shuffled = phd_update(&gm, &PointPattern::from_points(2, rev).unwrap(), &det, &meas)
        .unwrap()
        .posterior;
    let want: Vec<Comp> = forward
        .iter()
        .map(|c| (c.weight, c.gaussian.mean().clone(), c.gaussian.cov().clone()))
        .collect();
    same_components(&shuffled, &want, 1e-12);
}

/// Perfect detection without clutter: one extracted state per step, and the
/// normalized position error against the truth behaves like a chi-square
/// with two degrees of freedom.
#[test]
fn perfect_detection_tracks_like_a_kalman_filter() {
    let f = cv_transition(1.0);
    let q = cv_process_noise(1.0);
    let h = position_observation();
    let motion = MotionModel::new(f.clone(), q.clone(), 1.0).unwrap();
    let meas = MeasModel::new(
        h.clone(),
        DMatrix::identity(2, 2) * 9.0,
        0.0,
        Region::new(vec![-1e6, -1e6], vec![1e6, 1e6]).unwrap(),
    )
    .unwrap();
    let det = DetectionProfile::constant(1.0).unwrap();
    let birth = BirthSpawnModel::births_only(GaussianMixture::empty(4));
    let keep = PruneConfig {
        truncation_threshold: 1e-12,
        merge_threshold: 0.0,
        max_components: 10,
    };
    let q_sqrt = q.clone().cholesky().unwrap().l();

    let mut rng = RngStream::new(43, 0);
    let mut nees_sum = 0.0;
    let mut count = 0;
    for _ in 0..10 {
        let mut x = DVector::from_column_slice(&[0.0, 0.0, 5.0, -3.0]);
        let prior = Gaussian::new(
            x.clone(),
            DMatrix::from_diagonal(&DVector::from_column_slice(&[25.0, 25.0, 4.0, 4.0])),
        )
        .unwrap();
        let mut state = GmPhdState {
            intensity: GaussianMixture::single(1.0, prior).unwrap(),
            timestep: 0,
        };
        for k in 1..=40 {
            x = &f * &x + &q_sqrt * random_vec(&mut rng, 4, 1.0);
            let z = &h * &x + random_vec(&mut rng, 2, 3.0);
            let pred = phd_predict(&state, &motion, &birth).unwrap();
            let post = prune_merge(
                &phd_update(&pred, &PointPattern::from_points(2, vec![z]).unwrap(), &det, &meas)
                    .unwrap()
                    .posterior,
                &keep,
            );
            let est = extract_states(&post, 0.5);
            assert_eq!(est.len(), 1, "step {k}");
            assert!((post.mass() - 1.0).abs() < 1e-9);
            let c = &post.components()[0];
            let e = (&h * (c.gaussian.mean() - &x)).clone_owned();
            let p = &h * c.gaussian.cov() * h.transpose();
            nees_sum += (e.transpose() * p.try_inverse().unwrap() * &e)[(0, 0)];
            count += 1;
            state = GmPhdState {
                intensity: post,
                timestep: k,
            };
        }
    }
    let mean_nees = nees_sum / count as f64;
    // 400 samples of a chi-square(2): the mean has standard error 0.1
    assert!((1.5..2.5).contains(&mean_nees), "mean NEES {mean_nees}");
}

proptest! {
    #[test]
    fn prediction_mass_balance(ws in prop::collection::vec(0.0..2.0f64, 0..6), ps in 0.0..=1.0f64, wb in 0.0..1.0f64, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let prior = GaussianMixture::from_components(
            4,
            ws.iter().map(|&w| (w, Gaussian::new(random_vec(&mut rng, 4, 10.0), random_spd(&mut rng, 4, 3.0)).unwrap())),
        ).unwrap();
        let birth = GaussianMixture::single(wb, Gaussian::new(random_vec(&mut rng, 4, 10.0), random_spd(&mut rng, 4, 3.0)).unwrap()).unwrap();
        let motion = MotionModel::new(cv_transition(1.0), cv_process_noise(1.0), ps).unwrap();
        let state = GmPhdState { intensity: prior.clone(), timestep: 3 };
        let pred = phd_predict(&state, &motion, &BirthSpawnModel::births_only(birth.clone())).unwrap();
        prop_assert_eq!(pred.len(), prior.len() + 1);
        prop_assert!((pred.mass() - (ps * prior.mass() + birth.mass())).abs() < 1e-12);
    }
}
