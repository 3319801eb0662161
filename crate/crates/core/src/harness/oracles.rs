//! Independent numerical checks of the closed forms and the filter: grid
//! quadrature, Monte-Carlo estimates, a textbook Kalman filter and
//! brute-force assignment.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::divergence::{
    bhatt_poisson_gaussian, csd_poisson_gm, csd_poisson_mixture, csd_poisson_quadrature, hellinger_sq_quadrature, Grid,
    MixturePoissonModel, PoissonModel,
};
use crate::error::Result;
use crate::gaussmix::{
    mixture_inner, mixture_scale, prune_merge, Gaussian, GaussianMixture, HyperVolumeUnit, PruneConfig,
};
use crate::gmphd::{
    extract_states, phd_predict, phd_update, BirthSpawnModel, DetectionProfile, GmPhdState, MeasModel, MotionModel,
    Region,
};
use crate::metrics::optimal_assignment;
use crate::pointprocess::{mc_csd, mc_inner_product, psd_sqrt, sample_gaussian, PointPattern};
use crate::rng::{purpose, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ValidationLevel {
    Fast,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub name: String,
    /// Relative error, absolute error or |z|-score, as named by `measure`.
    pub measured: f64,
    pub tolerance: f64,
    pub measure: String,
    pub passed: bool,
}

impl OracleEntry {
    fn new(name: impl Into<String>, measure: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            measure: measure.into(),
            passed: measured < tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub level: ValidationLevel,
    pub entries: Vec<OracleEntry>,
    pub elapsed_secs: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

/// Random SPD matrix with eigenvalues roughly in `[0.3, 3]`.
fn random_cov<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| 0.6 * rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.3
}

/// A random `n`-component mixture in `d` dimensions with total weight `mass`.
pub fn random_mixture<R: Rng + ?Sized>(rng: &mut R, d: usize, n: usize, mass: f64) -> GaussianMixture {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut gm = GaussianMixture::empty(d);
    for w in raw {
        let mean = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let g = Gaussian::new(mean, random_cov(rng, d)).expect("random covariance is SPD");
        gm.push(mass * w / total, g).expect("positive weight");
    }
    gm
}

fn random_model<R: Rng + ?Sized>(rng: &mut R, d: usize, max_mass: f64) -> PoissonModel {
    let n = rng.random_range(1..=3);
    let mass = rng.random_range(0.3..max_mass);
    PoissonModel::unit_k(random_mixture(rng, d, n, mass))
}

fn grid_for(u: &GaussianMixture, v: &GaussianMixture) -> Result<Grid> {
    let cells = match u.dim() {
        1 => 4000,
        _ => 500,
    };
    Grid::covering(&[u, v], 8.0, cells)
}

/// Closed-form CS divergence against midpoint quadrature of `(K/2) ||u - v||^2`.
pub fn check_csd_quadrature(rng: &mut RngStream, d: usize, pairs: usize) -> Result<Vec<OracleEntry>> {
    let mut out = Vec::new();
    for i in 0..pairs {
        let (a, b) = (random_model(rng, d, 5.0), random_model(rng, d, 5.0));
        let grid = grid_for(&a.intensity, &b.intensity)?;
        let quad = csd_poisson_quadrature(
            &grid.sample(&a.intensity)?,
            &grid.sample(&b.intensity)?,
            grid.cell_volume(),
            a.unit,
        )?;
        let closed = csd_poisson_gm(&a, &b)?;
        out.push(OracleEntry::new(
            format!("csd_quadrature_d{d}_{i}"),
            "relative error",
            rel_err(closed, quad),
            1e-6,
        ));
    }
    Ok(out)
}

/// Closed-form CS divergence against the Monte-Carlo estimate built from
/// sampled point patterns and their densities.
pub fn check_csd_montecarlo(rng: &mut RngStream, pairs: usize, samples: usize) -> Result<Vec<OracleEntry>> {
    let mut out = Vec::new();
    for i in 0..pairs {
        let d = 1 + i % 2;
        let (a, b) = (random_model(rng, d, 2.0), random_model(rng, d, 2.0));
        let est = mc_csd(rng, &a, &b, samples)?;
        let closed = csd_poisson_gm(&a, &b)?;
        out.push(OracleEntry::new(
            format!("csd_montecarlo_{i}"),
            "|z|",
            est.z_score(closed).abs(),
            3.0,
        ));
    }
    Ok(out)
}

/// `<f, f> = exp(K <u, u> - 2 <u, 1>)` against Monte-Carlo.
pub fn check_self_inner_product(rng: &mut RngStream, models: usize, samples: usize) -> Result<Vec<OracleEntry>> {
    let mut out = Vec::new();
    for i in 0..models {
        let a = random_model(rng, 1 + i % 2, 2.0);
        let exact = (a.unit.value() * mixture_inner(&a.intensity, &a.intensity)? - 2.0 * a.mass()).exp();
        let est = mc_inner_product(rng, &a, &a, samples)?;
        out.push(OracleEntry::new(
            format!("self_inner_product_{i}"),
            "|z|",
            est.z_score(exact).abs(),
            3.0,
        ));
    }
    Ok(out)
}

/// Mixture-of-Poisson divergence: one-component reduction, and a 2x2 case
/// against Monte-Carlo.
pub fn check_mixture_divergence(rng: &mut RngStream, samples: usize) -> Result<Vec<OracleEntry>> {
    let (a, b) = (random_model(rng, 2, 3.0), random_model(rng, 2, 3.0));
    let reduced = csd_poisson_mixture(
        &MixturePoissonModel::single(a.clone()),
        &MixturePoissonModel::single(b.clone()),
    )?;
    let direct = csd_poisson_gm(&a, &b)?;
    let mut out = vec![OracleEntry::new(
        "mixture_single_reduction",
        "absolute error",
        (reduced - direct).abs(),
        1e-12,
    )];

    let fa = MixturePoissonModel::new(vec![(0.3, random_model(rng, 1, 2.0)), (0.7, random_model(rng, 1, 2.0))])?;
    let fb = MixturePoissonModel::new(vec![(0.6, random_model(rng, 1, 2.0)), (0.4, random_model(rng, 1, 2.0))])?;
    let est = mc_csd(rng, &fa, &fb, samples)?;
    let closed = csd_poisson_mixture(&fa, &fb)?;
    out.push(OracleEntry::new(
        "mixture_montecarlo_2x2",
        "|z|",
        est.z_score(closed).abs(),
        3.0,
    ));
    Ok(out)
}

/// Closed-form Bhattacharyya divergence against quadrature of the squared
/// Hellinger distance, plus the mass-only case.
pub fn check_bhattacharyya(rng: &mut RngStream, pairs: usize) -> Result<Vec<OracleEntry>> {
    let mut out = Vec::new();
    for i in 0..pairs {
        let d = 1 + i % 2;
        let single = |rng: &mut RngStream| {
            let mean = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            let g = Gaussian::new(mean, random_cov(rng, d)).expect("SPD");
            PoissonModel::unit_k(GaussianMixture::single(rng.random_range(0.3..4.0), g).expect("positive weight"))
        };
        let (a, b) = (single(rng), single(rng));
        let grid = grid_for(&a.intensity, &b.intensity)?;
        let quad = hellinger_sq_quadrature(
            &grid.sample(&a.intensity)?,
            &grid.sample(&b.intensity)?,
            grid.cell_volume(),
        )?;
        let closed = bhatt_poisson_gaussian(&a, &b)?;
        out.push(OracleEntry::new(
            format!("bhattacharyya_quadrature_{i}"),
            "relative error",
            rel_err(closed, quad),
            1e-6,
        ));
    }
    let g = Gaussian::univariate(0.0, 1.0)?;
    let mass_only = bhatt_poisson_gaussian(
        &PoissonModel::unit_k(GaussianMixture::single(1.0, g.clone())?),
        &PoissonModel::unit_k(GaussianMixture::single(4.0, g)?),
    )?;
    out.push(OracleEntry::new(
        "bhattacharyya_mass_only",
        "absolute error",
        (mass_only - 0.5).abs(),
        1e-9,
    ));
    Ok(out)
}

/// Rescales lengths by `s`: means by `s`, covariances by `s^2`, unit by `s^d`.
pub fn rescale(model: &PoissonModel, s: f64) -> Result<PoissonModel> {
    let k = model.unit.value() * s.powi(model.dim() as i32);
    Ok(PoissonModel::new(
        mixture_scale(&model.intensity, s)?,
        HyperVolumeUnit::new(k)?,
    ))
}

pub fn check_unit_invariance(rng: &mut RngStream) -> Result<Vec<OracleEntry>> {
    let mut out = Vec::new();
    for d in [1, 2, 4] {
        let (a, b) = (random_model(rng, d, 5.0), random_model(rng, d, 5.0));
        let base = csd_poisson_gm(&a, &b)?;
        for s in [0.1, 10.0] {
            let scaled = csd_poisson_gm(&rescale(&a, s)?, &rescale(&b, s)?)?;
            out.push(OracleEntry::new(
                format!("unit_invariance_d{d}_s{s}"),
                "relative error",
                rel_err(scaled, base),
                1e-10,
            ));
        }
    }
    Ok(out)
}

/// Per-step deviation of a perfect-detection, clutter-free, single-target
/// GM-PHD run from a textbook Kalman filter.
#[derive(Debug, Clone, Copy)]
pub struct KalmanComparison {
    pub max_mean_err: f64,
    pub max_cov_err: f64,
    pub max_mass_err: f64,
}

pub fn kalman_reduction(rng: &mut RngStream, steps: usize) -> Result<KalmanComparison> {
    let t = 1.0;
    let f = crate::scenario::cv_transition(t);
    let q = crate::scenario::cv_process_noise(t);
    let h = crate::scenario::position_observation();
    let r = DMatrix::identity(2, 2) * 9.0;
    let motion = MotionModel::new(f.clone(), q.clone(), 1.0)?;
    let meas = MeasModel::new(
        h.clone(),
        r.clone(),
        0.0,
        Region::new(vec![-1e9, -1e9], vec![1e9, 1e9])?,
    )?;
    let birth = BirthSpawnModel::births_only(GaussianMixture::empty(4));
    let det = DetectionProfile::constant(1.0)?;
    let keep_all = PruneConfig {
        truncation_threshold: 1e-12,
        merge_threshold: 0.0,
        max_components: 100,
    };

    let m0 = DVector::from_column_slice(&[100.0, 200.0, 3.0, -2.0]);
    let p0 = DMatrix::from_diagonal(&DVector::from_column_slice(&[100.0, 100.0, 4.0, 4.0]));
    let mut state = GmPhdState {
        intensity: GaussianMixture::single(1.0, Gaussian::new(m0.clone(), p0.clone())?)?,
        timestep: 0,
    };
    let (mut m, mut p) = (m0.clone(), p0);
    let mut x = m0;
    let (q_sqrt, r_sqrt) = (psd_sqrt(&q), psd_sqrt(&r));
    let mut cmp = KalmanComparison {
        max_mean_err: 0.0,
        max_cov_err: 0.0,
        max_mass_err: 0.0,
    };
    for k in 1..=steps {
        x = sample_gaussian(rng, &(&f * &x), &q_sqrt);
        let z = sample_gaussian(rng, &(&h * &x), &r_sqrt);

        // textbook filter, explicit inverse
        m = &f * &m;
        p = &f * &p * f.transpose() + &q;
        let s = &h * &p * h.transpose() + &r;
        let gain = &p * h.transpose() * s.try_inverse().expect("innovation covariance invertible");
        m = &m + &gain * (&z - &h * &m);
        p = (DMatrix::identity(4, 4) - &gain * &h) * &p;

        let predicted = phd_predict(&state, &motion, &birth)?;
        let zs = PointPattern::from_points(2, vec![z])?;
        let posterior = prune_merge(&phd_update(&predicted, &zs, &det, &meas)?.posterior, &keep_all);
        let est = extract_states(&posterior, 0.5);
        let heavy = posterior
            .iter()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
            .expect("non-empty posterior");
        cmp.max_mass_err = cmp.max_mass_err.max((posterior.mass() - 1.0).abs());
        if est.len() != 1 || posterior.len() != 1 {
            cmp.max_mean_err = f64::INFINITY;
        }
        cmp.max_mean_err = cmp
            .max_mean_err
            .max((heavy.gaussian.mean() - &m).amax() / m.amax().max(1.0));
        cmp.max_cov_err = cmp.max_cov_err.max((heavy.gaussian.cov() - &p).amax() / p.amax());
        state = GmPhdState {
            intensity: posterior,
            timestep: k,
        };
    }
    Ok(cmp)
}

/// Minimum assignment cost by enumerating every permutation.
pub fn brute_force_assignment(cost: &DMatrix<f64>) -> f64 {
    fn go(cost: &DMatrix<f64>, row: usize, used: &mut [bool]) -> f64 {
        if row == cost.nrows() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..cost.ncols() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[(row, j)] + go(cost, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost.ncols()])
}

pub fn check_assignment(rng: &mut RngStream, instances: usize) -> Result<Vec<OracleEntry>> {
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let cost = DMatrix::from_fn(6, 6, |_, _| rng.random_range(0.0..100.0));
        let (_, total) = optimal_assignment(&cost)?;
        worst = worst.max((total - brute_force_assignment(&cost)).abs());
    }
    Ok(vec![OracleEntry::new(
        format!("assignment_brute_force_{instances}x6x6"),
        "absolute error",
        worst,
        1e-9,
    )])
}

/// Runs every oracle. `Fast` uses fewer Monte-Carlo samples.
pub fn validate_oracles(level: ValidationLevel) -> Result<OracleReport> {
    let start = std::time::Instant::now();
    let samples = match level {
        ValidationLevel::Fast => 20_000,
        ValidationLevel::Full => 100_000,
    };
    let mut rng = RngStream::new(2010, purpose::ORACLE);
    let mut entries = Vec::new();
    entries.extend(check_csd_quadrature(&mut rng, 1, 5)?);
    entries.extend(check_csd_quadrature(&mut rng, 2, 5)?);
    entries.extend(check_csd_montecarlo(&mut rng, 3, samples)?);
    entries.extend(check_self_inner_product(&mut rng, 5, samples)?);
    entries.extend(check_mixture_divergence(&mut rng, samples)?);
    entries.extend(check_bhattacharyya(&mut rng, 5)?);
    entries.extend(check_unit_invariance(&mut rng)?);
    let kf = kalman_reduction(&mut rng, 40)?;
    entries.push(OracleEntry::new(
        "kalman_reduction_mean",
        "relative error",
        kf.max_mean_err,
        1e-9,
    ));
    entries.push(OracleEntry::new(
        "kalman_reduction_cov",
        "relative error",
        kf.max_cov_err,
        1e-9,
    ));
    entries.push(OracleEntry::new(
        "kalman_reduction_mass",
        "absolute error",
        kf.max_mass_err,
        1e-9,
    ));
    entries.extend(check_assignment(&mut rng, 20)?);
    Ok(OracleReport {
        level,
        entries,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
