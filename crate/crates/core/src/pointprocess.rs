//! Finite point patterns, Poisson point-process sampling and densities, and
//! Monte-Carlo estimators of inner products and of the Cauchy-Schwarz
//! divergence between point-process densities.
//!
//! Densities are taken with respect to the measure
//! `mu(T) = Σ_i 1/(i! K^i) ∫ 1_T({x_1..x_i}) dx`, under which a Poisson process
//! with intensity `u` has density `exp(-<u,1>) prod K u(x)`. The inner product
//! `<f, g>_mu` equals `E_{X~f}[g(X)]`, which is what the estimators average.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::divergence::{log_sum_exp, MixturePoissonModel, PoissonModel};
use crate::error::{check_dim, Error, Result};
use crate::gaussmix::GaussianMixture;
use crate::rng::RngStream;

/// Largest intensity mass the Monte-Carlo oracles accept. Estimator variance
/// grows like `exp(K<u,u>)`.
pub const MC_MAX_MASS: f64 = 5.0;
pub const MC_MIN_SAMPLES: usize = 1000;

/// A finite, unordered set of points of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    dim: usize,
    points: Vec<DVector<f64>>,
}

impl PointPattern {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            points: Vec::new(),
        }
    }

    pub fn from_points(dim: usize, points: Vec<DVector<f64>>) -> Result<Self> {
        for p in &points {
            check_dim(dim, p.len())?;
        }
        Ok(Self { dim, points })
    }

    /// Pattern from plain coordinate rows.
    pub fn from_rows(dim: usize, rows: &[&[f64]]) -> Result<Self> {
        Self::from_points(dim, rows.iter().map(|r| DVector::from_column_slice(r)).collect())
    }

    pub fn push(&mut self, p: DVector<f64>) -> Result<()> {
        check_dim(self.dim, p.len())?;
        self.points.push(p);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.points.iter()
    }

    /// Keeps the listed coordinates of every point.
    pub fn project(&self, axes: &[usize]) -> Self {
        Self {
            dim: axes.len(),
            points: self
                .points
                .iter()
                .map(|p| DVector::from_iterator(axes.len(), axes.iter().map(|&a| p[a])))
                .collect(),
        }
    }
}

/// Poisson variate. Inversion below mean 30, `rand_distr` above.
pub fn sample_poisson_count<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> usize {
    if !(mean > 0.0) {
        return 0;
    }
    if mean >= 30.0 {
        return Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0);
    }
    let u: f64 = rng.random();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0usize;
    while u > cdf && k < 1000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

/// Lower-triangular square root of a symmetric positive-semidefinite matrix
/// (Cholesky when possible, eigen-decomposition otherwise).
pub(crate) fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

pub(crate) fn sample_gaussian<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &DVector<f64>,
    sqrt_cov: &DMatrix<f64>,
) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + sqrt_cov * z
}

/// One draw from the normalized intensity: a component chosen in proportion
/// to its weight, then a Gaussian draw from it.
fn sample_from_mixture<R: Rng + ?Sized>(rng: &mut R, u: &GaussianMixture, mass: f64) -> DVector<f64> {
    let target = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    let comps = u.components();
    let mut chosen = comps.iter().rposition(|c| c.weight > 0.0).unwrap_or(0);
    for (i, c) in comps.iter().enumerate() {
        acc += c.weight;
        if target < acc && c.weight > 0.0 {
            chosen = i;
            break;
        }
    }
    let g = &comps[chosen].gaussian;
    sample_gaussian(rng, g.mean(), &psd_sqrt(g.cov()))
}

/// Draws a realization of a Poisson point process.
pub fn sample_poisson(rng: &mut RngStream, model: &PoissonModel) -> PointPattern {
    let mass = model.mass();
    let n = sample_poisson_count(rng, mass);
    let mut out = PointPattern::empty(model.dim());
    for _ in 0..n {
        out.points.push(sample_from_mixture(rng, &model.intensity, mass));
    }
    out
}

/// `ln f(X) = -<u,1> + Σ_{x in X} ln(K u(x))`; `-inf` when `u` vanishes at
/// some point of `X`.
pub fn poisson_log_density(x: &PointPattern, model: &PoissonModel) -> Result<f64> {
    check_dim(model.dim(), x.dim())?;
    let ln_k = model.unit.value().ln();
    let mut total = -model.mass();
    for p in x.iter() {
        total += ln_k + model.intensity.log_eval(p)?;
    }
    Ok(total)
}

/// A point process that can be sampled and whose density can be evaluated.
pub trait PointProcess {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut RngStream) -> PointPattern;
    fn log_density(&self, x: &PointPattern) -> Result<f64>;
    /// Largest intensity mass among the constituent Poisson processes.
    fn max_mass(&self) -> f64;
}

impl PointProcess for PoissonModel {
    fn dim(&self) -> usize {
        PoissonModel::dim(self)
    }

    fn sample(&self, rng: &mut RngStream) -> PointPattern {
        sample_poisson(rng, self)
    }

    fn log_density(&self, x: &PointPattern) -> Result<f64> {
        poisson_log_density(x, self)
    }

    fn max_mass(&self) -> f64 {
        self.mass()
    }
}

impl PointProcess for MixturePoissonModel {
    fn dim(&self) -> usize {
        MixturePoissonModel::dim(self)
    }

    fn sample(&self, rng: &mut RngStream) -> PointPattern {
        let u: f64 = rng.random();
        let comps = self.components();
        let mut acc = 0.0;
        let mut chosen = comps.len() - 1;
        for (i, (w, _)) in comps.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = i;
                break;
            }
        }
        sample_poisson(rng, &comps[chosen].1)
    }

    fn log_density(&self, x: &PointPattern) -> Result<f64> {
        let terms = self
            .components()
            .iter()
            .filter(|(w, _)| *w > 0.0)
            .map(|(w, m)| Ok(w.ln() + poisson_log_density(x, m)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(&terms))
    }

    fn max_mass(&self) -> f64 {
        self.components().iter().map(|(_, m)| m.mass()).fold(0.0, f64::max)
    }
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl McEstimate {
    /// `|estimate - reference|` in units of standard error.
    pub fn z_score(&self, reference: f64) -> f64 {
        (self.estimate - reference).abs() / self.std_error
    }
}

fn check_oracle_request<A: PointProcess + ?Sized>(a: &A, n: usize) -> Result<()> {
    if n < MC_MIN_SAMPLES {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: format!("need at least {MC_MIN_SAMPLES}, got {n}"),
        });
    }
    if a.max_mass() > MC_MAX_MASS {
        return Err(Error::InvalidParameter {
            name: "mass",
            reason: format!("{} exceeds the Monte-Carlo oracle limit {MC_MAX_MASS}", a.max_mass()),
        });
    }
    Ok(())
}

/// Estimates `<f_a, f_b>_mu` as the sample mean of `f_b(X_i)`, `X_i ~ f_a`.
pub fn mc_inner_product<A, B>(rng: &mut RngStream, a: &A, b: &B, n: usize) -> Result<McEstimate>
where
    A: PointProcess + ?Sized,
    B: PointProcess + ?Sized,
{
    check_dim(a.dim(), b.dim())?;
    check_oracle_request(a, n)?;
    check_oracle_request(b, n)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let x = a.sample(rng);
        let g = b.log_density(&x)?.exp();
        sum += g;
        sum_sq += g * g;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(McEstimate {
        estimate: mean,
        std_error: (var / nf).sqrt(),
    })
}

/// Estimates `-ln(<f,g> / (||f|| ||g||))` from three independent inner-product
/// estimates, with a delta-method standard error.
pub fn mc_csd<A, B>(rng: &mut RngStream, a: &A, b: &B, n: usize) -> Result<McEstimate>
where
    A: PointProcess + ?Sized,
    B: PointProcess + ?Sized,
{
    let mut s_ab = rng.split(1);
    let mut s_aa = rng.split(2);
    let mut s_bb = rng.split(3);
    let ab = mc_inner_product(&mut s_ab, a, b, n)?;
    let aa = mc_inner_product(&mut s_aa, a, a, n)?;
    let bb = mc_inner_product(&mut s_bb, b, b, n)?;
    for e in [ab, aa, bb] {
        if !(e.estimate > 0.0) {
            return Err(Error::NonPositiveEstimate(e.estimate));
        }
    }
    let estimate = -ab.estimate.ln() + 0.5 * aa.estimate.ln() + 0.5 * bb.estimate.ln();
    let rel = |e: McEstimate| e.std_error / e.estimate;
    let std_error = (rel(ab).powi(2) + 0.25 * rel(aa).powi(2) + 0.25 * rel(bb).powi(2)).sqrt();
    Ok(McEstimate { estimate, std_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussmix::{Gaussian, HyperVolumeUnit};

    fn model(w: f64) -> PoissonModel {
        PoissonModel::unit_k(GaussianMixture::single(w, Gaussian::univariate(0.0, 1.0).unwrap()).unwrap())
    }

    #[test]
    fn zero_mass_always_empty() {
        let m = PoissonModel::unit_k(GaussianMixture::empty(2));
        let mut rng = RngStream::new(1, 0);
        assert!((0..1000).all(|_| sample_poisson(&mut rng, &m).is_empty()));
        let zero_weight = model(0.0);
        assert!((0..1000).all(|_| sample_poisson(&mut rng, &zero_weight).is_empty()));
    }

    #[test]
    fn empty_pattern_density() {
        assert_eq!(poisson_log_density(&PointPattern::empty(1), &model(2.0)).unwrap(), -2.0);
    }

    #[test]
    fn single_point_density() {
        let x = PointPattern::from_rows(1, &[&[0.0]]).unwrap();
        let v = poisson_log_density(&x, &model(1.0)).unwrap();
        assert!((v - (-1.0 + 0.3989422804014327f64.ln())).abs() < 1e-12);
        assert!((v + 1.9189385).abs() < 1e-7);
    }

    #[test]
    fn density_uses_unit_constant() {
        let m = PoissonModel::new(model(1.0).intensity, HyperVolumeUnit::new(10.0).unwrap());
        let x = PointPattern::from_rows(1, &[&[0.0], &[1.0]]).unwrap();
        let base = poisson_log_density(&x, &model(1.0)).unwrap();
        assert!((poisson_log_density(&x, &m).unwrap() - base - 2.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn vanishing_intensity_gives_neg_infinity() {
        let x = PointPattern::from_rows(1, &[&[0.0]]).unwrap();
        assert_eq!(poisson_log_density(&x, &model(0.0)).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn density_is_order_insensitive() {
        let m = PoissonModel::unit_k(
            GaussianMixture::from_components(
                1,
                [
                    (0.6, Gaussian::univariate(0.0, 1.0).unwrap()),
                    (0.9, Gaussian::univariate(2.0, 0.5).unwrap()),
                ],
            )
            .unwrap(),
        );
        let a = PointPattern::from_rows(1, &[&[0.1], &[1.7], &[-0.4]]).unwrap();
        let b = PointPattern::from_rows(1, &[&[-0.4], &[0.1], &[1.7]]).unwrap();
        let (da, db) = (
            poisson_log_density(&a, &m).unwrap(),
            poisson_log_density(&b, &m).unwrap(),
        );
        assert!((da - db).abs() < 1e-14);
    }

    #[test]
    fn poisson_count_small_mean() {
        let mut rng = RngStream::new(3, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_poisson_count(&mut rng, 3.0) as f64).sum::<f64>() / n as f64;
        assert!((mean - 3.0).abs() < 3.0 * (3.0f64 / n as f64).sqrt(), "{mean}");
        assert_eq!(sample_poisson_count(&mut rng, 0.0), 0);
    }

    #[test]
    fn oracle_rejects_bad_requests() {
        let mut rng = RngStream::new(1, 0);
        assert!(mc_inner_product(&mut rng, &model(1.0), &model(1.0), 10).is_err());
        assert!(mc_inner_product(&mut rng, &model(6.0), &model(1.0), 2000).is_err());
    }

    #[test]
    fn void_probability() {
        // g(X) = 1 on the empty set and 0 elsewhere
        let mut rng = RngStream::new(9, 0);
        let b = PoissonModel::unit_k(GaussianMixture::empty(1));
        let a = model(1.5);
        let e = mc_inner_product(&mut rng, &a, &b, 20_000).unwrap();
        assert!(e.z_score((-1.5f64).exp()) < 3.0, "{e:?}");
    }
}
