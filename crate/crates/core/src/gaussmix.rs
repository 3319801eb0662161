//! Multivariate Gaussians and weighted Gaussian mixtures.
//!
//! Every density evaluation goes through [`log_normal`], which factors the
//! covariance with a Cholesky decomposition and stays in log-space until the
//! caller exponentiates. Inner products between Gaussians use the closed form
//! `<N(.; m0, P0), N(.; m1, P1)> = N(m0; m1, P0 + P1)`.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log-density of `N(x; mean, cov)`.
///
/// `cov` must be symmetric; only its lower triangle is read.
pub fn log_normal(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    check_dim(mean.len(), x.len())?;
    check_dim(mean.len(), cov.nrows())?;
    let d = x.len();
    let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let diff = x - mean;
    let y = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .ok_or(Error::NotPositiveDefinite)?;
    let half_log_det: f64 = (0..d).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    Ok(-0.5 * y.norm_squared() - half_log_det - 0.5 * d as f64 * LN_2PI)
}

fn log_det_spd(cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(2.0 * (0..cov.nrows()).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>())
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// A multivariate normal distribution with full covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Gaussian {
    /// Builds a Gaussian, symmetrizing `cov` and rejecting it unless it is
    /// positive definite.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::InvalidParameter {
                name: "cov",
                reason: format!("not square ({}x{})", cov.nrows(), cov.ncols()),
            });
        }
        check_dim(mean.len(), cov.nrows())?;
        if mean.is_empty() {
            return Err(Error::InvalidParameter {
                name: "mean",
                reason: "zero dimension".into(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "gaussian",
                reason: "non-finite entry".into(),
            });
        }
        let cov = symmetrize(&cov);
        if cov.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { mean, cov })
    }

    /// One-dimensional `N(mean, var)`.
    pub fn univariate(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    /// `N(mean, diag(variances))`.
    pub fn diagonal(mean: &[f64], variances: &[f64]) -> Result<Self> {
        check_dim(mean.len(), variances.len())?;
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        log_normal(x, &self.mean, &self.cov)
    }

    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }

    pub fn log_det(&self) -> f64 {
        log_det_spd(&self.cov).expect("covariance checked positive definite on construction")
    }
}

/// Density of `g` at `x`.
pub fn gauss_eval(x: &DVector<f64>, g: &Gaussian) -> Result<f64> {
    g.pdf(x)
}

/// `ln <g0, g1>`, i.e. `ln N(m0; m1, P0 + P1)`.
pub fn log_gauss_inner(g0: &Gaussian, g1: &Gaussian) -> Result<f64> {
    check_dim(g0.dim(), g1.dim())?;
    log_normal(&g0.mean, &g1.mean, &(&g0.cov + &g1.cov))
}

/// L2 inner product of two Gaussian densities.
pub fn gauss_inner(g0: &Gaussian, g1: &Gaussian) -> Result<f64> {
    log_gauss_inner(g0, g1).map(f64::exp)
}

/// Bhattacharyya coefficient `∫ sqrt(g0 g1)` of two Gaussian densities.
pub fn gauss_bhatt_coeff(g0: &Gaussian, g1: &Gaussian) -> Result<f64> {
    check_dim(g0.dim(), g1.dim())?;
    let d = g0.dim() as f64;
    let half_mean0 = &g0.mean * 0.5;
    let half_mean1 = &g1.mean * 0.5;
    let avg_cov = (&g0.cov + &g1.cov) * 0.5;
    let log_scale = 0.5 * (d * LN_2PI + 0.5 * (g0.log_det() + g1.log_det()));
    Ok((log_scale + log_normal(&half_mean0, &half_mean1, &avg_cov)?).exp())
}

/// Numeric value of the unit of hyper-volume in the state space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HyperVolumeUnit(f64);

impl HyperVolumeUnit {
    pub fn new(k: f64) -> Result<Self> {
        if k > 0.0 && k.is_finite() {
            Ok(Self(k))
        } else {
            Err(Error::InvalidParameter {
                name: "unit",
                reason: format!("must be positive, got {k}"),
            })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for HyperVolumeUnit {
    fn default() -> Self {
        Self(1.0)
    }
}

impl TryFrom<f64> for HyperVolumeUnit {
    type Error = Error;
    fn try_from(k: f64) -> Result<Self> {
        Self::new(k)
    }
}

impl From<HyperVolumeUnit> for f64 {
    fn from(k: HyperVolumeUnit) -> f64 {
        k.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub gaussian: Gaussian,
}

/// A nonnegatively weighted sum of Gaussians sharing one dimension.
///
/// Zero-weight components are allowed and contribute nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureDoc", into = "MixtureDoc")]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            components: Vec::new(),
        }
    }

    pub fn from_components(dim: usize, components: impl IntoIterator<Item = (f64, Gaussian)>) -> Result<Self> {
        let mut out = Self::empty(dim);
        for (w, g) in components {
            out.push(w, g)?;
        }
        Ok(out)
    }

    /// A one-component mixture.
    pub fn single(weight: f64, g: Gaussian) -> Result<Self> {
        Self::from_components(g.dim(), [(weight, g)])
    }

    pub fn push(&mut self, weight: f64, gaussian: Gaussian) -> Result<()> {
        check_dim(self.dim, gaussian.dim())?;
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "weight",
                reason: format!("must be finite and nonnegative, got {weight}"),
            });
        }
        self.components.push(Component { weight, gaussian });
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn iter(&self) -> impl Iterator<Item = &Component> {
        self.components.iter()
    }

    pub fn mass(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Intensity value at `x`.
    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let mut total = 0.0;
        for c in self.components.iter().filter(|c| c.weight > 0.0) {
            total += c.weight * c.gaussian.pdf(x)?;
        }
        Ok(total)
    }

    /// `ln u(x)`, accumulated with log-sum-exp so distant points do not
    /// underflow; `-inf` when every weight is zero.
    pub fn log_eval(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let logs = self
            .components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| Ok(c.weight.ln() + c.gaussian.log_pdf(x)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(crate::divergence::log_sum_exp(&logs))
    }

    /// Same mixture with every weight multiplied by `factor`.
    pub fn scale_weights(&self, factor: f64) -> Result<Self> {
        Self::from_components(
            self.dim,
            self.components.iter().map(|c| (c.weight * factor, c.gaussian.clone())),
        )
    }

    /// Concatenation of two mixtures (sum of intensities).
    pub fn sum(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        let mut out = self.clone();
        out.components.extend(other.components.iter().cloned());
        Ok(out)
    }

    /// Total order on mixtures used to fix the evaluation order of symmetric
    /// double sums, so that swapping arguments gives bit-identical results.
    pub(crate) fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.components.len().cmp(&other.components.len()).then_with(|| {
            for (a, b) in self.components.iter().zip(&other.components) {
                let ord = a
                    .weight
                    .total_cmp(&b.weight)
                    .then_with(|| cmp_slices(a.gaussian.mean.as_slice(), b.gaussian.mean.as_slice()))
                    .then_with(|| cmp_slices(a.gaussian.cov.as_slice(), b.gaussian.cov.as_slice()));
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            Ordering::Equal
        })
    }
}

fn cmp_slices(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// `Σ_i Σ_j w_u^(i) w_v^(j) N(m_u^(i); m_v^(j), P_u^(i) + P_v^(j))`.
///
/// With intensities measured in units of `1/K` this is `K <u, v>`.
pub fn mixture_inner(u: &GaussianMixture, v: &GaussianMixture) -> Result<f64> {
    check_dim(u.dim, v.dim)?;
    let (a, b) = if u.canonical_cmp(v) == Ordering::Greater {
        (v, u)
    } else {
        (u, v)
    };
    let mut total = 0.0;
    for ca in a.components.iter().filter(|c| c.weight > 0.0) {
        for cb in b.components.iter().filter(|c| c.weight > 0.0) {
            total += ca.weight * cb.weight * gauss_inner(&ca.gaussian, &cb.gaussian)?;
        }
    }
    Ok(total)
}

/// Expected number of points, `<u, 1>`.
pub fn mixture_mass(u: &GaussianMixture) -> f64 {
    u.mass()
}

/// Maps every component through `x -> s x`: means scale by `s`, covariances
/// by `s^2`, weights are kept.
pub fn mixture_scale(u: &GaussianMixture, s: f64) -> Result<GaussianMixture> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!("must be positive, got {s}"),
        });
    }
    GaussianMixture::from_components(
        u.dim,
        u.components.iter().map(|c| {
            let g = Gaussian {
                mean: &c.gaussian.mean * s,
                cov: &c.gaussian.cov * (s * s),
            };
            (c.weight, g)
        }),
    )
}

/// Component-management thresholds for [`prune_merge`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    /// Components lighter than this are dropped.
    pub truncation_threshold: f64,
    /// Squared Mahalanobis radius for merging.
    pub merge_threshold: f64,
    pub max_components: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            truncation_threshold: 1e-5,
            merge_threshold: 4.0,
            max_components: 100,
        }
    }
}

/// Truncates light components, greedily merges clusters around the heaviest
/// remaining component by moment matching, then caps the count by weight.
pub fn prune_merge(u: &GaussianMixture, cfg: &PruneConfig) -> GaussianMixture {
    let mut pool: Vec<&Component> = u
        .components
        .iter()
        .filter(|c| c.weight >= cfg.truncation_threshold)
        .collect();
    let mut merged: Vec<Component> = Vec::with_capacity(pool.len());

    while !pool.is_empty() {
        // first index wins on equal weights
        let mut best = 0;
        for (i, c) in pool.iter().enumerate() {
            if c.weight > pool[best].weight {
                best = i;
            }
        }
        let centre = pool[best].gaussian.mean.clone();
        let mut cluster = Vec::new();
        let mut rest = Vec::with_capacity(pool.len());
        for (i, c) in pool.into_iter().enumerate() {
            if i == best || mahalanobis_sq(&centre, &c.gaussian).is_some_and(|d2| d2 <= cfg.merge_threshold) {
                cluster.push(c);
            } else {
                rest.push(c);
            }
        }
        pool = rest;
        merged.push(moment_match(&cluster));
    }

    merged.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    merged.truncate(cfg.max_components.max(1));
    GaussianMixture {
        dim: u.dim,
        components: merged,
    }
}

fn mahalanobis_sq(x: &DVector<f64>, g: &Gaussian) -> Option<f64> {
    let chol = g.cov.clone().cholesky()?;
    let y = chol.l_dirty().solve_lower_triangular(&(x - &g.mean))?;
    Some(y.norm_squared())
}

fn moment_match(cluster: &[&Component]) -> Component {
    if let [only] = cluster {
        return (*only).clone();
    }
    let total: f64 = cluster.iter().map(|c| c.weight).sum();
    let dim = cluster[0].gaussian.dim();
    if total <= 0.0 {
        return cluster[0].clone();
    }
    let mut mean = DVector::zeros(dim);
    for c in cluster {
        mean += &c.gaussian.mean * c.weight;
    }
    mean /= total;
    let mut cov = DMatrix::zeros(dim, dim);
    for c in cluster {
        let spread = &c.gaussian.mean - &mean;
        cov += (&c.gaussian.cov + &spread * spread.transpose()) * c.weight;
    }
    cov /= total;
    Component {
        weight: total,
        gaussian: Gaussian {
            mean,
            cov: symmetrize(&cov),
        },
    }
}

/// On-disk form of a [`GaussianMixture`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureDoc {
    pub dim: usize,
    #[serde(default)]
    pub components: Vec<ComponentDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major covariance.
    pub cov: Vec<Vec<f64>>,
}

impl TryFrom<MixtureDoc> for GaussianMixture {
    type Error = Error;

    fn try_from(doc: MixtureDoc) -> Result<Self> {
        let mut out = GaussianMixture::empty(doc.dim);
        for c in doc.components {
            check_dim(doc.dim, c.mean.len())?;
            check_dim(doc.dim, c.cov.len())?;
            for row in &c.cov {
                check_dim(doc.dim, row.len())?;
            }
            let cov = DMatrix::from_fn(doc.dim, doc.dim, |i, j| c.cov[i][j]);
            out.push(c.weight, Gaussian::new(DVector::from_vec(c.mean), cov)?)?;
        }
        Ok(out)
    }
}

impl From<GaussianMixture> for MixtureDoc {
    fn from(m: GaussianMixture) -> Self {
        MixtureDoc {
            dim: m.dim,
            components: m
                .components
                .iter()
                .map(|c| ComponentDoc {
                    weight: c.weight,
                    mean: c.gaussian.mean.iter().copied().collect(),
                    cov: (0..m.dim)
                        .map(|i| c.gaussian.cov.row(i).iter().copied().collect())
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Normalizing constant `1 / N(0; 0, S)` of a Gaussian with covariance `s`.
pub fn peak_normalizer(s: &DMatrix<f64>) -> Result<f64> {
    let d = s.nrows() as f64;
    Ok(((2.0 * PI).powf(d) * log_det_spd(s)?.exp()).sqrt())
}
