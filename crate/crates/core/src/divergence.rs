//! Cauchy-Schwarz divergence and Bhattacharyya distance between Poisson point
//! processes, in closed form and by grid quadrature.
//!
//! A Poisson point process with intensity `u` (units `1/K`) has density
//! `f(X) = exp(-<u,1>) prod_{x in X} K u(x)` with respect to the unnormalized
//! Poisson reference measure. Its Cauchy-Schwarz divergence to another Poisson
//! process with intensity `v` is `(K/2) ||u - v||^2`, and its Bhattacharyya
//! distance is the squared Hellinger distance `(1/2) ||sqrt(u) - sqrt(v)||^2`.
//!
//! For mixtures of Poisson processes the three log-sum terms are combined in
//! log-space. The mass term `<u_i + v_j, 1>` is evaluated as
//! `mass(u_i) + mass(v_j)`; expanding it literally as a double sum over
//! component pairs would weight each mass by the opposing component count and
//! break the reduction to the single-process result.

use std::cmp::Ordering;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gaussmix::{gauss_bhatt_coeff, mixture_inner, Component, GaussianMixture, HyperVolumeUnit};

/// Closed forms may come out at `-eps` for identical inputs.
const CLAMP_TOL: f64 = 1e-10;
const WEIGHT_SUM_TOL: f64 = 1e-9;

fn clamp_roundoff(value: f64) -> f64 {
    if value < 0.0 && value.abs() < CLAMP_TOL {
        0.0
    } else {
        value
    }
}

fn same_unit(a: HyperVolumeUnit, b: HyperVolumeUnit) -> Result<()> {
    let (x, y) = (a.value(), b.value());
    if (x - y).abs() <= 1e-12 * x.abs().max(y.abs()) {
        Ok(())
    } else {
        Err(Error::UnitMismatch(x, y))
    }
}

/// A Poisson point process given by its Gaussian-mixture intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonModel {
    pub intensity: GaussianMixture,
    #[serde(default)]
    pub unit: HyperVolumeUnit,
}

impl PoissonModel {
    pub fn new(intensity: GaussianMixture, unit: HyperVolumeUnit) -> Self {
        Self { intensity, unit }
    }

    /// Model with the numeric unit constant set to one.
    pub fn unit_k(intensity: GaussianMixture) -> Self {
        Self::new(intensity, HyperVolumeUnit::default())
    }

    pub fn dim(&self) -> usize {
        self.intensity.dim()
    }

    pub fn mass(&self) -> f64 {
        self.intensity.mass()
    }

    /// `K <self, other>` with the shared unit constant.
    pub(crate) fn scaled_inner(&self, other: &Self) -> Result<f64> {
        Ok(self.unit.value() * mixture_inner(&self.intensity, &other.intensity)?)
    }
}

/// A finite mixture of Poisson point processes sharing one unit constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, PoissonModel)>", into = "Vec<(f64, PoissonModel)>")]
pub struct MixturePoissonModel {
    components: Vec<(f64, PoissonModel)>,
}

impl MixturePoissonModel {
    pub fn new(components: Vec<(f64, PoissonModel)>) -> Result<Self> {
        let first = components.first().ok_or_else(|| Error::InvalidParameter {
            name: "components",
            reason: "mixture of Poisson processes needs at least one component".into(),
        })?;
        let (dim, unit) = (first.1.dim(), first.1.unit);
        let mut total = 0.0;
        for (w, m) in &components {
            if !(*w >= 0.0 && *w <= 1.0) {
                return Err(Error::InvalidParameter {
                    name: "mixture_weight",
                    reason: format!("{w} not in [0, 1]"),
                });
            }
            check_dim(dim, m.dim())?;
            same_unit(unit, m.unit)?;
            total += w;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::UnnormalizedWeights(total));
        }
        Ok(Self { components })
    }

    pub fn single(model: PoissonModel) -> Self {
        Self {
            components: vec![(1.0, model)],
        }
    }

    pub fn components(&self) -> &[(f64, PoissonModel)] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].1.dim()
    }

    pub fn unit(&self) -> HyperVolumeUnit {
        self.components[0].1.unit
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.components.len().cmp(&other.components.len()).then_with(|| {
            self.components
                .iter()
                .zip(&other.components)
                .map(|((wa, a), (wb, b))| wa.total_cmp(wb).then_with(|| a.intensity.canonical_cmp(&b.intensity)))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    }
}

impl TryFrom<Vec<(f64, PoissonModel)>> for MixturePoissonModel {
    type Error = Error;
    fn try_from(v: Vec<(f64, PoissonModel)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MixturePoissonModel> for Vec<(f64, PoissonModel)> {
    fn from(m: MixturePoissonModel) -> Self {
        m.components
    }
}

/// Cauchy-Schwarz divergence between two Poisson processes with
/// Gaussian-mixture intensities, `(K/2) ||u - v||^2`.
pub fn csd_poisson_gm(a: &PoissonModel, b: &PoissonModel) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    same_unit(a.unit, b.unit)?;
    let uu = mixture_inner(&a.intensity, &a.intensity)?;
    let vv = mixture_inner(&b.intensity, &b.intensity)?;
    let uv = mixture_inner(&a.intensity, &b.intensity)?;
    Ok(clamp_roundoff(a.unit.value() * ((0.5 * uu + 0.5 * vv) - uv)))
}

/// `ln Σ_i Σ_j wf_i wg_j exp(K<u_i, v_j> - <u_i,1> - <v_j,1>)`.
fn log_cross_term(f: &MixturePoissonModel, g: &MixturePoissonModel) -> Result<f64> {
    let (f, g) = if f.canonical_cmp(g) == Ordering::Greater {
        (g, f)
    } else {
        (f, g)
    };
    let mut exponents = Vec::with_capacity(f.components.len() * g.components.len());
    for (wf, u) in f.components.iter().filter(|c| c.0 > 0.0) {
        for (wg, v) in g.components.iter().filter(|c| c.0 > 0.0) {
            exponents.push(wf.ln() + wg.ln() + u.scaled_inner(v)? - u.mass() - v.mass());
        }
    }
    Ok(log_sum_exp(&exponents))
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Cauchy-Schwarz divergence between two mixtures of Poisson processes.
pub fn csd_poisson_mixture(fa: &MixturePoissonModel, fb: &MixturePoissonModel) -> Result<f64> {
    check_dim(fa.dim(), fb.dim())?;
    same_unit(fa.unit(), fb.unit())?;
    let fg = log_cross_term(fa, fb)?;
    let ff = log_cross_term(fa, fa)?;
    let gg = log_cross_term(fb, fb)?;
    Ok(clamp_roundoff((0.5 * ff + 0.5 * gg) - fg))
}

/// Bhattacharyya distance between two Poisson processes whose intensities are
/// single weighted Gaussians.
pub fn bhatt_poisson_gaussian(a: &PoissonModel, b: &PoissonModel) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    fn single(m: &PoissonModel) -> Result<&Component> {
        match m.intensity.components() {
            [c] => Ok(c),
            other => Err(Error::NotSingleComponent(other.len())),
        }
    }
    let (cu, cv) = (single(a)?, single(b)?);
    let coeff = gauss_bhatt_coeff(&cu.gaussian, &cv.gaussian)?;
    let (wu, wv) = (cu.weight, cv.weight);
    Ok(clamp_roundoff(((wu + wv) * 0.5) - (wu * wv).sqrt() * coeff))
}

/// Regular axis-aligned grid of cells, sampled at cell midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lo: Vec<f64>,
    step: Vec<f64>,
    cells: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        check_dim(lo.len(), cells.len())?;
        if lo.is_empty() || cells.contains(&0) || lo.iter().zip(&hi).any(|(l, h)| !(h > l)) {
            return Err(Error::GridMismatch(
                "grid needs lo < hi and at least one cell per axis".into(),
            ));
        }
        let step = lo
            .iter()
            .zip(&hi)
            .zip(&cells)
            .map(|((l, h), n)| (h - l) / *n as f64)
            .collect();
        Ok(Self { lo, step, cells })
    }

    /// Bounding box of every component mean `± sigmas` marginal standard
    /// deviations, split into `cells_per_axis` cells along each axis.
    pub fn covering(mixtures: &[&GaussianMixture], sigmas: f64, cells_per_axis: usize) -> Result<Self> {
        let dim = mixtures.first().map(|m| m.dim()).unwrap_or(0);
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for m in mixtures {
            check_dim(dim, m.dim())?;
            for c in m.iter() {
                for ax in 0..dim {
                    let sd = c.gaussian.cov()[(ax, ax)].sqrt();
                    lo[ax] = lo[ax].min(c.gaussian.mean()[ax] - sigmas * sd);
                    hi[ax] = hi[ax].max(c.gaussian.mean()[ax] + sigmas * sd);
                }
            }
        }
        if lo.iter().any(|v| !v.is_finite()) {
            return Err(Error::GridMismatch("no components to cover".into()));
        }
        Self::new(lo, hi, vec![cells_per_axis; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.step.iter().product()
    }

    /// Midpoint of the cell with flat index `idx` (first axis fastest).
    pub fn center(&self, mut idx: usize) -> DVector<f64> {
        DVector::from_fn(self.dim(), |ax, _| {
            let i = idx % self.cells[ax];
            idx /= self.cells[ax];
            self.lo[ax] + (i as f64 + 0.5) * self.step[ax]
        })
    }

    /// Evaluates an intensity at every cell midpoint.
    pub fn sample(&self, u: &GaussianMixture) -> Result<GridSamples> {
        check_dim(self.dim(), u.dim())?;
        let values = (0..self.len())
            .map(|i| u.eval(&self.center(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GridSamples {
            shape: self.cells.clone(),
            values,
        })
    }
}

/// Intensity values on the cells of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSamples {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

fn aligned(u: &GridSamples, v: &GridSamples) -> Result<()> {
    if u.shape != v.shape || u.values.len() != v.values.len() {
        return Err(Error::GridMismatch(format!("shapes {:?} and {:?}", u.shape, v.shape)));
    }
    Ok(())
}

fn check_cell_volume(cell_volume: f64) -> Result<()> {
    if cell_volume > 0.0 && cell_volume.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "cell_volume",
            reason: format!("must be positive, got {cell_volume}"),
        })
    }
}

/// Midpoint-rule evaluation of `(K/2) ∫ (u - v)^2`.
pub fn csd_poisson_quadrature(u: &GridSamples, v: &GridSamples, cell_volume: f64, k: HyperVolumeUnit) -> Result<f64> {
    aligned(u, v)?;
    check_cell_volume(cell_volume)?;
    let sq: f64 = u.values.iter().zip(&v.values).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(0.5 * k.value() * sq * cell_volume)
}

/// Midpoint-rule evaluation of `(1/2) ∫ (sqrt(u) - sqrt(v))^2`.
pub fn hellinger_sq_quadrature(u: &GridSamples, v: &GridSamples, cell_volume: f64) -> Result<f64> {
    aligned(u, v)?;
    check_cell_volume(cell_volume)?;
    if let Some(bad) = u.values.iter().chain(&v.values).find(|x| **x < 0.0) {
        return Err(Error::NegativeIntensity(*bad));
    }
    let sq: f64 = u
        .values
        .iter()
        .zip(&v.values)
        .map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2))
        .sum();
    Ok(0.5 * sq * cell_volume)
}

/// Midpoint-rule Bhattacharyya coefficient `∫ sqrt(u v)` of two intensity measures.
pub fn bhatt_coeff_quadrature(u: &GridSamples, v: &GridSamples, cell_volume: f64) -> Result<f64> {
    aligned(u, v)?;
    check_cell_volume(cell_volume)?;
    Ok(u.values.iter().zip(&v.values).map(|(a, b)| (a * b).sqrt()).sum::<f64>() * cell_volume)
}
