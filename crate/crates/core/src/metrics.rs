//! OSPA distance between finite point sets, with an exact Hungarian solver
//! for the underlying assignment.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::pointprocess::PointPattern;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OspaParams {
    pub order: f64,
    pub cutoff: f64,
}

impl Default for OspaParams {
    fn default() -> Self {
        Self {
            order: 2.0,
            cutoff: 100.0,
        }
    }
}

impl OspaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.order >= 1.0 && self.order.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "order",
                reason: format!("{} is not a finite value >= 1", self.order),
            });
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "cutoff",
                reason: format!("{} is not positive", self.cutoff),
            });
        }
        Ok(())
    }
}

/// Minimum-cost assignment of every row to a distinct column of a
/// `rows <= cols` cost matrix. Returns the column chosen for each row and the
/// total cost.
pub fn optimal_assignment(cost: &DMatrix<f64>) -> Result<(Vec<usize>, f64)> {
    let (n, m) = cost.shape();
    if n > m {
        return Err(Error::InvalidParameter {
            name: "cost",
            reason: format!("{n} rows exceed {m} columns"),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "cost",
            reason: "non-finite entry".into(),
        });
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // Shortest augmenting paths with potentials, 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assign[owner[j] - 1] = j - 1;
        }
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Ok((assign, total))
}

/// OSPA distance of order `p` with cutoff `c`.
pub fn ospa(x: &PointPattern, y: &PointPattern, params: &OspaParams) -> Result<f64> {
    params.validate()?;
    check_dim(x.dim(), y.dim())?;
    let (small, large) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let (m, n) = (small.len(), large.len());
    if n == 0 {
        return Ok(0.0);
    }
    let (p, c) = (params.order, params.cutoff);
    let cost = DMatrix::from_fn(m, n, |i, j| {
        (&small.points()[i] - &large.points()[j]).norm().min(c).powf(p)
    });
    let (_, matched) = optimal_assignment(&cost)?;
    let total = matched + c.powf(p) * (n - m) as f64;
    Ok((total / n as f64).powf(1.0 / p))
}
