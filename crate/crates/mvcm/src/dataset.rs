//! Functional response data on a shared grid.
//!
//! Every subject contributes `J` response curves sampled at the same `M`
//! grid locations in `[0, 1]`, together with a `p`-vector of covariates.
//! Construction validates the invariants once; all downstream estimators
//! assume a validated dataset and never re-check.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};

use crate::error::{MvcmError, Result};

/// Responses `y_ij(s_m)` on a shared ascending grid plus covariates `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    grid: Vec<f64>,
    /// `n x J x M` response array.
    y: Array3<f64>,
    /// `n x p` covariate matrix (first column is typically a constant 1).
    x: Array2<f64>,
}

impl FunctionalDataset {
    /// Validates raw arrays and assembles a dataset.
    ///
    /// Checks, in order: grid length/monotonicity/range, response shape and
    /// finiteness, covariate shape, finiteness and column rank.
    pub fn new(grid: Vec<f64>, y: Array3<f64>, x: Array2<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        let (n, j_dim, m) = y.dim();
        if m != grid.len() {
            return Err(MvcmError::DimensionMismatch(format!(
                "responses have {m} grid columns but the grid has {} points",
                grid.len()
            )));
        }
        if n == 0 || j_dim == 0 {
            return Err(MvcmError::DimensionMismatch(
                "need at least one subject and one response dimension".into(),
            ));
        }
        for ((i, j, k), v) in y.indexed_iter() {
            if !v.is_finite() {
                return Err(MvcmError::NonFiniteValue {
                    subject: i,
                    response: j,
                    grid_index: k,
                });
            }
        }
        let (xn, p) = x.dim();
        if xn != n {
            return Err(MvcmError::DimensionMismatch(format!(
                "covariate rows {xn} != subject count {n}"
            )));
        }
        if p == 0 || p > n {
            return Err(MvcmError::DimensionMismatch(format!(
                "covariate count p = {p} must satisfy 1 <= p <= n = {n}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(MvcmError::DimensionMismatch(
                "covariate matrix contains non-finite values".into(),
            ));
        }
        let rank = covariate_rank(&x);
        if rank < p {
            return Err(MvcmError::RankDeficientCovariates { rank, p });
        }
        Ok(Self { grid, y, x })
    }

    pub fn n(&self) -> usize {
        self.y.dim().0
    }

    /// Number of response dimensions `J`.
    pub fn num_responses(&self) -> usize {
        self.y.dim().1
    }

    /// Grid size `M`.
    pub fn num_points(&self) -> usize {
        self.grid.len()
    }

    /// Covariate count `p`.
    pub fn p(&self) -> usize {
        self.x.dim().1
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn y(&self) -> &Array3<f64> {
        &self.y
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    /// Covariate vector of one subject.
    pub fn x_row(&self, i: usize) -> DVector<f64> {
        DVector::from_iterator(self.p(), self.x.row(i).iter().copied())
    }

    /// `Ω̂_X = Σ_i x_i x_iᵀ` (unnormalized covariate Gram matrix).
    pub fn omega_x(&self) -> DMatrix<f64> {
        let (n, p) = self.x.dim();
        let mut omega = DMatrix::zeros(p, p);
        for i in 0..n {
            let row = self.x.row(i);
            for a in 0..p {
                for b in 0..p {
                    omega[(a, b)] += row[a] * row[b];
                }
            }
        }
        omega
    }

    /// Decomposes the dataset back into raw parts.
    pub fn into_parts(self) -> (Vec<f64>, Array3<f64>, Array2<f64>) {
        (self.grid, self.y, self.x)
    }
}

/// Validates raw arrays into a [`FunctionalDataset`].
///
/// Idempotent: feeding a validated dataset's parts back returns an equal
/// dataset.
pub fn validate_dataset(grid: Vec<f64>, y: Array3<f64>, x: Array2<f64>) -> Result<FunctionalDataset> {
    FunctionalDataset::new(grid, y, x)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 3 {
        return Err(MvcmError::GridTooShort {
            len: grid.len(),
            min: 3,
        });
    }
    for (k, &s) in grid.iter().enumerate() {
        if !s.is_finite() || !(0.0..=1.0).contains(&s) {
            return Err(MvcmError::GridOutOfRange { index: k, value: s });
        }
        if k > 0 && grid[k - 1] >= s {
            return Err(MvcmError::GridNotIncreasing {
                index: k,
                prev: grid[k - 1],
                next: s,
            });
        }
    }
    Ok(())
}

fn covariate_rank(x: &Array2<f64>) -> usize {
    let (n, p) = x.dim();
    let m = DMatrix::from_fn(n, p, |i, j| x[(i, j)]);
    let svd = m.svd(false, false);
    let max_sv = svd.singular_values.max();
    if max_sv == 0.0 {
        return 0;
    }
    let tol = max_sv * (n.max(p) as f64) * f64::EPSILON;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Locations at which estimates are reported.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationGrid {
    points: Vec<f64>,
}

impl EvaluationGrid {
    /// Ascending, nonempty points within `[0, 1]`.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(MvcmError::GridTooShort { len: 0, min: 1 });
        }
        for (k, &s) in points.iter().enumerate() {
            if !s.is_finite() || !(0.0..=1.0).contains(&s) {
                return Err(MvcmError::GridOutOfRange { index: k, value: s });
            }
            if k > 0 && points[k - 1] >= s {
                return Err(MvcmError::GridNotIncreasing {
                    index: k,
                    prev: points[k - 1],
                    next: s,
                });
            }
        }
        Ok(Self { points })
    }

    /// The default choice: report on the data grid itself.
    pub fn from_dataset(data: &FunctionalDataset) -> Self {
        Self {
            points: data.grid().to_vec(),
        }
    }

    /// `k` equispaced points spanning `[0, 1]`.
    pub fn equispaced(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(MvcmError::GridTooShort { len: k, min: 2 });
        }
        Self::new((0..k).map(|m| m as f64 / (k - 1) as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
