//! Local polynomial weighted least squares on a one-dimensional grid.
//!
//! The local basis is the scaled form `z_h(s_m - s) = (1, (s_m-s)/h, ...)`,
//! which keeps the Gram matrix well conditioned; derivatives are unscaled on
//! output (`k! c_k / h^k`). Degree 1 drives curve smoothing, degree 3 the
//! curvature pilots for bias estimation.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{MvcmError, Result};
use crate::kernel::{check_bandwidth, Kernel};

/// Windows too sparse for the requested degree are widened to the
/// (degree+1)-nearest-neighbor distance; the factor keeps the boundary
/// neighbor at a strictly positive kernel weight.
const WIDEN_FACTOR: f64 = 1.1;

/// Configuration of one local polynomial fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFitConfig {
    pub degree: usize,
    pub bandwidth: f64,
    pub kernel: Kernel,
    /// Relative ridge applied only when the unregularized solve fails.
    pub ridge: f64,
}

impl LocalFitConfig {
    pub fn new(degree: usize, bandwidth: f64, kernel: Kernel) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        if degree == 0 {
            return Err(MvcmError::InvalidConfig(
                "local polynomial degree must be at least 1".into(),
            ));
        }
        Ok(Self {
            degree,
            bandwidth,
            kernel,
            ridge: 1e-10,
        })
    }
}

/// Result of a local fit: scaled basis coefficients plus window diagnostics.
#[derive(Debug, Clone)]
pub struct LocalFit {
    scaled_coeffs: Vec<f64>,
    bandwidth_used: f64,
    widened: bool,
}

impl LocalFit {
    /// Fitted value at the evaluation point.
    pub fn value(&self) -> f64 {
        self.scaled_coeffs[0]
    }

    /// Estimated k-th derivative, `k! c_k / h^k`.
    pub fn derivative(&self, k: usize) -> f64 {
        let factorial: f64 = (1..=k).map(|v| v as f64).product();
        factorial * self.scaled_coeffs[k] / self.bandwidth_used.powi(k as i32)
    }

    pub fn scaled_coeffs(&self) -> &[f64] {
        &self.scaled_coeffs
    }

    pub fn bandwidth_used(&self) -> f64 {
        self.bandwidth_used
    }

    pub fn widened(&self) -> bool {
        self.widened
    }
}

/// Equivalent-kernel weights: the fitted value at `s` is `Σ_m w_m r(s_m)`.
#[derive(Debug, Clone)]
pub struct SmootherRow {
    weights: Vec<f64>,
    bandwidth_used: f64,
    widened: bool,
}

impl SmootherRow {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(values)
            .map(|(w, v)| w * v)
            .sum()
    }

    pub fn bandwidth_used(&self) -> f64 {
        self.bandwidth_used
    }

    pub fn widened(&self) -> bool {
        self.widened
    }
}

pub(crate) struct Window {
    pub(crate) lo: usize,
    pub(crate) hi: usize, // exclusive
    pub(crate) bandwidth: f64,
    pub(crate) widened: bool,
}

/// Indices with strictly positive kernel weight, widening the bandwidth when
/// fewer than `degree + 1` points fall inside.
pub(crate) fn resolve_window(grid: &[f64], s: f64, h: f64, degree: usize) -> Result<Window> {
    let needed = degree + 1;
    if grid.len() < needed {
        return Err(MvcmError::DegenerateWindow {
            location: s,
            needed,
            found: grid.len(),
        });
    }
    let in_window = |h: f64| {
        let lo = grid.partition_point(|&g| g <= s - h);
        let hi = grid.partition_point(|&g| g < s + h);
        (lo, hi)
    };
    let (lo, hi) = in_window(h);
    if hi - lo >= needed {
        return Ok(Window {
            lo,
            hi,
            bandwidth: h,
            widened: false,
        });
    }
    let mut dists: Vec<f64> = grid.iter().map(|&g| (g - s).abs()).collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let widened_h = (dists[needed - 1] * WIDEN_FACTOR).max(h);
    let (lo, hi) = in_window(widened_h);
    if hi - lo < needed {
        return Err(MvcmError::DegenerateWindow {
            location: s,
            needed,
            found: hi - lo,
        });
    }
    Ok(Window {
        lo,
        hi,
        bandwidth: widened_h,
        widened: true,
    })
}

struct LocalSystem {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    window: Window,
}

fn assemble(
    config: &LocalFitConfig,
    grid: &[f64],
    values: Option<&[f64]>,
    s: f64,
) -> Result<LocalSystem> {
    check_bandwidth(config.bandwidth)?;
    let d = config.degree;
    let window = resolve_window(grid, s, config.bandwidth, d)?;
    let h = window.bandwidth;
    let mut gram = DMatrix::zeros(d + 1, d + 1);
    let mut rhs = DVector::zeros(d + 1);
    let mut z = vec![0.0; d + 1];
    for m in window.lo..window.hi {
        let t = (grid[m] - s) / h;
        let w = config.kernel.evaluate(t) / h;
        if w == 0.0 {
            continue;
        }
        z[0] = 1.0;
        for k in 1..=d {
            z[k] = z[k - 1] * t;
        }
        for a in 0..=d {
            let wz = w * z[a];
            for b in a..=d {
                gram[(a, b)] += wz * z[b];
            }
            if let Some(vals) = values {
                rhs[a] += wz * vals[m];
            }
        }
    }
    for a in 0..=d {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    Ok(LocalSystem { gram, rhs, window })
}

/// Solves a symmetric positive semi-definite system, retrying with a tiny
/// ridge when the plain Cholesky factorization fails.
pub(crate) fn solve_spd_with_ridge(
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
    ridge: f64,
    location: f64,
    response: usize,
) -> Result<DVector<f64>> {
    if let Some(chol) = Cholesky::new(gram.clone()) {
        let sol = chol.solve(rhs);
        if sol.iter().all(|v| v.is_finite()) {
            return Ok(sol);
        }
    }
    let dim = gram.nrows();
    let scale = ridge * gram.trace() / dim as f64;
    let mut ridged = gram.clone();
    for k in 0..dim {
        ridged[(k, k)] += scale;
    }
    ridged
        .lu()
        .solve(rhs)
        .filter(|sol| sol.iter().all(|v| v.is_finite()))
        .ok_or(MvcmError::SingularSystem { location, response })
}

/// Local polynomial fit of `values` at location `s`.
pub fn local_fit(
    config: &LocalFitConfig,
    grid: &[f64],
    values: &[f64],
    s: f64,
) -> Result<LocalFit> {
    if grid.len() != values.len() {
        return Err(MvcmError::DimensionMismatch(format!(
            "grid has {} points but values has {}",
            grid.len(),
            values.len()
        )));
    }
    let system = assemble(config, grid, Some(values), s)?;
    let coeffs = solve_spd_with_ridge(&system.gram, &system.rhs, config.ridge, s, 0)?;
    Ok(LocalFit {
        scaled_coeffs: coeffs.iter().copied().collect(),
        bandwidth_used: system.window.bandwidth,
        widened: system.window.widened,
    })
}

/// Equivalent-kernel weight row at location `s`.
pub fn smoother_row(config: &LocalFitConfig, grid: &[f64], s: f64) -> Result<SmootherRow> {
    let system = assemble(config, grid, None, s)?;
    let d = config.degree;
    let mut e0 = DVector::zeros(d + 1);
    e0[0] = 1.0;
    let alpha = solve_spd_with_ridge(&system.gram, &e0, config.ridge, s, 0)?;
    let h = system.window.bandwidth;
    let mut weights = vec![0.0; grid.len()];
    for m in system.window.lo..system.window.hi {
        let t = (grid[m] - s) / h;
        let w = config.kernel.evaluate(t) / h;
        if w == 0.0 {
            continue;
        }
        let mut zdot = 0.0;
        let mut tk = 1.0;
        for k in 0..=d {
            zdot += alpha[k] * tk;
            tk *= t;
        }
        weights[m] = zdot * w;
    }
    Ok(SmootherRow {
        weights,
        bandwidth_used: h,
        widened: system.window.widened,
    })
}
