//! Global tests of linear hypotheses on the coefficient functions and
//! simultaneous confidence bands, both calibrated by Gaussian-multiplier
//! resampling.
//!
//! The coefficient stack `vec(B(s))` is response-major: entry `j*p + l`
//! holds `b_{j,l}(s)`, matching the `Σ_η(s,s) ⊗ Ω_X⁻¹` covariance ordering.
//! Multiplier draws use one counter-based RNG stream per replicate, so
//! results are independent of thread count and completion order. The factor
//! `n` multiplies both the observed statistic and the bootstrap draws, which
//! keeps them on one scale and leaves p-values unaffected.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::coeff::{
    build_pooled_points, estimate_bias, push_taylor_remainder, CoefficientFit, PooledPoint,
};
use crate::dataset::{EvaluationGrid, FunctionalDataset};
use crate::error::{MvcmError, Result};
use crate::fpca::CovarianceEstimate;
use crate::linalg::trapezoid_integral;
use crate::smooth::{smoother_matrix, IndividualCurves};

const RIDGE: f64 = 1e-10;
const CONDITION_LIMIT: f64 = 1e12;
const PSEUDO_INVERSE_CUTOFF: f64 = 1e-10;

/// Right-hand side of the hypothesis `C vec(B(s)) = b_0(s)`.
#[derive(Debug, Clone)]
pub enum B0Spec {
    Zero,
    /// Values tabulated on the fit's evaluation grid, one row per point.
    Tabulated(Array2<f64>),
}

/// Linear hypothesis on the stacked coefficient functions.
#[derive(Debug, Clone)]
pub struct LinearHypothesis {
    c: DMatrix<f64>,
    b0: B0Spec,
}

impl LinearHypothesis {
    /// Validates that `C` has full row rank and `b0` is finite.
    pub fn new(c: DMatrix<f64>, b0: B0Spec) -> Result<Self> {
        let rows = c.nrows();
        if rows == 0 || c.ncols() == 0 {
            return Err(MvcmError::HypothesisMismatch(
                "constraint matrix must be nonempty".into(),
            ));
        }
        let svd = c.clone().svd(false, false);
        let max_sv = svd.singular_values.max();
        let tol = max_sv * (c.ncols().max(rows) as f64) * f64::EPSILON;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        if rank < rows {
            return Err(MvcmError::RankDeficientConstraint { rank, rows });
        }
        if let B0Spec::Tabulated(values) = &b0 {
            if values.dim().1 != rows {
                return Err(MvcmError::HypothesisMismatch(format!(
                    "b0 has {} columns but C has {} rows",
                    values.dim().1,
                    rows
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(MvcmError::HypothesisMismatch(
                    "b0 contains non-finite values".into(),
                ));
            }
        }
        Ok(Self { c, b0 })
    }

    /// Zero constraint on selected stacked coefficients `b_{j,l}(s) = 0`.
    pub fn select_coefficients(j_dim: usize, p: usize, picks: &[(usize, usize)]) -> Result<Self> {
        let mut c = DMatrix::zeros(picks.len(), j_dim * p);
        for (row, &(j, l)) in picks.iter().enumerate() {
            c[(row, j * p + l)] = 1.0;
        }
        Self::new(c, B0Spec::Zero)
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn b0(&self) -> &B0Spec {
        &self.b0
    }

    pub fn rank(&self) -> usize {
        self.c.nrows()
    }

    /// `b_0(s)` by exact lookup on the tabulation grid, linearly
    /// interpolated in between.
    fn b0_at(&self, tab_grid: &[f64], s: f64) -> Result<DVector<f64>> {
        let r = self.rank();
        match &self.b0 {
            B0Spec::Zero => Ok(DVector::zeros(r)),
            B0Spec::Tabulated(values) => {
                if values.dim().0 != tab_grid.len() {
                    return Err(MvcmError::HypothesisMismatch(format!(
                        "b0 tabulated on {} points but the evaluation grid has {}",
                        values.dim().0,
                        tab_grid.len()
                    )));
                }
                let m_len = tab_grid.len();
                if s <= tab_grid[0] {
                    return Ok(DVector::from_fn(r, |k, _| values[[0, k]]));
                }
                if s >= tab_grid[m_len - 1] {
                    return Ok(DVector::from_fn(r, |k, _| values[[m_len - 1, k]]));
                }
                let hi = tab_grid.partition_point(|&g| g < s);
                if (tab_grid[hi] - s).abs() < 1e-12 {
                    return Ok(DVector::from_fn(r, |k, _| values[[hi, k]]));
                }
                let lo = hi - 1;
                let t = (s - tab_grid[lo]) / (tab_grid[hi] - tab_grid[lo]);
                Ok(DVector::from_fn(r, |k, _| {
                    (1.0 - t) * values[[lo, k]] + t * values[[hi, k]]
                }))
            }
        }
    }
}

/// Wild-bootstrap global test output.
#[derive(Debug, Clone)]
pub struct GlobalTestResult {
    pub s_n: f64,
    /// `G⁻¹ #{g : S_n^(g) >= S_n}` over the recorded draws.
    pub p_value: f64,
    /// Number of successful bootstrap draws.
    pub g: usize,
    pub draws: Vec<f64>,
    pub seed: u64,
    /// Replicates aborted by propagated estimation errors.
    pub aborted: usize,
    /// Evaluation points where the middle matrix needed a pseudo-inverse.
    pub pseudo_inverse_points: usize,
    /// Largest absolute entry of the estimated bias surface.
    pub bias_supremum: f64,
}

/// Simultaneous confidence band for one coefficient function.
#[derive(Debug, Clone)]
pub struct BandResult {
    pub j: usize,
    pub l: usize,
    pub alpha: f64,
    pub critical_value: f64,
    pub grid: Vec<f64>,
    /// Bias-corrected coefficient estimate.
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub g: usize,
    pub seed: u64,
}

/// Inverts a symmetric middle matrix, falling back to a spectral
/// pseudo-inverse when conditioning fails.
fn invert_middle(mid: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = mid.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min_abs = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v.abs()));
    let degenerate = max_abs == 0.0
        || min_abs == 0.0
        || max_abs / min_abs > CONDITION_LIMIT
        || eig.eigenvalues.iter().any(|&v| v <= 0.0);
    let cutoff = PSEUDO_INVERSE_CUTOFF * max_abs;
    let dim = mid.nrows();
    let mut inv = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let lambda = eig.eigenvalues[k];
        if lambda.abs() <= cutoff {
            continue;
        }
        let col = eig.eigenvectors.column(k);
        let scale = 1.0 / lambda;
        for a in 0..dim {
            for b in 0..dim {
                inv[(a, b)] += scale * col[a] * col[b];
            }
        }
    }
    (inv, degenerate)
}

struct MiddleMatrices {
    /// Inverse (or pseudo-inverse) of `C (Σ̂_η(s,s) ⊗ Ω̂_X⁻¹) Cᵀ` per point.
    inverses: Vec<DMatrix<f64>>,
    pseudo_points: usize,
}

fn middle_inverses(
    cov: &CovarianceEstimate,
    omega_inv: &DMatrix<f64>,
    c: &DMatrix<f64>,
    points: &[f64],
) -> MiddleMatrices {
    let mut inverses = Vec::with_capacity(points.len());
    let mut pseudo_points = 0usize;
    for &s in points {
        let sigma = cov.diagonal_at_location(s);
        let big = crate::linalg::kronecker(&sigma, omega_inv);
        let mid = c * big * c.transpose();
        let (inv, degenerate) = invert_middle(&mid);
        if degenerate {
            pseudo_points += 1;
        }
        inverses.push(inv);
    }
    MiddleMatrices {
        inverses,
        pseudo_points,
    }
}

fn omega_inverse(fit: &CoefficientFit) -> Result<DMatrix<f64>> {
    let omega = fit.omega_x();
    omega
        .clone()
        .cholesky()
        .map(|chol| chol.inverse())
        .or_else(|| omega.clone().try_inverse())
        .ok_or(MvcmError::DegreesOfFreedom {
            n: fit.n(),
            p: omega.nrows(),
        })
}

fn check_hypothesis_dims(fit: &CoefficientFit, hyp: &LinearHypothesis) -> Result<()> {
    let (j_dim, p, _) = fit.b_hat().dim();
    if hyp.c().ncols() != j_dim * p {
        return Err(MvcmError::HypothesisMismatch(format!(
            "C has {} columns but vec(B) has {} entries",
            hyp.c().ncols(),
            j_dim * p
        )));
    }
    Ok(())
}

/// Response-major coefficient stack at evaluation index `e`.
fn stack_column(b: &Array3<f64>, e: usize) -> DVector<f64> {
    let (j_dim, p, _) = b.dim();
    DVector::from_fn(j_dim * p, |k, _| b[[k / p, k % p, e]])
}

fn statistic_from_parts(
    points: &[f64],
    hyp: &LinearHypothesis,
    mids: &MiddleMatrices,
    bias: Option<&Array3<f64>>,
    b: &Array3<f64>,
    n: usize,
) -> Result<f64> {
    let mut quad = vec![0.0; points.len()];
    for (e, &s) in points.iter().enumerate() {
        let mut stacked = stack_column(b, e);
        if let Some(bias) = bias {
            stacked -= stack_column(bias, e);
        }
        let d = hyp.c() * stacked - hyp.b0_at(points, s)?;
        quad[e] = (d.transpose() * &mids.inverses[e] * &d)[(0, 0)];
    }
    Ok(n as f64 * trapezoid_integral(points, &quad))
}

/// Global test statistic
/// `S_n = n ∫ d(s)ᵀ [C (Σ̂_η(s,s) ⊗ Ω̂_X⁻¹) Cᵀ]⁻¹ d(s) ds` with the
/// bias-corrected contrast `d(s) = C vec(B̂(s) - bias) - b_0(s)`, integrated
/// by the trapezoid rule over the evaluation grid.
pub fn global_statistic(
    fit: &CoefficientFit,
    cov: &CovarianceEstimate,
    hyp: &LinearHypothesis,
    eval: &EvaluationGrid,
) -> Result<f64> {
    if eval.points() != fit.eval_points() {
        return Err(MvcmError::DimensionMismatch(
            "evaluation grid must match the fit's evaluation grid".into(),
        ));
    }
    check_hypothesis_dims(fit, hyp)?;
    let bias = fit.bias().ok_or(MvcmError::MissingBias)?;
    let omega_inv = omega_inverse(fit)?;
    let mids = middle_inverses(cov, &omega_inv, hyp.c(), eval.points());
    statistic_from_parts(eval.points(), hyp, &mids, Some(bias), fit.b_hat(), fit.n())
}

/// How bootstrap draws treat the plug-in bias correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DrawBias {
    /// Re-estimate the bias on every bootstrap sample, so the draws carry
    /// the same correction noise as the observed statistic.
    #[default]
    Replicated,
    /// Drop the bias term in the draws (cheaper; assumes the correction is
    /// negligible under the resampling scheme).
    Dropped,
}

/// Wild-bootstrap global test of `C vec(B(s)) = b_0(s)`.
///
/// Step 1 projects the fit onto the constraint pointwise with metric
/// `Σ̂_η(s,s) ⊗ Ω̂_X⁻¹` and splits the implied residuals into smooth and
/// noise parts. Step 2 rebuilds responses with one standard normal
/// multiplier per subject curve and one per observation, refits with the
/// original bandwidths, and evaluates the statistic on each draw. Step 3
/// counts draws at least as large as the observed statistic.
///
/// Draws re-estimate the plug-in bias by default; the pilot-curvature noise
/// in the correction is not negligible at moderate samples, and dropping it
/// makes the test anti-conservative.
pub fn wild_bootstrap_test(
    data: &FunctionalDataset,
    fit: &CoefficientFit,
    curves: &IndividualCurves,
    cov: &CovarianceEstimate,
    hyp: &LinearHypothesis,
    g_reps: usize,
    seed: u64,
) -> Result<GlobalTestResult> {
    wild_bootstrap_test_with_options(data, fit, curves, cov, hyp, g_reps, seed, DrawBias::default())
}

/// [`wild_bootstrap_test`] with an explicit draw-side bias policy.
#[allow(clippy::too_many_arguments)]
pub fn wild_bootstrap_test_with_options(
    data: &FunctionalDataset,
    fit: &CoefficientFit,
    curves: &IndividualCurves,
    cov: &CovarianceEstimate,
    hyp: &LinearHypothesis,
    g_reps: usize,
    seed: u64,
    draw_bias: DrawBias,
) -> Result<GlobalTestResult> {
    if g_reps == 0 {
        return Err(MvcmError::InvalidConfig(
            "bootstrap replication count must be at least 1".into(),
        ));
    }
    check_hypothesis_dims(fit, hyp)?;
    let (n, j_dim, m_len) = fit.residuals().dim();
    let p = data.p();
    let eval_points = fit.eval_points().to_vec();
    let grid = data.grid();
    let kernel = fit.kernel();

    // Bias-corrected observed statistic; the bias is computed here when the
    // fit does not already carry one.
    let owned_bias;
    let bias = match fit.bias() {
        Some(b) => b,
        None => {
            let eval = EvaluationGrid::new(eval_points.clone())?;
            owned_bias = estimate_bias(data, fit, &eval)?.bias;
            &owned_bias
        }
    };
    let omega_inv = omega_inverse(fit)?;
    let mids = middle_inverses(cov, &omega_inv, hyp.c(), &eval_points);
    let s_n = statistic_from_parts(&eval_points, hyp, &mids, Some(bias), fit.b_hat(), n)?;

    // Step 1: constrained fit on the data grid.
    let mids_data = middle_inverses(cov, &omega_inv, hyp.c(), grid);
    let mut b_star = Array3::zeros((j_dim, p, m_len));
    for m in 0..m_len {
        let stacked = stack_column(fit.b_data(), m);
        let sigma = cov.diagonal_at_index(m);
        let big = crate::linalg::kronecker(&sigma, &omega_inv);
        let gap = hyp.c() * &stacked - hyp.b0_at(&eval_points, grid[m])?;
        let correction = &big * hyp.c().transpose() * &mids_data.inverses[m] * gap;
        let constrained = stacked - correction;
        for j in 0..j_dim {
            for l in 0..p {
                b_star[[j, l, m]] = constrained[j * p + l];
            }
        }
    }

    // Constrained residual split: smooth part by re-smoothing, noise rest.
    let mut eta_star = Array3::zeros((n, j_dim, m_len));
    let mut eps_star = Array3::zeros((n, j_dim, m_len));
    let mut r_star = Array3::zeros((n, j_dim, m_len));
    for j in 0..j_dim {
        let s_mat = smoother_matrix(grid, curves.bandwidths()[j], kernel)?;
        for i in 0..n {
            let xi = data.x().row(i);
            for m in 0..m_len {
                let mut fitted = 0.0;
                for l in 0..p {
                    fitted += xi[l] * b_star[[j, l, m]];
                }
                r_star[[i, j, m]] = data.y()[[i, j, m]] - fitted;
            }
            for row in 0..m_len {
                let mut acc = 0.0;
                for col in 0..m_len {
                    let w = s_mat[(row, col)];
                    if w != 0.0 {
                        acc += w * r_star[[i, j, col]];
                    }
                }
                eta_star[[i, j, row]] = acc;
                eps_star[[i, j, row]] = r_star[[i, j, row]] - acc;
            }
        }
    }

    // Refit machinery: factored pooled systems per response and the
    // deterministic part of every bootstrap refit (the multiplier terms have
    // zero conditional mean, so the constrained surface refit is shared).
    let mut systems = Vec::with_capacity(j_dim);
    let mut b_det = Array3::zeros((j_dim, p, eval_points.len()));
    for j in 0..j_dim {
        let sys = build_pooled_points(data, kernel, fit.bandwidths()[j], 1, &eval_points, RIDGE)?;
        let mut q_det = Array2::zeros((m_len, p));
        for m in 0..m_len {
            // Σ_i x_i (x_iᵀ B*_j(s_m)) = Ω_X B*_j(s_m)
            for a in 0..p {
                let mut acc = 0.0;
                for l in 0..p {
                    acc += fit.omega_x()[(a, l)] * b_star[[j, l, m]];
                }
                q_det[[m, a]] = acc;
            }
        }
        for (e, point) in sys.iter().enumerate() {
            let rhs = point.rhs_from_grid_rows(&q_det);
            let sol = point.solve_value_rows(&rhs)?;
            for l in 0..p {
                b_det[[j, l, e]] = sol[l];
            }
        }
        systems.push(sys);
    }

    // Pilot machinery for draw-side bias replication: local cubic systems at
    // the default pilot bandwidth plus their deterministic coefficients.
    let e_len = eval_points.len();
    let mut pilot_systems: Vec<Vec<PooledPoint>> = Vec::new();
    let mut pilot_det = Array3::zeros((j_dim, 4 * p, e_len));
    if draw_bias == DrawBias::Replicated {
        for j in 0..j_dim {
            let pilot_h = 2.0 * fit.bandwidths()[j];
            let sys = build_pooled_points(data, kernel, pilot_h, 3, &eval_points, RIDGE)?;
            let mut q_det = Array2::zeros((m_len, p));
            for m in 0..m_len {
                for a in 0..p {
                    let mut acc = 0.0;
                    for l in 0..p {
                        acc += fit.omega_x()[(a, l)] * b_star[[j, l, m]];
                    }
                    q_det[[m, a]] = acc;
                }
            }
            for (e, point) in sys.iter().enumerate() {
                let rhs = point.rhs_from_grid_rows(&q_det);
                let sol = point.solve(&rhs)?;
                for k in 0..4 * p {
                    pilot_det[[j, k, e]] = sol[k];
                }
            }
            pilot_systems.push(sys);
        }
    }

    let x = data.x();
    let omega = fit.omega_x();
    let grid_vec = grid.to_vec();
    let draws_raw: Vec<Option<f64>> = (0..g_reps)
        .into_par_iter()
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(g as u64 + 1);
            let normal = StandardNormal;
            let tau_subject: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let tau_point: Vec<f64> = (0..n * m_len).map(|_| normal.sample(&mut rng)).collect();

            let mut b_g = Array3::zeros((j_dim, p, e_len));
            let mut bias_g = Array3::zeros((j_dim, p, e_len));
            let mut q = Array2::zeros((m_len, p));
            for j in 0..j_dim {
                q.fill(0.0);
                for i in 0..n {
                    let ti = tau_subject[i];
                    let xrow = x.row(i);
                    for m in 0..m_len {
                        let noise = ti * eta_star[[i, j, m]]
                            + tau_point[i * m_len + m] * eps_star[[i, j, m]];
                        for l in 0..p {
                            q[[m, l]] += noise * xrow[l];
                        }
                    }
                }
                for (e, point) in systems[j].iter().enumerate() {
                    let rhs = point.rhs_from_grid_rows(&q);
                    let sol = point.solve_value_rows(&rhs).ok()?;
                    for l in 0..p {
                        b_g[[j, l, e]] = b_det[[j, l, e]] + sol[l];
                    }
                }
                if draw_bias == DrawBias::Replicated {
                    for (e, point) in pilot_systems[j].iter().enumerate() {
                        let rhs = point.rhs_from_grid_rows(&q);
                        let sol = point.solve(&rhs).ok()?;
                        let ph2 = point.h_used * point.h_used;
                        let ph3 = ph2 * point.h_used;
                        let mut d2 = DVector::zeros(p);
                        let mut d3 = DVector::zeros(p);
                        for l in 0..p {
                            d2[l] = 2.0 * (pilot_det[[j, 4 * l + 2, e]] + sol[4 * l + 2]) / ph2;
                            d3[l] = 6.0 * (pilot_det[[j, 4 * l + 3, e]] + sol[4 * l + 3]) / ph3;
                        }
                        let point_bias =
                            push_taylor_remainder(&systems[j][e], &grid_vec, omega, &d2, &d3)
                                .ok()?;
                        for l in 0..p {
                            bias_g[[j, l, e]] = point_bias[l];
                        }
                    }
                }
            }
            let draw_bias_ref = (draw_bias == DrawBias::Replicated).then_some(&bias_g);
            statistic_from_parts(&eval_points, hyp, &mids, draw_bias_ref, &b_g, n).ok()
        })
        .collect();

    let aborted = draws_raw.iter().filter(|d| d.is_none()).count();
    if aborted as f64 > 0.01 * g_reps as f64 {
        return Err(MvcmError::BootstrapAborted {
            aborted,
            total: g_reps,
            reason: "singular refit systems in bootstrap replicates".into(),
        });
    }
    let draws: Vec<f64> = draws_raw.into_iter().flatten().collect();
    let g = draws.len();
    let exceed = draws.iter().filter(|&&v| v >= s_n).count();
    let bias_supremum = bias.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    Ok(GlobalTestResult {
        s_n,
        p_value: exceed as f64 / g as f64,
        g,
        draws,
        seed,
        aborted,
        pseudo_inverse_points: mids.pseudo_points + mids_data.pseudo_points,
        bias_supremum,
    })
}

/// Per-replicate suprema of the multiplier process, `sup_s |e_lᵀ G_j(s)|`,
/// as a `G`-vector of `J x p` matrices. Useful for extracting critical
/// values at several levels from one shared set of draws.
pub fn scb_suprema(
    data: &FunctionalDataset,
    fit: &CoefficientFit,
    g_reps: usize,
    seed: u64,
) -> Result<Vec<Array2<f64>>> {
    if g_reps == 0 {
        return Err(MvcmError::InvalidConfig(
            "resampling replication count must be at least 1".into(),
        ));
    }
    let (n, j_dim, _m_len) = fit.residuals().dim();
    let p = data.p();
    let eval_points = fit.eval_points().to_vec();
    let e_len = eval_points.len();
    let kernel = fit.kernel();
    let sqrt_n = (n as f64).sqrt();

    // Per-subject multiplier-process components: influence[j][(i, e, l)].
    let mut influence = Vec::with_capacity(j_dim);
    for j in 0..j_dim {
        let systems =
            build_pooled_points(data, kernel, fit.bandwidths()[j], 1, &eval_points, RIDGE)?;
        let mut g_mat = Array3::zeros((n, e_len, p));
        for (e, point) in systems.iter().enumerate() {
            let d1 = point.degree + 1;
            for i in 0..n {
                let xi = data.x().row(i);
                // w_i = Σ_m K z r̂_ij(s_m) over the window.
                let mut w0 = 0.0;
                let mut w1 = 0.0;
                for (idx, m) in (point.lo..point.hi).enumerate() {
                    let w = point.weights[idx];
                    if w == 0.0 {
                        continue;
                    }
                    let wr = w * fit.residuals()[[i, j, m]];
                    w0 += wr * point.z[idx * d1];
                    w1 += wr * point.z[idx * d1 + 1];
                }
                let mut rhs = DVector::zeros(2 * p);
                for l in 0..p {
                    rhs[2 * l] = xi[l] * w0;
                    rhs[2 * l + 1] = xi[l] * w1;
                }
                let sol = point.solve_value_rows(&rhs)?;
                for l in 0..p {
                    g_mat[[i, e, l]] = sol[l];
                }
            }
        }
        influence.push(g_mat);
    }

    let suprema: Vec<Array2<f64>> = (0..g_reps)
        .into_par_iter()
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(g as u64 + 1);
            let normal = StandardNormal;
            let tau: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let mut sup = Array2::zeros((j_dim, p));
            for (j, g_mat) in influence.iter().enumerate() {
                for e in 0..e_len {
                    let mut acc = vec![0.0f64; p];
                    for i in 0..n {
                        let ti = tau[i];
                        if ti == 0.0 {
                            continue;
                        }
                        for l in 0..p {
                            acc[l] += ti * g_mat[[i, e, l]];
                        }
                    }
                    for l in 0..p {
                        let v = (sqrt_n * acc[l]).abs();
                        if v > sup[[j, l]] {
                            sup[[j, l]] = v;
                        }
                    }
                }
            }
            sup
        })
        .collect();
    Ok(suprema)
}

/// The `⌈(1-α)G⌉`-th order statistic of the suprema, per coefficient.
pub fn critical_values_from_suprema(
    suprema: &[Array2<f64>],
    alpha: f64,
) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(MvcmError::InvalidConfig(format!(
            "alpha = {alpha} outside (0, 1)"
        )));
    }
    let g = suprema.len();
    let (j_dim, p) = suprema[0].dim();
    let rank = (((1.0 - alpha) * g as f64).ceil() as usize).clamp(1, g);
    let mut out = Array2::zeros((j_dim, p));
    let mut buffer = vec![0.0f64; g];
    for j in 0..j_dim {
        for l in 0..p {
            for (idx, sup) in suprema.iter().enumerate() {
                buffer[idx] = sup[[j, l]];
            }
            buffer.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out[[j, l]] = buffer[rank - 1];
        }
    }
    Ok(out)
}

/// Critical values `C_jl(α)` for every coefficient at once, from one shared
/// set of multiplier draws.
pub fn scb_critical_values(
    data: &FunctionalDataset,
    fit: &CoefficientFit,
    alpha: f64,
    g_reps: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let suprema = scb_suprema(data, fit, g_reps, seed)?;
    critical_values_from_suprema(&suprema, alpha)
}

/// Critical value `C_jl(α)` for one coefficient.
pub fn scb_critical_value(
    data: &FunctionalDataset,
    fit: &CoefficientFit,
    j: usize,
    l: usize,
    alpha: f64,
    g_reps: usize,
    seed: u64,
) -> Result<f64> {
    let values = scb_critical_values(data, fit, alpha, g_reps, seed)?;
    Ok(values[[j, l]])
}

/// Simultaneous confidence band
/// `b̂_jl(s) - bias ± C_jl(α)/√n` on the fit's evaluation grid.
#[allow(clippy::too_many_arguments)]
pub fn build_band(
    fit: &CoefficientFit,
    j: usize,
    l: usize,
    alpha: f64,
    critical_value: f64,
    n: usize,
    g_reps: usize,
    seed: u64,
) -> Result<BandResult> {
    let bias = fit.bias().ok_or(MvcmError::MissingBias)?;
    let e_len = fit.eval_points().len();
    let half_width = critical_value / (n as f64).sqrt();
    let mut estimate = Vec::with_capacity(e_len);
    let mut lower = Vec::with_capacity(e_len);
    let mut upper = Vec::with_capacity(e_len);
    for e in 0..e_len {
        let corrected = fit.b_hat()[[j, l, e]] - bias[[j, l, e]];
        estimate.push(corrected);
        lower.push(corrected - half_width);
        upper.push(corrected + half_width);
    }
    Ok(BandResult {
        j,
        l,
        alpha,
        critical_value,
        grid: fit.eval_points().to_vec(),
        estimate,
        lower,
        upper,
        g: g_reps,
        seed,
    })
}
