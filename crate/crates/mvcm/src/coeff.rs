//! Pooled local linear estimation of the coefficient functions.
//!
//! For each response the coefficient curves solve, at every evaluation
//! point, the kernel-weighted normal equations over all subjects and grid
//! points. Because every subject shares the grid, the pooled cross-product
//! matrix factors as `Ω_X ⊗ Z(s, h)` with `Ω_X = Σ_i x_i x_iᵀ` and
//! `Z(s, h) = Σ_m K_h(s_m - s) z_h(s_m - s)^⊗2`; sums over subjects are
//! pre-aggregated per grid point so the per-point system assembly is cheap.
//! The same factored systems back leave-one-curve-out cross-validation,
//! plug-in bias estimation and the bootstrap refits in `inference`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};
use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::dataset::{EvaluationGrid, FunctionalDataset};
use crate::error::{MvcmError, Result};
use crate::kernel::check_bandwidth;
use crate::local_poly::resolve_window;
use crate::Kernel;

/// Relative tolerance for treating cross-validation scores as tied;
/// ties resolve toward the larger (smoother) bandwidth.
const CV_TIE_REL_TOL: f64 = 1e-9;

const DEFAULT_RIDGE: f64 = 1e-10;

/// Estimated coefficient functions, residuals, and bandwidth diagnostics.
#[derive(Debug, Clone)]
pub struct CoefficientFit {
    kernel: Kernel,
    bandwidths: Vec<f64>,
    eval_points: Vec<f64>,
    /// `J x p x E` coefficient estimates on the evaluation grid.
    b_hat: Array3<f64>,
    /// `J x 2p x E` full local-linear solutions `vec(Â_j(s))`: for covariate
    /// `l` the pair `(b̂_jl(s), h ḃ̂_jl(s))` occupies rows `2l, 2l+1`.
    a_hat: Array3<f64>,
    /// `J x p x M` coefficient estimates on the data grid (drives residuals).
    b_data: Array3<f64>,
    /// `n x J x M` residuals `y_ij(s_m) - x_iᵀ B̂_j(s_m)`.
    residuals: Array3<f64>,
    /// `J x p x E` estimated bias, once attached.
    bias: Option<Array3<f64>>,
    /// Cross-validation tables `(candidate h, CV score)`, when selected here.
    cv_tables: Vec<Option<Vec<(f64, f64)>>>,
    /// `Ω̂_X = Σ_i x_i x_iᵀ` of the fitted design.
    omega_x: DMatrix<f64>,
    widened_windows: usize,
}

impl CoefficientFit {
    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn eval_points(&self) -> &[f64] {
        &self.eval_points
    }

    pub fn b_hat(&self) -> &Array3<f64> {
        &self.b_hat
    }

    pub fn a_hat(&self) -> &Array3<f64> {
        &self.a_hat
    }

    /// Coefficient estimates on the data grid.
    pub fn b_data(&self) -> &Array3<f64> {
        &self.b_data
    }

    pub fn residuals(&self) -> &Array3<f64> {
        &self.residuals
    }

    pub fn bias(&self) -> Option<&Array3<f64>> {
        self.bias.as_ref()
    }

    /// `Ω̂_X = Σ_i x_i x_iᵀ` of the fitted design.
    pub fn omega_x(&self) -> &DMatrix<f64> {
        &self.omega_x
    }

    /// Subject count of the fitted dataset.
    pub fn n(&self) -> usize {
        self.residuals.dim().0
    }

    pub fn cv_tables(&self) -> &[Option<Vec<(f64, f64)>>] {
        &self.cv_tables
    }

    /// Number of evaluation windows that had to be widened.
    pub fn widened_windows(&self) -> usize {
        self.widened_windows
    }

    /// Attaches a bias surface (dimensions `J x p x E`).
    pub fn set_bias(&mut self, bias: Array3<f64>) -> Result<()> {
        let expected = self.b_hat.dim();
        if bias.dim() != expected {
            return Err(MvcmError::DimensionMismatch(format!(
                "bias dimensions {:?} do not match coefficient dimensions {:?}",
                bias.dim(),
                expected
            )));
        }
        self.bias = Some(bias);
        Ok(())
    }

    /// Attaches bandwidth-selection tables (one optional table per
    /// response).
    pub fn set_cv_tables(&mut self, tables: Vec<Option<Vec<(f64, f64)>>>) {
        assert_eq!(tables.len(), self.bandwidths.len());
        self.cv_tables = tables;
    }
}

enum PointFactor {
    Chol(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

/// One evaluation point of the pooled system: kernel weights, local basis
/// and a reusable factorization of `Σ(s, h) = Ω_X ⊗ Z(s, h)`.
pub(crate) struct PooledPoint {
    pub(crate) s: f64,
    pub(crate) lo: usize,
    pub(crate) hi: usize,
    /// `K_h(s_m - s)` for `m` in `lo..hi`.
    pub(crate) weights: Vec<f64>,
    /// Flattened `(hi - lo) x (degree + 1)` scaled basis values.
    pub(crate) z: Vec<f64>,
    pub(crate) degree: usize,
    pub(crate) h_used: f64,
    pub(crate) widened: bool,
    p: usize,
    factor: PointFactor,
}

impl PooledPoint {
    pub(crate) fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let sol = match &self.factor {
            PointFactor::Chol(chol) => chol.solve(rhs),
            PointFactor::Lu(lu) => lu.solve(rhs).ok_or(MvcmError::SingularSystem {
                location: self.s,
                response: 0,
            })?,
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(MvcmError::SingularSystem {
                location: self.s,
                response: 0,
            });
        }
        Ok(sol)
    }

    /// Assembles `Σ_m K_h(s_m - s) [q_m ⊗ z_h(s_m - s)]` for per-grid-point
    /// vectors `q_m` supplied as rows of an `M x p` array.
    pub(crate) fn rhs_from_grid_rows(&self, q: &Array2<f64>) -> DVector<f64> {
        let d1 = self.degree + 1;
        let mut rhs = DVector::zeros(self.p * d1);
        for (idx, m) in (self.lo..self.hi).enumerate() {
            let w = self.weights[idx];
            if w == 0.0 {
                continue;
            }
            let zrow = &self.z[idx * d1..(idx + 1) * d1];
            let qrow = q.row(m);
            for l in 0..self.p {
                let wq = w * qrow[l];
                for k in 0..d1 {
                    rhs[l * d1 + k] += wq * zrow[k];
                }
            }
        }
        rhs
    }

    /// Solves the pooled system and extracts the value rows (one per
    /// covariate) of the solution.
    pub(crate) fn solve_value_rows(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let sol = self.solve(rhs)?;
        let d1 = self.degree + 1;
        Ok(DVector::from_fn(self.p, |l, _| sol[l * d1]))
    }
}

/// Builds factored pooled systems at each requested location.
pub(crate) fn build_pooled_points(
    data: &FunctionalDataset,
    kernel: Kernel,
    h: f64,
    degree: usize,
    points: &[f64],
    ridge: f64,
) -> Result<Vec<PooledPoint>> {
    check_bandwidth(h)?;
    let omega = data.omega_x();
    let grid = data.grid();
    let p = data.p();
    points
        .iter()
        .map(|&s| build_point(grid, &omega, p, kernel, h, degree, s, ridge))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn build_point(
    grid: &[f64],
    omega: &DMatrix<f64>,
    p: usize,
    kernel: Kernel,
    h: f64,
    degree: usize,
    s: f64,
    ridge: f64,
) -> Result<PooledPoint> {
    let window = resolve_window(grid, s, h, degree)?;
    let h_used = window.bandwidth;
    let d1 = degree + 1;
    let count = window.hi - window.lo;
    let mut weights = Vec::with_capacity(count);
    let mut z = Vec::with_capacity(count * d1);
    let mut zsum = DMatrix::zeros(d1, d1);
    for m in window.lo..window.hi {
        let t = (grid[m] - s) / h_used;
        let w = kernel.evaluate(t) / h_used;
        weights.push(w);
        let base = z.len();
        z.push(1.0);
        for k in 1..d1 {
            let prev = z[base + k - 1];
            z.push(prev * t);
        }
        if w != 0.0 {
            let zrow = &z[base..base + d1];
            for a in 0..d1 {
                let wz = w * zrow[a];
                for b in 0..d1 {
                    zsum[(a, b)] += wz * zrow[b];
                }
            }
        }
    }
    let sigma = crate::linalg::kronecker(omega, &zsum);
    let factor = if let Some(chol) = Cholesky::new(sigma.clone()) {
        PointFactor::Chol(chol)
    } else {
        let dim = sigma.nrows();
        let scale = ridge * sigma.trace() / dim as f64;
        let mut ridged = sigma;
        for k in 0..dim {
            ridged[(k, k)] += scale;
        }
        let lu = ridged.lu();
        if !lu.is_invertible() {
            return Err(MvcmError::SingularSystem {
                location: s,
                response: 0,
            });
        }
        PointFactor::Lu(lu)
    };
    Ok(PooledPoint {
        s,
        lo: window.lo,
        hi: window.hi,
        weights,
        z,
        degree,
        h_used,
        widened: window.widened,
        p,
        factor,
    })
}

/// Per-grid-point covariate-weighted response sums `Σ_i y_ij(s_m) x_i`,
/// returned as an `M x p` array.
pub(crate) fn response_covariate_sums(data: &FunctionalDataset, j: usize) -> Array2<f64> {
    let (n, _, m_len) = data.y().dim();
    let p = data.p();
    let mut q = Array2::zeros((m_len, p));
    for i in 0..n {
        let xi = data.x().row(i);
        for m in 0..m_len {
            let yv = data.y()[[i, j, m]];
            for l in 0..p {
                q[[m, l]] += yv * xi[l];
            }
        }
    }
    q
}

/// Estimates the coefficient functions `B̂_j` at the evaluation grid with the
/// given per-response bandwidths, and residuals on the data grid.
pub fn estimate_coefficients(
    data: &FunctionalDataset,
    bandwidths: &[f64],
    eval: &EvaluationGrid,
    kernel: Kernel,
) -> Result<CoefficientFit> {
    let j_dim = data.num_responses();
    if bandwidths.len() != j_dim {
        return Err(MvcmError::DimensionMismatch(format!(
            "{} bandwidths supplied for {} responses",
            bandwidths.len(),
            j_dim
        )));
    }
    let n = data.n();
    let p = data.p();
    let m_len = data.num_points();
    let e_len = eval.len();
    let eval_is_data_grid = eval.points() == data.grid();

    let mut b_hat = Array3::zeros((j_dim, p, e_len));
    let mut a_hat = Array3::zeros((j_dim, 2 * p, e_len));
    let mut b_data = Array3::zeros((j_dim, p, m_len));
    let mut widened = 0usize;

    for j in 0..j_dim {
        let h = bandwidths[j];
        check_bandwidth(h).map_err(|_| MvcmError::InvalidBandwidth { value: h })?;
        let q = response_covariate_sums(data, j);
        let eval_systems =
            build_pooled_points(data, kernel, h, 1, eval.points(), DEFAULT_RIDGE)
                .map_err(|e| tag_response(e, j))?;
        for (e, sys) in eval_systems.iter().enumerate() {
            let rhs = sys.rhs_from_grid_rows(&q);
            let sol = sys.solve(&rhs).map_err(|err| tag_response(err, j))?;
            for l in 0..p {
                b_hat[[j, l, e]] = sol[2 * l];
                a_hat[[j, 2 * l, e]] = sol[2 * l];
                a_hat[[j, 2 * l + 1, e]] = sol[2 * l + 1];
            }
            if sys.widened {
                widened += 1;
            }
        }
        if eval_is_data_grid {
            for l in 0..p {
                for m in 0..m_len {
                    b_data[[j, l, m]] = b_hat[[j, l, m]];
                }
            }
        } else {
            let data_systems =
                build_pooled_points(data, kernel, h, 1, data.grid(), DEFAULT_RIDGE)
                    .map_err(|e| tag_response(e, j))?;
            for (m, sys) in data_systems.iter().enumerate() {
                let rhs = sys.rhs_from_grid_rows(&q);
                let sol = sys.solve_value_rows(&rhs).map_err(|err| tag_response(err, j))?;
                for l in 0..p {
                    b_data[[j, l, m]] = sol[l];
                }
            }
        }
    }

    let mut residuals = Array3::zeros((n, j_dim, m_len));
    for i in 0..n {
        let xi = data.x().row(i);
        for j in 0..j_dim {
            for m in 0..m_len {
                let mut fitted = 0.0;
                for l in 0..p {
                    fitted += xi[l] * b_data[[j, l, m]];
                }
                residuals[[i, j, m]] = data.y()[[i, j, m]] - fitted;
            }
        }
    }

    Ok(CoefficientFit {
        kernel,
        bandwidths: bandwidths.to_vec(),
        eval_points: eval.points().to_vec(),
        b_hat,
        a_hat,
        b_data,
        residuals,
        bias: None,
        cv_tables: vec![None; j_dim],
        omega_x: data.omega_x(),
        widened_windows: widened,
    })
}

fn tag_response(err: MvcmError, j: usize) -> MvcmError {
    match err {
        MvcmError::SingularSystem { location, .. } => MvcmError::SingularSystem {
            location,
            response: j,
        },
        other => other,
    }
}

/// Default cross-validation candidate bandwidths: 20 log-spaced values from
/// twice the largest grid gap to half the grid range.
pub fn default_h1_candidates(data: &FunctionalDataset) -> Vec<f64> {
    let grid = data.grid();
    let max_gap = grid
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0f64, f64::max);
    let range = grid[grid.len() - 1] - grid[0];
    let hi = 0.5 * range;
    let mut lo = 2.0 * max_gap;
    if lo >= hi {
        lo = hi / 4.0;
    }
    log_spaced(lo, hi, 20)
}

pub(crate) fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (llo + (lhi - llo) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Leave-one-curve-out cross-validation for the coefficient bandwidth of
/// response `j`.
///
/// For each candidate, the full pooled system is assembled once per grid
/// point and each subject's cached cross-products are subtracted to form the
/// leave-one-out system; this matches a naive refit to machine precision.
/// Ties resolve toward the larger bandwidth.
pub fn cross_validate_bandwidth(
    data: &FunctionalDataset,
    j: usize,
    candidates: &[f64],
    kernel: Kernel,
) -> Result<(f64, Vec<(f64, f64)>)> {
    if candidates.is_empty() {
        return Err(MvcmError::BandwidthSelection {
            response: j,
            reason: "empty candidate grid".into(),
        });
    }
    let n = data.n();
    let m_len = data.num_points();
    let x_rows: Vec<DVector<f64>> = (0..n).map(|i| data.x_row(i)).collect();

    let scores: Vec<Option<(f64, f64)>> = candidates
        .par_iter()
        .map(|&h| cv_score(data, j, h, kernel, &x_rows).map(|score| (h, score)))
        .collect();

    let table: Vec<(f64, f64)> = scores.iter().filter_map(|v| *v).collect();
    if table.is_empty() {
        return Err(MvcmError::BandwidthSelection {
            response: j,
            reason: format!(
                "all {} candidates produced degenerate windows (n = {n}, M = {m_len})",
                candidates.len(),
            ),
        });
    }
    let best_score = table
        .iter()
        .map(|&(_, s)| s)
        .fold(f64::INFINITY, f64::min);
    let tie_cut = best_score + CV_TIE_REL_TOL * (1.0 + best_score.abs());
    let chosen = table
        .iter()
        .filter(|&&(_, s)| s <= tie_cut)
        .map(|&(h, _)| h)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((chosen, table))
}

fn cv_score(
    data: &FunctionalDataset,
    j: usize,
    h: f64,
    kernel: Kernel,
    x_rows: &[DVector<f64>],
) -> Option<f64> {
    let grid = data.grid();
    let n = data.n();
    let p = data.p();
    let m_len = grid.len();
    let systems = build_pooled_points(data, kernel, h, 1, grid, DEFAULT_RIDGE).ok()?;
    let mut total = 0.0;
    let mut w_i = vec![[0.0f64; 2]; n];
    for (m_eval, sys) in systems.iter().enumerate() {
        // Per-subject kernel-weighted cross-products w_i = Σ_m K z y_ij(s_m).
        for wi in w_i.iter_mut() {
            *wi = [0.0, 0.0];
        }
        for (idx, m) in (sys.lo..sys.hi).enumerate() {
            let w = sys.weights[idx];
            if w == 0.0 {
                continue;
            }
            let z0 = sys.z[idx * 2];
            let z1 = sys.z[idx * 2 + 1];
            for i in 0..n {
                let wy = w * data.y()[[i, j, m]];
                w_i[i][0] += wy * z0;
                w_i[i][1] += wy * z1;
            }
        }
        // Z(s) and the unridged full cross-product matrix.
        let d1 = 2;
        let mut zsum = [0.0f64; 4];
        for (idx, _) in (sys.lo..sys.hi).enumerate() {
            let w = sys.weights[idx];
            if w == 0.0 {
                continue;
            }
            let z0 = sys.z[idx * d1];
            let z1 = sys.z[idx * d1 + 1];
            zsum[0] += w * z0 * z0;
            zsum[1] += w * z0 * z1;
            zsum[2] += w * z1 * z0;
            zsum[3] += w * z1 * z1;
        }
        let zmat = DMatrix::from_row_slice(2, 2, &zsum);
        let omega = data.omega_x();
        let sigma_full = crate::linalg::kronecker(&omega, &zmat);
        let mut rhs_full = DVector::zeros(2 * p);
        for (i, xi) in x_rows.iter().enumerate() {
            for l in 0..p {
                rhs_full[2 * l] += xi[l] * w_i[i][0];
                rhs_full[2 * l + 1] += xi[l] * w_i[i][1];
            }
        }
        for (i, xi) in x_rows.iter().enumerate() {
            // Subtract subject i's cross-products and solve the reduced system.
            let mut sigma_i = sigma_full.clone();
            for a in 0..p {
                for b in 0..p {
                    let xx = xi[a] * xi[b];
                    sigma_i[(2 * a, 2 * b)] -= xx * zsum[0];
                    sigma_i[(2 * a, 2 * b + 1)] -= xx * zsum[1];
                    sigma_i[(2 * a + 1, 2 * b)] -= xx * zsum[2];
                    sigma_i[(2 * a + 1, 2 * b + 1)] -= xx * zsum[3];
                }
            }
            let mut rhs_i = rhs_full.clone();
            for l in 0..p {
                rhs_i[2 * l] -= xi[l] * w_i[i][0];
                rhs_i[2 * l + 1] -= xi[l] * w_i[i][1];
            }
            let sol = crate::local_poly::solve_spd_with_ridge(
                &sigma_i,
                &rhs_i,
                DEFAULT_RIDGE,
                sys.s,
                j,
            )
            .ok()?;
            let mut pred = 0.0;
            for l in 0..p {
                pred += xi[l] * sol[2 * l];
            }
            let err = data.y()[[i, j, m_eval]] - pred;
            total += err * err;
        }
    }
    let score = total / (n as f64 * m_len as f64);
    score.is_finite().then_some(score)
}

/// Second- and third-derivative pilots from pooled local cubic fits.
#[derive(Debug, Clone)]
pub struct DerivativePilot {
    /// `J x p x E` second derivatives.
    pub d2: Array3<f64>,
    /// `J x p x E` third derivatives.
    pub d3: Array3<f64>,
    /// Pilot bandwidth per response (twice the fit bandwidth).
    pub bandwidths: Vec<f64>,
}

/// Plug-in bias surface with its pilot diagnostics.
#[derive(Debug, Clone)]
pub struct BiasEstimate {
    /// `J x p x E` estimated bias of `B̂`.
    pub bias: Array3<f64>,
    pub pilot: DerivativePilot,
    /// Evaluation points where the pilot fit failed and bias fell back to 0.
    pub fallback_points: usize,
}

/// Pre-asymptotic plug-in bias with the default pilot policy: local cubic
/// pilots at twice the fit bandwidth.
pub fn estimate_bias(
    data: &FunctionalDataset,
    fit: &CoefficientFit,
    eval: &EvaluationGrid,
) -> Result<BiasEstimate> {
    let pilots: Vec<f64> = fit.bandwidths().iter().map(|h| 2.0 * h).collect();
    estimate_bias_with_pilot(data, fit, eval, &pilots)
}

/// Pre-asymptotic plug-in bias of the coefficient estimates.
///
/// A pooled local cubic fit at the pilot bandwidth supplies curvature
/// pilots; the Taylor remainder they imply is pushed through the same pooled
/// system that produced `B̂`.
pub fn estimate_bias_with_pilot(
    data: &FunctionalDataset,
    fit: &CoefficientFit,
    eval: &EvaluationGrid,
    pilots: &[f64],
) -> Result<BiasEstimate> {
    let j_dim = data.num_responses();
    if pilots.len() != j_dim {
        return Err(MvcmError::DimensionMismatch(format!(
            "{} pilot bandwidths supplied for {} responses",
            pilots.len(),
            j_dim
        )));
    }
    let p = data.p();
    let e_len = eval.len();
    let grid = data.grid();
    let kernel = fit.kernel();

    let mut bias = Array3::zeros((j_dim, p, e_len));
    let mut d2 = Array3::zeros((j_dim, p, e_len));
    let mut d3 = Array3::zeros((j_dim, p, e_len));
    let mut pilot_bandwidths = Vec::with_capacity(j_dim);
    let mut fallback_points = 0usize;
    let omega = data.omega_x();

    for j in 0..j_dim {
        let h1 = fit.bandwidths()[j];
        let pilot_h = pilots[j];
        check_bandwidth(pilot_h)?;
        pilot_bandwidths.push(pilot_h);
        let q = response_covariate_sums(data, j);
        let fit_systems = build_pooled_points(data, kernel, h1, 1, eval.points(), DEFAULT_RIDGE)
            .map_err(|e| tag_response(e, j))?;
        let pilot_systems =
            build_pooled_points(data, kernel, pilot_h, 3, eval.points(), DEFAULT_RIDGE);
        for (e, sys) in fit_systems.iter().enumerate() {
            let pilot_sol = pilot_systems.as_ref().ok().and_then(|systems| {
                let psys = &systems[e];
                let rhs = psys.rhs_from_grid_rows(&q);
                psys.solve(&rhs).ok().map(|sol| (sol, psys.h_used))
            });
            let Some((pilot, ph)) = pilot_sol else {
                fallback_points += 1;
                continue;
            };
            // k-th derivative from the scaled coefficients: k! c_k / h^k.
            let ph2 = ph * ph;
            let ph3 = ph2 * ph;
            let mut d2_vec = DVector::zeros(p);
            let mut d3_vec = DVector::zeros(p);
            for l in 0..p {
                d2_vec[l] = 2.0 * pilot[4 * l + 2] / ph2;
                d3_vec[l] = 6.0 * pilot[4 * l + 3] / ph3;
                d2[[j, l, e]] = d2_vec[l];
                d3[[j, l, e]] = d3_vec[l];
            }
            let sol = push_taylor_remainder(sys, grid, &omega, &d2_vec, &d3_vec)
                .map_err(|err| tag_response(err, j))?;
            for l in 0..p {
                bias[[j, l, e]] = sol[l];
            }
        }
    }

    Ok(BiasEstimate {
        bias,
        pilot: DerivativePilot {
            d2,
            d3,
            bandwidths: pilot_bandwidths,
        },
        fallback_points,
    })
}

/// Pushes the Taylor remainder `δ(s, s_m) = ½ d2 (s_m-s)² + ⅙ d3 (s_m-s)³`
/// through a pooled system and extracts the value rows: the plug-in bias at
/// that point.
pub(crate) fn push_taylor_remainder(
    sys: &PooledPoint,
    grid: &[f64],
    omega: &DMatrix<f64>,
    d2_vec: &DVector<f64>,
    d3_vec: &DVector<f64>,
) -> Result<DVector<f64>> {
    let p = omega.nrows();
    let d1 = sys.degree + 1;
    let mut rhs = DVector::zeros(p * d1);
    for (idx, m) in (sys.lo..sys.hi).enumerate() {
        let w = sys.weights[idx];
        if w == 0.0 {
            continue;
        }
        let gap = grid[m] - sys.s;
        let gap2 = gap * gap;
        let half_gap2 = 0.5 * gap2;
        let sixth_gap3 = gap2 * gap / 6.0;
        let zrow = &sys.z[idx * d1..(idx + 1) * d1];
        for a in 0..p {
            // (Ω_X δ)_a = Σ_l Ω_X[a, l] δ_l
            let mut od = 0.0;
            for l in 0..p {
                od += omega[(a, l)] * (half_gap2 * d2_vec[l] + sixth_gap3 * d3_vec[l]);
            }
            let wod = w * od;
            for k in 0..d1 {
                rhs[a * d1 + k] += wod * zrow[k];
            }
        }
    }
    sys.solve_value_rows(&rhs)
}

/// Fits with cross-validated bandwidths and attaches the CV tables and the
/// plug-in bias estimate.
pub fn estimate_coefficients_auto(
    data: &FunctionalDataset,
    eval: &EvaluationGrid,
    kernel: Kernel,
) -> Result<CoefficientFit> {
    let candidates = default_h1_candidates(data);
    let selections: Vec<(f64, Vec<(f64, f64)>)> = (0..data.num_responses())
        .map(|j| cross_validate_bandwidth(data, j, &candidates, kernel))
        .collect::<Result<_>>()?;
    let bandwidths: Vec<f64> = selections.iter().map(|(h, _)| *h).collect();
    let mut fit = estimate_coefficients(data, &bandwidths, eval, kernel)?;
    fit.set_cv_tables(selections.into_iter().map(|(_, t)| Some(t)).collect());
    let bias = estimate_bias(data, &fit, eval)?;
    fit.set_bias(bias.bias)?;
    Ok(fit)
}


#[cfg(test)]
mod auto_tests {
    use super::*;
    use crate::Kernel;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn auto_fit_selects_bandwidths_and_attaches_tables_and_bias() {
        let m_len = 18;
        let grid: Vec<f64> = (0..m_len).map(|k| k as f64 / (m_len - 1) as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let n = 14;
        let mut x = ndarray::Array2::zeros((n, 2));
        let mut y = Array3::zeros((n, 1, m_len));
        for i in 0..n {
            x[[i, 0]] = 1.0;
            x[[i, 1]] = rng.gen_range(-1.0..1.0f64);
            for (k, &s) in grid.iter().enumerate() {
                y[[i, 0, k]] =
                    s * s + x[[i, 1]] * (1.0 - s) + 0.3 * rng.gen_range(-1.0..1.0f64);
            }
        }
        let data = FunctionalDataset::new(grid, y, x).unwrap();
        let eval = EvaluationGrid::from_dataset(&data);
        let fit = estimate_coefficients_auto(&data, &eval, Kernel::Epanechnikov).unwrap();
        let candidates = default_h1_candidates(&data);
        assert!(fit.bandwidths()[0] >= candidates[0] && fit.bandwidths()[0] <= candidates[19]);
        let table = fit.cv_tables()[0].as_ref().expect("CV table attached");
        assert_eq!(table.len(), candidates.len());
        assert!(fit.bias().is_some());
    }
}
