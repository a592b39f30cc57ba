//! Reconstruction of individual deviation curves by local linear smoothing
//! of the coefficient-fit residuals.
//!
//! On a common grid the smoother matrix is the same for every subject within
//! a response, so it is assembled once per `(response, bandwidth)` and the
//! GCV score reduces to one assembly plus `n` quadratic forms.

use nalgebra::DMatrix;
use ndarray::Array3;
use rayon::prelude::*;

use crate::coeff::{log_spaced, CoefficientFit};
use crate::dataset::FunctionalDataset;
use crate::error::{MvcmError, Result};
use crate::kernel::check_bandwidth;
use crate::local_poly::{local_fit, smoother_row, LocalFitConfig};
use crate::Kernel;

/// Smoothed individual curves `η̂_ij` and the leftover noise residuals.
#[derive(Debug, Clone)]
pub struct IndividualCurves {
    /// `n x J x M` smoothed deviations.
    eta_hat: Array3<f64>,
    /// `n x J x M` final residuals `R_ij - η̂_ij`.
    eps_hat: Array3<f64>,
    bandwidths: Vec<f64>,
    /// `M⁻¹ tr(S_j)` per response (the smoother matrix is subject-invariant
    /// on a common grid).
    trace_fraction: Vec<f64>,
    gcv_tables: Vec<Option<Vec<(f64, f64)>>>,
}

impl IndividualCurves {
    /// Wraps externally produced curves (for example from a different
    /// smoother). `eta_hat + eps_hat` must reconstruct the residuals the
    /// caller started from; that bookkeeping is the caller's contract.
    pub fn from_parts(
        eta_hat: Array3<f64>,
        eps_hat: Array3<f64>,
        bandwidths: Vec<f64>,
    ) -> Result<Self> {
        if eta_hat.dim() != eps_hat.dim() {
            return Err(MvcmError::DimensionMismatch(format!(
                "eta dimensions {:?} != eps dimensions {:?}",
                eta_hat.dim(),
                eps_hat.dim()
            )));
        }
        let j_dim = eta_hat.dim().1;
        if bandwidths.len() != j_dim {
            return Err(MvcmError::DimensionMismatch(format!(
                "{} bandwidths supplied for {} responses",
                bandwidths.len(),
                j_dim
            )));
        }
        Ok(Self {
            eta_hat,
            eps_hat,
            bandwidths,
            trace_fraction: vec![0.0; j_dim],
            gcv_tables: vec![None; j_dim],
        })
    }

    pub fn eta_hat(&self) -> &Array3<f64> {
        &self.eta_hat
    }

    pub fn eps_hat(&self) -> &Array3<f64> {
        &self.eps_hat
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn trace_fraction(&self) -> &[f64] {
        &self.trace_fraction
    }

    pub fn gcv_tables(&self) -> &[Option<Vec<(f64, f64)>>] {
        &self.gcv_tables
    }

    pub(crate) fn set_gcv_tables(&mut self, tables: Vec<Option<Vec<(f64, f64)>>>) {
        self.gcv_tables = tables;
    }
}

/// Assembles the `M x M` local linear smoother matrix for one bandwidth.
pub(crate) fn smoother_matrix(grid: &[f64], h: f64, kernel: Kernel) -> Result<DMatrix<f64>> {
    let m_len = grid.len();
    let config = LocalFitConfig::new(1, h, kernel)?;
    let mut s_mat = DMatrix::zeros(m_len, m_len);
    for (row, &s) in grid.iter().enumerate() {
        let weights = smoother_row(&config, grid, s)?;
        for (col, &w) in weights.weights().iter().enumerate() {
            s_mat[(row, col)] = w;
        }
    }
    Ok(s_mat)
}

/// Smooths every subject's residual curve with the per-response bandwidths.
pub fn smooth_individuals(
    data: &FunctionalDataset,
    fit: &CoefficientFit,
    bandwidths: &[f64],
) -> Result<IndividualCurves> {
    let (n, j_dim, m_len) = fit.residuals().dim();
    if bandwidths.len() != j_dim {
        return Err(MvcmError::DimensionMismatch(format!(
            "{} bandwidths supplied for {} responses",
            bandwidths.len(),
            j_dim
        )));
    }
    let grid = data.grid();
    let mut eta_hat = Array3::zeros((n, j_dim, m_len));
    let mut eps_hat = Array3::zeros((n, j_dim, m_len));
    let mut trace_fraction = Vec::with_capacity(j_dim);
    for j in 0..j_dim {
        check_bandwidth(bandwidths[j])?;
        let s_mat = smoother_matrix(grid, bandwidths[j], fit.kernel())?;
        trace_fraction.push(s_mat.trace() / m_len as f64);
        for i in 0..n {
            for row in 0..m_len {
                let mut acc = 0.0;
                for col in 0..m_len {
                    let w = s_mat[(row, col)];
                    if w != 0.0 {
                        acc += w * fit.residuals()[[i, j, col]];
                    }
                }
                eta_hat[[i, j, row]] = acc;
                eps_hat[[i, j, row]] = fit.residuals()[[i, j, row]] - acc;
            }
        }
    }
    Ok(IndividualCurves {
        eta_hat,
        eps_hat,
        bandwidths: bandwidths.to_vec(),
        trace_fraction,
        gcv_tables: vec![None; j_dim],
    })
}

/// Evaluates one subject's smoothed deviation at an arbitrary location.
pub fn smooth_at(
    grid: &[f64],
    residual_row: &[f64],
    h: f64,
    kernel: Kernel,
    s: f64,
) -> Result<f64> {
    let config = LocalFitConfig::new(1, h, kernel)?;
    Ok(local_fit(&config, grid, residual_row, s)?.value())
}

/// Rate-heuristic default bandwidth `scale · M^(-1/5)`.
pub fn default_bandwidth(m: usize, scale: f64) -> f64 {
    scale * (m as f64).powf(-0.2)
}

/// Default GCV candidates: 15 log-spaced points spanning a factor of 8
/// around the `M^(-1/5)` heuristic.
pub fn default_h2_candidates(m: usize) -> Vec<f64> {
    let center = default_bandwidth(m, 1.0);
    log_spaced(center / 8.0, center * 8.0, 15)
}

/// Generalized cross-validation for the smoothing bandwidth of response `j`.
///
/// Candidates whose smoother trace reaches `M` are skipped with a diagnostic
/// count; ties resolve toward the larger bandwidth.
pub fn gcv_bandwidth(
    data: &FunctionalDataset,
    fit: &CoefficientFit,
    j: usize,
    candidates: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    if candidates.is_empty() {
        return Err(MvcmError::BandwidthSelection {
            response: j,
            reason: "empty candidate grid".into(),
        });
    }
    let grid = data.grid();
    let (n, _, m_len) = fit.residuals().dim();
    let scores: Vec<Option<(f64, f64)>> = candidates
        .par_iter()
        .map(|&h| {
            let s_mat = smoother_matrix(grid, h, fit.kernel()).ok()?;
            let trace_fraction = s_mat.trace() / m_len as f64;
            if trace_fraction >= 1.0 {
                return None;
            }
            let denom = (1.0 - trace_fraction) * (1.0 - trace_fraction);
            let mut rss = 0.0;
            for i in 0..n {
                for row in 0..m_len {
                    let mut smoothed = 0.0;
                    for col in 0..m_len {
                        let w = s_mat[(row, col)];
                        if w != 0.0 {
                            smoothed += w * fit.residuals()[[i, j, col]];
                        }
                    }
                    let diff = fit.residuals()[[i, j, row]] - smoothed;
                    rss += diff * diff;
                }
            }
            let score = rss / denom;
            score.is_finite().then_some((h, score))
        })
        .collect();
    let table: Vec<(f64, f64)> = scores.iter().filter_map(|v| *v).collect();
    if table.is_empty() {
        return Err(MvcmError::BandwidthSelection {
            response: j,
            reason: format!(
                "all {} GCV candidates were skipped (smoother trace >= M or degenerate window)",
                candidates.len()
            ),
        });
    }
    let best = table
        .iter()
        .map(|&(_, s)| s)
        .fold(f64::INFINITY, f64::min);
    let tie_cut = best + 1e-9 * (1.0 + best.abs());
    let chosen = table
        .iter()
        .filter(|&&(_, s)| s <= tie_cut)
        .map(|&(h, _)| h)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((chosen, table))
}

/// Smooths with GCV-selected bandwidths and attaches the score tables.
pub fn smooth_individuals_auto(
    data: &FunctionalDataset,
    fit: &CoefficientFit,
) -> Result<IndividualCurves> {
    let candidates = default_h2_candidates(data.num_points());
    let selections: Vec<(f64, Vec<(f64, f64)>)> = (0..data.num_responses())
        .map(|j| gcv_bandwidth(data, fit, j, &candidates))
        .collect::<Result<_>>()?;
    let bandwidths: Vec<f64> = selections.iter().map(|(h, _)| *h).collect();
    let mut curves = smooth_individuals(data, fit, &bandwidths)?;
    curves.set_gcv_tables(selections.into_iter().map(|(_, t)| Some(t)).collect());
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::estimate_coefficients;
    use crate::dataset::{EvaluationGrid, FunctionalDataset};
    use approx::assert_abs_diff_eq;
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(m: usize) -> Vec<f64> {
        (0..m).map(|k| k as f64 / (m - 1) as f64).collect()
    }

    /// Intercept-only dataset whose fit residuals equal `y` minus the
    /// cross-subject local-linear mean curve.
    fn fit_for(
        y: Array3<f64>,
        g: Vec<f64>,
        h1: f64,
    ) -> (FunctionalDataset, crate::coeff::CoefficientFit) {
        let n = y.dim().0;
        let x = Array2::from_elem((n, 1), 1.0);
        let data = FunctionalDataset::new(g, y, x).unwrap();
        let eval = EvaluationGrid::from_dataset(&data);
        let fit = estimate_coefficients(&data, &[h1], &eval, Kernel::Epanechnikov).unwrap();
        (data, fit)
    }

    #[test]
    fn zero_residuals_smooth_to_zero() {
        // Identical subjects: the pooled fit interpolates the common curve,
        // so residuals vanish and so must the smoothed deviations.
        let m = 20;
        let g = grid(m);
        let mut y = Array3::zeros((4, 1, m));
        for i in 0..4 {
            for (k, &s) in g.iter().enumerate() {
                y[[i, 0, k]] = 1.0 + s;
            }
        }
        let (data, fit) = fit_for(y, g, 0.2);
        let curves = smooth_individuals(&data, &fit, &[0.15]).unwrap();
        for v in curves.eta_hat().iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_deviation_reproduced_and_residual_split_exact() {
        let m = 25;
        let g = grid(m);
        // Two subjects offset by ±c around a flat mean.
        let c = 0.8;
        let mut y = Array3::zeros((2, 1, m));
        for k in 0..m {
            y[[0, 0, k]] = 1.0 + c;
            y[[1, 0, k]] = 1.0 - c;
        }
        let (data, fit) = fit_for(y, g, 0.3);
        let curves = smooth_individuals(&data, &fit, &[0.2]).unwrap();
        for k in 0..m {
            assert_abs_diff_eq!(curves.eta_hat()[[0, 0, k]], c, epsilon = 1e-8);
            assert_abs_diff_eq!(curves.eta_hat()[[1, 0, k]], -c, epsilon = 1e-8);
            // eps + eta reconstruct the residual exactly.
            assert_eq!(
                curves.eps_hat()[[0, 0, k]] + curves.eta_hat()[[0, 0, k]],
                fit.residuals()[[0, 0, k]]
            );
        }
    }

    #[test]
    fn sine_deviation_recovered_within_smoothing_bias() {
        let m = 100;
        let g = grid(m);
        let psi = |s: f64| std::f64::consts::SQRT_2 * (2.0 * PI * s).sin();
        // Subjects at ±ψ keep the pooled mean at the common curve.
        let mut y = Array3::zeros((2, 1, m));
        for (k, &s) in g.iter().enumerate() {
            y[[0, 0, k]] = psi(s);
            y[[1, 0, k]] = -psi(s);
        }
        let (data, fit) = fit_for(y, g.clone(), 0.3);
        let curves = smooth_individuals(&data, &fit, &[0.05]).unwrap();
        let mut sup = 0.0f64;
        for (k, &s) in g.iter().enumerate() {
            sup = sup.max((curves.eta_hat()[[0, 0, k]] - psi(s)).abs());
        }
        assert!(sup <= 0.05, "sup deviation {sup} exceeds the smoothing-bias bound");
    }

    #[test]
    fn smoothing_is_linear_in_residuals() {
        let m = 30;
        let g = grid(m);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let make = |rng: &mut ChaCha8Rng| {
            let mut y = Array3::zeros((3, 1, m));
            for i in 0..3 {
                for k in 0..m {
                    y[[i, 0, k]] = rng.gen_range(-1.0..1.0);
                }
            }
            y
        };
        let ya = make(&mut rng);
        let yb = make(&mut rng);
        let (a_coef, b_coef) = (1.7, -0.6);
        let combined = a_coef * &ya + b_coef * &yb;
        let (data_a, fit_a) = fit_for(ya, g.clone(), 0.25);
        let (data_b, fit_b) = fit_for(yb, g.clone(), 0.25);
        let (data_c, fit_c) = fit_for(combined, g, 0.25);
        let h2 = [0.12];
        let eta_a = smooth_individuals(&data_a, &fit_a, &h2).unwrap();
        let eta_b = smooth_individuals(&data_b, &fit_b, &h2).unwrap();
        let eta_c = smooth_individuals(&data_c, &fit_c, &h2).unwrap();
        for i in 0..3 {
            for k in 0..m {
                let expect = a_coef * eta_a.eta_hat()[[i, 0, k]] + b_coef * eta_b.eta_hat()[[i, 0, k]];
                assert_abs_diff_eq!(eta_c.eta_hat()[[i, 0, k]], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn pointwise_and_matrix_smoothing_agree() {
        let m = 40;
        let g = grid(m);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut y = Array3::zeros((2, 1, m));
        for i in 0..2 {
            for k in 0..m {
                y[[i, 0, k]] = rng.gen_range(-1.0..1.0);
            }
        }
        let (data, fit) = fit_for(y, g.clone(), 0.3);
        let h2 = 0.1;
        let curves = smooth_individuals(&data, &fit, &[h2]).unwrap();
        for i in 0..2 {
            let residual_row: Vec<f64> = (0..m).map(|k| fit.residuals()[[i, 0, k]]).collect();
            for (k, &s) in g.iter().enumerate() {
                let pointwise = smooth_at(&g, &residual_row, h2, fit.kernel(), s).unwrap();
                assert_abs_diff_eq!(curves.eta_hat()[[i, 0, k]], pointwise, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn gcv_matches_dense_smoother_oracle() {
        let m = 5;
        let g = vec![0.0, 0.2, 0.5, 0.8, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut y = Array3::zeros((2, 1, m));
        for i in 0..2 {
            for k in 0..m {
                y[[i, 0, k]] = rng.gen_range(-1.0..1.0);
            }
        }
        let (data, fit) = fit_for(y, g.clone(), 0.6);
        let candidates = [0.35, 0.6, 1.0];
        let (chosen, table) = gcv_bandwidth(&data, &fit, 0, &candidates).unwrap();
        assert_eq!(table.len(), 3);
        for &(h, score) in &table {
            // Dense oracle: assemble S explicitly, compute the quadratic form.
            let s_mat = smoother_matrix(&g, h, fit.kernel()).unwrap();
            let trace_fraction = s_mat.trace() / m as f64;
            let mut rss = 0.0;
            for i in 0..2 {
                for row in 0..m {
                    let mut smoothed = 0.0;
                    for col in 0..m {
                        smoothed += s_mat[(row, col)] * fit.residuals()[[i, 0, col]];
                    }
                    let diff = fit.residuals()[[i, 0, row]] - smoothed;
                    rss += diff * diff;
                }
            }
            let oracle = rss / ((1.0 - trace_fraction) * (1.0 - trace_fraction));
            assert_abs_diff_eq!(score, oracle, epsilon = 1e-10);
        }
        let best = table.iter().map(|&(_, s)| s).fold(f64::INFINITY, f64::min);
        let cut = best + 1e-9 * (1.0 + best.abs());
        let oracle_choice = table
            .iter()
            .filter(|&&(_, s)| s <= cut)
            .map(|&(h, _)| h)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(chosen, oracle_choice);
    }

    #[test]
    fn gcv_positive_for_nonzero_residuals() {
        let m = 20;
        let g = grid(m);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut y = Array3::zeros((3, 1, m));
        for i in 0..3 {
            for k in 0..m {
                y[[i, 0, k]] = rng.gen_range(-1.0..1.0);
            }
        }
        let (data, fit) = fit_for(y, g, 0.4);
        let (_, table) = gcv_bandwidth(&data, &fit, 0, &default_h2_candidates(m)).unwrap();
        for &(_, score) in &table {
            assert!(score > 0.0);
        }
    }

    #[test]
    fn rate_heuristic_closed_forms() {
        assert_abs_diff_eq!(default_bandwidth(32, 1.0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(default_bandwidth(100_000, 1.0), 0.1, epsilon = 1e-12);
        assert_eq!(default_bandwidth(50, 0.0), 0.0);
        assert!(check_bandwidth(default_bandwidth(50, 0.0)).is_err());
    }

    #[test]
    fn candidate_grid_spans_factor_eight_around_heuristic() {
        let m = 50;
        let candidates = default_h2_candidates(m);
        let center = default_bandwidth(m, 1.0);
        assert_eq!(candidates.len(), 15);
        assert_abs_diff_eq!(candidates[0], center / 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(candidates[14], center * 8.0, epsilon = 1e-12);
    }
}
