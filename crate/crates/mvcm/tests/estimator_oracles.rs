//! Monte Carlo oracles for the coefficient estimator, bandwidth selectors
//! and individual-curve smoothing on the benchmark design.

mod common;

use mvcm::{
    cross_validate_bandwidth, derive_seed, estimate_bias, estimate_coefficients,
    gcv_bandwidth, generate_dataset, EvaluationGrid, Kernel, SimulationDesign,
};
use ndarray::{Array2, Array3};
use rayon::prelude::*;

#[test]
fn bump_coefficient_recovered_at_midpoint() {
    // Mean of b̂_13(0.5) over 500 replications approaches the true value
    // 4*0.5*0.5 - 0.4 = 0.6.
    let design = SimulationDesign::default(); // n = 200, M = 50, c = 1
    let eval = EvaluationGrid::new(vec![0.5]).unwrap();
    let estimates: Vec<f64> = (0..500u64)
        .into_par_iter()
        .map(|rep| {
            let data = generate_dataset(&design, derive_seed(11, &[rep])).unwrap();
            let fit =
                estimate_coefficients(&data, &[0.1, 0.1], &eval, Kernel::Epanechnikov).unwrap();
            fit.b_hat()[[0, 2, 0]]
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    assert!(
        (mean - 0.6).abs() <= 0.02,
        "mean b13(0.5) = {mean}, expected 0.6 within 0.02"
    );
}

#[test]
fn cv_on_wide_grid_chooses_interior_bandwidths() {
    // With the full-strength effect the CV curve has an interior minimum;
    // endpoint selections flag a misconfigured candidate grid.
    let mut design = SimulationDesign::default();
    design.n = 100;
    design.m = 50;
    let candidates: Vec<f64> = (0..20)
        .map(|k| (0.02f64.ln() + (0.5f64 / 0.02).ln() * k as f64 / 19.0).exp())
        .collect();
    let interior: usize = (0..50u64)
        .into_par_iter()
        .map(|rep| {
            let data = generate_dataset(&design, derive_seed(13, &[rep])).unwrap();
            let (h, _) =
                cross_validate_bandwidth(&data, 1, &candidates, Kernel::Epanechnikov).unwrap();
            usize::from(h > candidates[0] && h < candidates[19])
        })
        .sum();
    assert!(
        interior >= 45,
        "interior CV choice in only {interior}/50 replications"
    );
}

#[test]
fn gcv_prefers_largest_bandwidth_on_pure_noise() {
    // White-noise residuals carry no curve structure, so GCV should smooth
    // as hard as it can in most replications. The candidate grid stops
    // before the near-global-fit plateau where neighbors differ only by
    // sampling noise.
    let m_len = 40;
    let grid: Vec<f64> = (0..m_len).map(|k| k as f64 / (m_len - 1) as f64).collect();
    let candidates = vec![0.1, 0.2, 0.4, 0.8];
    let top = candidates[candidates.len() - 1];
    let hits: usize = (0..50u64)
        .into_par_iter()
        .map(|rep| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(17, &[rep]));
            let n = 8;
            let mut y = Array3::zeros((n, 1, m_len));
            for i in 0..n {
                for m in 0..m_len {
                    y[[i, 0, m]] = rng.gen_range(-1.0..1.0);
                }
            }
            let x = Array2::from_elem((n, 1), 1.0);
            let data = mvcm::FunctionalDataset::new(grid.clone(), y, x).unwrap();
            let eval = EvaluationGrid::from_dataset(&data);
            let fit = estimate_coefficients(&data, &[0.5], &eval, Kernel::Epanechnikov).unwrap();
            let (h, _) = gcv_bandwidth(&data, &fit, 0, &candidates).unwrap();
            usize::from(h == top)
        })
        .sum();
    assert!(
        hits >= 40,
        "largest candidate chosen in only {hits}/50 noise replications"
    );
}

#[test]
fn intercept_bias_negligible_for_centered_noise() {
    // Noise-only responses have a flat truth, so the estimated bias of the
    // intercept is Monte Carlo noise around zero.
    let m_len = 50;
    let grid: Vec<f64> = (0..m_len).map(|k| k as f64 / (m_len - 1) as f64).collect();
    let eval = EvaluationGrid::new(vec![0.25, 0.5, 0.75]).unwrap();
    let reps = 200u64;
    let means: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            use rand::SeedableRng;
            use rand_distr::{Distribution, StandardNormal};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(19, &[rep]));
            let normal = StandardNormal;
            let n = 30;
            let mut y = Array3::zeros((n, 1, m_len));
            for i in 0..n {
                for m in 0..m_len {
                    let z: f64 = normal.sample(&mut rng);
                    y[[i, 0, m]] = 0.3 * z;
                }
            }
            let x = Array2::from_elem((n, 1), 1.0);
            let data = mvcm::FunctionalDataset::new(grid.clone(), y, x).unwrap();
            let fit = estimate_coefficients(&data, &[0.15], &eval, Kernel::Epanechnikov).unwrap();
            let bias = estimate_bias(&data, &fit, &eval).unwrap();
            (0..3).map(|e| bias.bias[[0, 0, e]]).sum::<f64>() / 3.0
        })
        .collect();
    let mean = means.iter().sum::<f64>() / reps as f64;
    let sd = (means.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps - 1) as f64)
        .sqrt();
    let se = sd / (reps as f64).sqrt();
    assert!(
        mean.abs() <= 3.0 * se + 1e-4,
        "mean intercept bias {mean} exceeds Monte Carlo error {se}"
    );
}

#[test]
fn finer_grids_reduce_smoothing_error() {
    // Refining the grid must improve the reconstruction of the individual
    // curves in nearly every replication.
    let reps = 50u64;
    let wins: usize = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(23, &[rep]);
            let mut coarse = SimulationDesign::default();
            coarse.n = 150;
            coarse.m = 25;
            let mut fine = coarse.clone();
            fine.m = 100;
            let mise_coarse = common::empirical_mise(&coarse, seed);
            let mise_fine = common::empirical_mise(&fine, seed);
            usize::from(mise_fine < mise_coarse)
        })
        .sum();
    assert!(
        wins >= 45,
        "finer grid reduced MISE in only {wins}/{reps} replications"
    );
}
