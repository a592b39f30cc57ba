//! Helpers shared by the integration suites.
#![allow(dead_code)] // each suite uses its own subset

use mvcm::{
    generate_dataset_with_deviations, linalg::trapezoid_integral, smooth_individuals_auto,
    SimulationDesign,
};

/// Empirical mean integrated squared error of the smoothed deviation curves
/// against the generator's truth, averaged over subjects and responses.
pub fn empirical_mise(design: &SimulationDesign, seed: u64) -> f64 {
    let (data, eta_true) = generate_dataset_with_deviations(design, seed).unwrap();
    let fit = mvcm::benchmark_fit(&data).unwrap();
    let curves = smooth_individuals_auto(&data, &fit).unwrap();
    let (n, j_dim, m_len) = eta_true.dim();
    let grid = data.grid();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..j_dim {
            let sq: Vec<f64> = (0..m_len)
                .map(|m| {
                    let d = curves.eta_hat()[[i, j, m]] - eta_true[[i, j, m]];
                    d * d
                })
                .collect();
            total += trapezoid_integral(grid, &sq);
        }
    }
    total / (n as f64 * j_dim as f64)
}

/// Asymptotic Kolmogorov-Smirnov p-value for a sample against U(0, 1).
pub fn ks_uniform_p_value(sample: &[f64]) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        let upper = (k as f64 + 1.0) / n - v;
        let lower = v - k as f64 / n;
        d = d.max(upper).max(lower);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        p += sign * (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
    }
    (2.0 * p).clamp(0.0, 1.0)
}
