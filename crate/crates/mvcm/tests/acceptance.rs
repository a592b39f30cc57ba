//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! The heavy Monte Carlo studies run once and are shared across criteria.

mod common;

use std::sync::OnceLock;

use mvcm::{
    build_band, decompose_all, derive_seed, effect_hypothesis, empirical_covariance,
    estimate_coefficients, generate_dataset, global_statistic, linalg::trapezoid_weights,
    local_fit, run_power_study, scb_critical_values, smooth_individuals_auto,
    wild_bootstrap_test, B0Spec, EvaluationGrid, Kernel, LinearHypothesis, LocalFitConfig,
    Retention, SimulationDesign, StudyResult,
};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

const MASTER_SEED: u64 = 20260810;

fn verdict(criterion: &str, pass: bool, detail: &str) -> bool {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

/// Shared power/type-I table: c in {0,...,0.4} x n in {100,200} x
/// alpha in {0.05, 0.01}, 100 replications, G = 500.
fn power_table() -> &'static StudyResult {
    static TABLE: OnceLock<StudyResult> = OnceLock::new();
    TABLE.get_or_init(|| {
        let design = SimulationDesign::default();
        run_power_study(
            &design,
            &[0.0, 0.1, 0.2, 0.3, 0.4],
            &[100, 200],
            &[0.05, 0.01],
            100,
            500,
            MASTER_SEED,
        )
        .expect("power study must complete")
    })
}

fn rate(table: &StudyResult, c: f64, n: usize, alpha: f64) -> f64 {
    table
        .power_rows
        .iter()
        .find(|r| r.c == c && r.n == n && r.alpha == alpha)
        .expect("condition present")
        .rejection_rate
}

#[test]
fn criterion_1_table_coverage_reproduction() {
    let design = SimulationDesign::default();
    let result = mvcm::run_coverage_study(
        &design,
        500,
        &[50],
        &[0.05],
        200,
        1000,
        MASTER_SEED,
    )
    .expect("coverage study must complete");
    let targets = [0.925, 0.940, 0.945, 0.930, 0.925, 0.950];
    let mut detail = String::new();
    let mut pass = true;
    for (k, row) in result.coverage_rows.iter().enumerate() {
        let target = targets[k];
        let ok = (row.coverage - target).abs() <= 0.04;
        pass &= ok;
        detail.push_str(&format!(
            "b{}{} {:.3} (target {target} ± 0.04){} ",
            row.j + 1,
            row.l + 1,
            row.coverage,
            if ok { "" } else { " <-" }
        ));
    }
    assert!(verdict("1 (simultaneous coverage, n=500 M=50)", pass, &detail));
}

#[test]
fn criterion_2_type_one_error() {
    let table = power_table();
    let mut pass = true;
    let mut detail = String::new();
    for &n in &[100usize, 200] {
        for &alpha in &[0.05, 0.01] {
            let r = rate(table, 0.0, n, alpha);
            let limit = 3.0 * (alpha * (1.0 - alpha) / 100.0).sqrt();
            let ok = (r - alpha).abs() <= limit;
            pass &= ok;
            detail.push_str(&format!(
                "n={n} α={alpha}: {r:.3} (within {limit:.3} of nominal){} ",
                if ok { "" } else { " <-" }
            ));
        }
    }
    assert!(verdict("2 (type I error)", pass, &detail));
}

#[test]
fn criterion_3_power_monotonicity() {
    let table = power_table();
    let c_grid = [0.0, 0.1, 0.2, 0.3, 0.4];
    let rates: Vec<f64> = c_grid.iter().map(|&c| rate(table, c, 200, 0.05)).collect();
    let mut inversions = 0usize;
    let mut worst = 0.0f64;
    for w in rates.windows(2) {
        if w[1] < w[0] {
            inversions += 1;
            worst = worst.max(w[0] - w[1]);
        }
    }
    // One inversion within one binomial standard error is tolerated.
    let se = (0.5f64 * 0.5 / 100.0).sqrt();
    let monotone = inversions == 0 || (inversions == 1 && worst <= se);
    let n_gain = rate(table, 0.4, 200, 0.05) > rate(table, 0.4, 100, 0.05);
    let pass = monotone && n_gain;
    let detail = format!(
        "rates at n=200: {rates:.3?}, inversions {inversions} (worst {worst:.3}), power(c=0.4) n=200 {:.3} > n=100 {:.3}: {n_gain}",
        rate(table, 0.4, 200, 0.05),
        rate(table, 0.4, 100, 0.05),
    );
    assert!(verdict("3 (power monotonicity)", pass, &detail));
}

#[test]
fn criterion_4_estimator_exactness() {
    let mut pass = true;
    let mut detail = String::new();

    // Local linear and cubic polynomial reproduction.
    let grid: Vec<f64> = (0..60).map(|k| k as f64 / 59.0).collect();
    let mut worst = 0.0f64;
    for degree in [1usize, 3] {
        let coeffs = [0.7, -1.3, 0.9, 0.4];
        let poly = |s: f64| {
            coeffs
                .iter()
                .take(degree + 1)
                .enumerate()
                .map(|(k, c)| c * s.powi(k as i32))
                .sum::<f64>()
        };
        let values: Vec<f64> = grid.iter().map(|&s| poly(s)).collect();
        let config = LocalFitConfig::new(degree, 0.2, Kernel::Epanechnikov).unwrap();
        for &s in &[0.0, 0.33, 0.71, 1.0] {
            let fit = local_fit(&config, &grid, &values, s).unwrap();
            worst = worst.max((fit.value() - poly(s)).abs());
        }
    }
    let ok = worst <= 1e-8;
    pass &= ok;
    detail.push_str(&format!("poly reproduction sup {worst:.2e}; "));

    // Pooled solution against a dense weighted least-squares oracle.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let normal = StandardNormal;
    let n = 20;
    let m_len = 30;
    let data_grid: Vec<f64> = (0..m_len).map(|k| k as f64 / (m_len - 1) as f64).collect();
    let mut x = Array2::zeros((n, 3));
    let mut y = Array3::zeros((n, 1, m_len));
    for i in 0..n {
        x[[i, 0]] = 1.0;
        for l in 1..3 {
            let z: f64 = normal.sample(&mut rng);
            x[[i, l]] = z;
        }
        for m in 0..m_len {
            let z: f64 = normal.sample(&mut rng);
            y[[i, 0, m]] = z;
        }
    }
    let data = mvcm::FunctionalDataset::new(data_grid.clone(), y, x).unwrap();
    let h = 0.17;
    let points = [0.08f64, 0.31, 0.52, 0.74, 0.97];
    let eval = EvaluationGrid::new(points.to_vec()).unwrap();
    let fit = estimate_coefficients(&data, &[h], &eval, Kernel::Epanechnikov).unwrap();
    let mut worst_wls = 0.0f64;
    for (e, &s) in points.iter().enumerate() {
        // Dense oracle: rows over all (i, m) with kernel square-root weights.
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..n {
            for m in 0..m_len {
                let t = (data.grid()[m] - s) / h;
                let w = Kernel::Epanechnikov.evaluate(t) / h;
                if w == 0.0 {
                    continue;
                }
                let sw = w.sqrt();
                let mut row = Vec::with_capacity(6);
                for l in 0..3 {
                    row.push(sw * data.x()[[i, l]]);
                    row.push(sw * data.x()[[i, l]] * t);
                }
                rows.push(row);
                rhs.push(sw * data.y()[[i, 0, m]]);
            }
        }
        let a = DMatrix::from_fn(rows.len(), 6, |r, c| rows[r][c]);
        let b = DVector::from_vec(rhs);
        let sol = a.svd(true, true).solve(&b, 1e-13).unwrap();
        for l in 0..3 {
            worst_wls = worst_wls.max((fit.b_hat()[[0, l, e]] - sol[2 * l]).abs());
        }
    }
    let ok = worst_wls <= 1e-8;
    pass &= ok;
    detail.push_str(&format!("WLS oracle sup {worst_wls:.2e}; "));

    // Kernel moment identities.
    let k = Kernel::Epanechnikov;
    let moments = [
        (k.moment_u(0) - 1.0).abs(),
        k.moment_u(1).abs(),
        k.moment_u(3).abs(),
        (k.moment_u(2) - 0.2).abs(),
        (k.moment_v(0) - 0.6).abs(),
    ];
    let worst_moment = moments.iter().fold(0.0f64, |a, &v| a.max(v));
    let ok = worst_moment <= 1e-10;
    pass &= ok;
    detail.push_str(&format!("kernel moments sup {worst_moment:.2e}"));

    assert!(verdict("4 (estimator exactness)", pass, &detail));
}

#[test]
fn criterion_5_fpca_recovery() {
    // Covariance blocks assembled from the benchmark eigenpairs on M = 100;
    // the decomposition must hand the eigenstructure back.
    let m_len = 100;
    let grid: Vec<f64> = (0..m_len).map(|k| k as f64 / (m_len - 1) as f64).collect();
    let design = SimulationDesign::default();
    let n = 500;
    let blocks: Vec<Vec<DMatrix<f64>>> = (0..2)
        .map(|j| {
            (0..2)
                .map(|jp| {
                    if j != jp {
                        return DMatrix::zeros(m_len, m_len);
                    }
                    DMatrix::from_fn(m_len, m_len, |a, b| {
                        (0..2)
                            .map(|l| {
                                design.lambda[j][l]
                                    * (design.components[j][l])(grid[a])
                                    * (design.components[j][l])(grid[b])
                            })
                            .sum()
                    })
                })
                .collect()
        })
        .collect();
    let cov = mvcm::CovarianceEstimate::from_blocks(blocks, grid.clone(), n, 3).unwrap();
    let eig = decompose_all(&cov, Retention::Count(2)).unwrap();

    let mut pass = true;
    let mut detail = String::new();
    let weights = trapezoid_weights(&grid);
    for j in 0..2 {
        for l in 0..2 {
            let target = design.lambda[j][l];
            let estimate = eig.response(j).eigenvalues()[l];
            let ok = (estimate - target).abs() / target <= 0.10;
            pass &= ok;
            detail.push_str(&format!(
                "λ{}{} {:.3}/{target}{} ",
                j + 1,
                l + 1,
                estimate,
                if ok { "" } else { " <-" }
            ));
            // L2 error after sign alignment.
            let psi = eig.response(j).eigenfunctions();
            let mut dot = 0.0;
            for (m, &s) in grid.iter().enumerate() {
                dot += psi[[l, m]] * (design.components[j][l])(s) * weights[m];
            }
            let sign = dot.signum();
            let mut err = 0.0;
            for (m, &s) in grid.iter().enumerate() {
                let d = sign * psi[[l, m]] - (design.components[j][l])(s);
                err += d * d * weights[m];
            }
            let l2 = err.sqrt();
            let ok = l2 <= 0.05;
            pass &= ok;
            detail.push_str(&format!("ψ{}{} L2 {:.3}{} ", j + 1, l + 1, l2, if ok { "" } else { " <-" }));
        }
    }

    // Positive semi-definiteness on simulated fits at benchmark scale.
    let mut min_ratio = f64::INFINITY;
    for rep in 0..3u64 {
        let mut d = SimulationDesign::default();
        d.n = 500;
        d.m = 50;
        let sim = generate_dataset(&d, derive_seed(MASTER_SEED, &[55, rep])).unwrap();
        let fit = mvcm::benchmark_fit(&sim).unwrap();
        let sim_curves = smooth_individuals_auto(&sim, &fit).unwrap();
        let sim_cov = empirical_covariance(&sim, &sim_curves).unwrap();
        for j in 0..2 {
            let block = sim_cov.block(j, j);
            let min_eig = block
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            min_ratio = min_ratio.min(min_eig / block.trace());
        }
    }
    let ok = min_ratio >= -1e-10;
    pass &= ok;
    detail.push_str(&format!("min eig/trace over fits {min_ratio:.2e}"));

    assert!(verdict("5 (FPCA recovery)", pass, &detail));
}

#[test]
fn criterion_6_bootstrap_scb_structure() {
    let mut design = SimulationDesign::default();
    design.n = 40;
    design.m = 16;
    let data = generate_dataset(&design, MASTER_SEED ^ 6).unwrap();
    let fit = mvcm::benchmark_fit(&data).unwrap();
    let curves = smooth_individuals_auto(&data, &fit).unwrap();
    let cov = empirical_covariance(&data, &curves).unwrap();
    let hyp = effect_hypothesis();
    let eval = EvaluationGrid::new(fit.eval_points().to_vec()).unwrap();

    let mut pass = true;
    let mut detail = String::new();

    // p-value granularity.
    let g_reps = 40;
    let test = wild_bootstrap_test(&data, &fit, &curves, &cov, &hyp, g_reps, 3).unwrap();
    let scaled = test.p_value * test.g as f64;
    let ok = (scaled - scaled.round()).abs() <= 1e-9;
    pass &= ok;
    detail.push_str(&format!("p = {:.4} is a multiple of 1/G; ", test.p_value));

    // Critical-value monotonicity on shared draws.
    let c05 = scb_critical_values(&data, &fit, 0.05, 60, 11).unwrap();
    let c01 = scb_critical_values(&data, &fit, 0.01, 60, 11).unwrap();
    let ok = (0..2).all(|j| (0..3).all(|l| c01[[j, l]] >= c05[[j, l]]));
    pass &= ok;
    detail.push_str(&format!(
        "C(0.01) >= C(0.05) on shared draws: {ok}; "
    ));
    let band = build_band(&fit, 0, 2, 0.05, c05[[0, 2]], data.n(), 60, 11).unwrap();
    let widths_ok = band
        .upper
        .iter()
        .zip(&band.lower)
        .all(|(u, l)| u > l);
    pass &= widths_ok;

    // S_n = 0 when b0 equals the bias-corrected fitted contrast.
    let bias = fit.bias().unwrap();
    let e_len = fit.eval_points().len();
    let mut b0 = Array2::zeros((e_len, 2));
    for e in 0..e_len {
        for (row, &(j, l)) in [(0usize, 2usize), (1, 2)].iter().enumerate() {
            b0[[e, row]] = fit.b_hat()[[j, l, e]] - bias[[j, l, e]];
        }
    }
    let hyp0 = LinearHypothesis::new(hyp.c().clone(), B0Spec::Tabulated(b0)).unwrap();
    let s_zero = global_statistic(&fit, &cov, &hyp0, &eval).unwrap();
    let ok = s_zero == 0.0;
    pass &= ok;
    detail.push_str(&format!("S_n(d=0) = {s_zero:.1e}; "));

    // Reparameterization invariance.
    let s_n = global_statistic(&fit, &cov, &hyp, &eval).unwrap();
    let t = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, -0.7, 2.2]);
    let hyp_t = LinearHypothesis::new(&t * hyp.c(), B0Spec::Zero).unwrap();
    let s_t = global_statistic(&fit, &cov, &hyp_t, &eval).unwrap();
    let rel = (s_n - s_t).abs() / s_n.abs();
    let ok = rel <= 1e-8;
    pass &= ok;
    detail.push_str(&format!("reparameterization rel dev {rel:.2e}"));

    assert!(verdict("6 (bootstrap/SCB structure)", pass, &detail));
}

#[test]
fn criterion_7_determinism_across_thread_counts() {
    let mut design = SimulationDesign::default();
    design.n = 30;
    design.m = 12;
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let power = run_power_study(
                    &design,
                    &[0.0, 0.4],
                    &[30],
                    &[0.05],
                    4,
                    25,
                    MASTER_SEED ^ 7,
                )
                .unwrap()
                .power_csv();
                let coverage = mvcm::run_coverage_study(
                    &design,
                    30,
                    &[12],
                    &[0.1],
                    3,
                    20,
                    MASTER_SEED ^ 8,
                )
                .unwrap()
                .coverage_csv();
                let data = generate_dataset(&design, MASTER_SEED ^ 9).unwrap();
                let fit = mvcm::benchmark_fit(&data).unwrap();
                let curves = smooth_individuals_auto(&data, &fit).unwrap();
                let cov = empirical_covariance(&data, &curves).unwrap();
                let test = wild_bootstrap_test(
                    &data,
                    &fit,
                    &curves,
                    &cov,
                    &effect_hypothesis(),
                    30,
                    MASTER_SEED ^ 10,
                )
                .unwrap();
                let draws = test
                    .draws
                    .iter()
                    .map(|d| format!("{d}"))
                    .collect::<Vec<_>>()
                    .join(",");
                (power, coverage, format!("{};{}", test.p_value, draws))
            })
    };
    let serial = run(1);
    let parallel = run(4);
    let pass = serial == parallel;
    assert!(verdict(
        "7 (determinism across thread counts)",
        pass,
        "study CSVs and bootstrap draws byte-identical with 1 vs 4 threads",
    ));
}

#[test]
fn criterion_8_mise_rate_sanity() {
    let reps = 50u64;
    let mut mise_coarse: Vec<f64> = Vec::new();
    let mut mise_fine: Vec<f64> = Vec::new();
    let pairs: Vec<(f64, f64)> = (0..reps)
        .map(|rep| {
            let seed = derive_seed(MASTER_SEED, &[8, rep]);
            let mut coarse = SimulationDesign::default();
            coarse.n = 200;
            coarse.m = 25;
            let mut fine = coarse.clone();
            fine.m = 100;
            (
                common::empirical_mise(&coarse, seed),
                common::empirical_mise(&fine, seed),
            )
        })
        .collect();
    for (c, f) in pairs {
        mise_coarse.push(c);
        mise_fine.push(f);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let med_coarse = median(&mut mise_coarse);
    let med_fine = median(&mut mise_fine);
    let pass = med_fine < med_coarse;
    assert!(verdict(
        "8 (MISE rate sanity)",
        pass,
        &format!("median MISE: M=100 {med_fine:.4} < M=25 {med_coarse:.4}"),
    ));
}
