//! Monte Carlo checks of the functional PCA stage against the generating
//! eigenstructure.

use mvcm::{
    compute_scores, cross_covariance_from_scores, decompose_all, derive_seed,
    empirical_covariance, generate_dataset, smooth_individuals_auto, Retention, SimulationDesign,
};

fn pipeline(
    design: &SimulationDesign,
    seed: u64,
) -> (
    mvcm::FunctionalDataset,
    mvcm::CoefficientFit,
    mvcm::IndividualCurves,
    mvcm::CovarianceEstimate,
) {
    let data = generate_dataset(design, seed).unwrap();
    let fit = mvcm::benchmark_fit(&data).unwrap();
    let curves = smooth_individuals_auto(&data, &fit).unwrap();
    let cov = empirical_covariance(&data, &curves).unwrap();
    (data, fit, curves, cov)
}

#[test]
fn leading_eigenvalues_recovered_from_fitted_curves() {
    let mut design = SimulationDesign::default();
    design.n = 500;
    design.m = 100;
    let (_, _, _, cov) = pipeline(&design, derive_seed(29, &[0]));
    let eig = decompose_all(&cov, Retention::Count(4)).unwrap();
    // True spectra per response: (1.2, 0.6) and (1.0, 0.5).
    let targets = [[1.2, 0.6], [1.0, 0.5]];
    for j in 0..2 {
        for l in 0..2 {
            let estimate = eig.response(j).eigenvalues()[l];
            let target = targets[j][l];
            let rel = (estimate - target).abs() / target;
            assert!(
                rel <= 0.20,
                "eigenvalue ({j}, {l}) = {estimate}, target {target}, rel err {rel}"
            );
        }
    }
    // Every diagonal block stays positive semi-definite by construction.
    for j in 0..2 {
        let block = cov.block(j, j);
        let min_eig = block
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig >= -1e-10 * block.trace());
    }
}

#[test]
fn score_variance_tracks_eigenvalues() {
    let mut design = SimulationDesign::default();
    design.n = 500;
    design.m = 100;
    let (_, _, curves, cov) = pipeline(&design, derive_seed(37, &[1]));
    let eig = decompose_all(&cov, Retention::Count(2)).unwrap();
    let scores = compute_scores(&curves, &eig);
    for j in 0..2 {
        let lambda = eig.response(j).eigenvalues()[0];
        let col = scores.response(j).column(0);
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let rel = (var - lambda).abs() / lambda;
        assert!(
            rel <= 0.15,
            "score variance {var} vs eigenvalue {lambda} (response {j}), rel {rel}"
        );
    }
}

#[test]
fn independent_responses_have_vanishing_cross_block() {
    // The two responses share no scores in the generator, so the
    // reconstructed cross-covariance is Monte Carlo noise around zero.
    let mut design = SimulationDesign::default();
    design.n = 800;
    design.m = 50;
    let (_, _, curves, cov) = pipeline(&design, derive_seed(41, &[2]));
    let eig = decompose_all(&cov, Retention::Count(2)).unwrap();
    let scores = compute_scores(&curves, &eig);
    let cross = cross_covariance_from_scores(&scores, &eig, 0, 1);
    let sup = cross.abs().max();
    // Scale: the direct diagonal blocks are O(1) (leading eigenvalue 1.2).
    assert!(
        sup <= 0.25,
        "cross-covariance sup {sup} too large for independent responses"
    );
    // And it agrees with the directly estimated off-diagonal block up to
    // truncation error.
    let direct = cov.block(0, 1);
    let diff = (&cross - direct).abs().max();
    assert!(diff <= 0.35, "cross block deviates from direct estimate by {diff}");
}
