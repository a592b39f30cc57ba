//! Empirical covariance of the individual curves and its spectral
//! decomposition.
//!
//! The covariance operator is discretized with trapezoidal quadrature
//! weights, so eigenfunctions come out orthonormal in the L²([0,1]) inner
//! product induced by the grid. Principal component scores follow the
//! left-Riemann sum convention (with `s_0 = 0`); a trapezoid variant exists
//! for quadrature-consistent reconstructions.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::dataset::FunctionalDataset;
use crate::error::{MvcmError, Result};
use crate::linalg::trapezoid_weights;
use crate::smooth::IndividualCurves;

/// Blockwise empirical covariance `Σ̂_η,jj'(s_a, s_b)` on the data grid.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    /// `blocks[j][j']` is the `M x M` block.
    blocks: Vec<Vec<DMatrix<f64>>>,
    grid: Vec<f64>,
    n: usize,
    p: usize,
}

impl CovarianceEstimate {
    /// Wraps an externally assembled block covariance. `blocks[j][j']` must
    /// be `M x M` with `M = grid.len()`, and `n > p`.
    pub fn from_blocks(
        blocks: Vec<Vec<DMatrix<f64>>>,
        grid: Vec<f64>,
        n: usize,
        p: usize,
    ) -> Result<Self> {
        let j_dim = blocks.len();
        let m_len = grid.len();
        if n <= p {
            return Err(MvcmError::DegreesOfFreedom { n, p });
        }
        for row in &blocks {
            if row.len() != j_dim {
                return Err(MvcmError::DimensionMismatch(
                    "covariance blocks must form a square J x J layout".into(),
                ));
            }
            for block in row {
                if block.shape() != (m_len, m_len) {
                    return Err(MvcmError::DimensionMismatch(format!(
                        "covariance block is {:?}, expected {m_len} x {m_len}",
                        block.shape()
                    )));
                }
            }
        }
        Ok(Self { blocks, grid, n, p })
    }

    pub fn block(&self, j: usize, j_other: usize) -> &DMatrix<f64> {
        &self.blocks[j][j_other]
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn num_responses(&self) -> usize {
        self.blocks.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `J x J` covariance matrix at the grid point with index `m`.
    pub fn diagonal_at_index(&self, m: usize) -> DMatrix<f64> {
        let j_dim = self.num_responses();
        DMatrix::from_fn(j_dim, j_dim, |a, b| self.blocks[a][b][(m, m)])
    }

    /// `Σ̂_η(s, s)` at an arbitrary location: exact on grid points, linearly
    /// interpolated along the diagonal between them.
    pub fn diagonal_at_location(&self, s: f64) -> DMatrix<f64> {
        let grid = &self.grid;
        let m_len = grid.len();
        if s <= grid[0] {
            return self.diagonal_at_index(0);
        }
        if s >= grid[m_len - 1] {
            return self.diagonal_at_index(m_len - 1);
        }
        let hi = grid.partition_point(|&g| g < s);
        if (grid[hi] - s).abs() < 1e-12 {
            return self.diagonal_at_index(hi);
        }
        let lo = hi - 1;
        let t = (s - grid[lo]) / (grid[hi] - grid[lo]);
        let a = self.diagonal_at_index(lo);
        let b = self.diagonal_at_index(hi);
        a * (1.0 - t) + b * t
    }
}

/// Empirical covariance `(n - p)⁻¹ Σ_i η̂_i(s) η̂_i(t)ᵀ` of the smoothed
/// individual curves. Diagonal blocks are symmetrized against roundoff.
pub fn empirical_covariance(
    data: &FunctionalDataset,
    curves: &IndividualCurves,
) -> Result<CovarianceEstimate> {
    let (n, j_dim, m_len) = curves.eta_hat().dim();
    let p = data.p();
    if n <= p {
        return Err(MvcmError::DegreesOfFreedom { n, p });
    }
    let norm = 1.0 / (n - p) as f64;
    let eta = curves.eta_hat();
    let mut blocks: Vec<Vec<DMatrix<f64>>> =
        vec![vec![DMatrix::zeros(m_len, m_len); j_dim]; j_dim];
    for j in 0..j_dim {
        for jp in j..j_dim {
            let mut block = DMatrix::zeros(m_len, m_len);
            for i in 0..n {
                let row_j = eta.slice(ndarray::s![i, j, ..]);
                let row_jp = eta.slice(ndarray::s![i, jp, ..]);
                for a in 0..m_len {
                    let va = row_j[a];
                    if va == 0.0 {
                        continue;
                    }
                    for b in 0..m_len {
                        block[(a, b)] += va * row_jp[b];
                    }
                }
            }
            block *= norm;
            if jp == j {
                // Guard roundoff: average with the transpose.
                let sym = 0.5 * (&block + block.transpose());
                blocks[j][j] = sym;
            } else {
                blocks[jp][j] = block.transpose();
                blocks[j][jp] = block;
            }
        }
    }
    Ok(CovarianceEstimate {
        blocks,
        grid: data.grid().to_vec(),
        n,
        p,
    })
}

/// How many eigenpairs to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Retention {
    Count(usize),
    /// Smallest count whose cumulative eigenvalue share reaches the
    /// threshold.
    Energy(f64),
}

impl Default for Retention {
    fn default() -> Self {
        Retention::Energy(0.99)
    }
}

/// Eigenpairs of one response's covariance block.
#[derive(Debug, Clone)]
pub struct ResponseEigen {
    /// Retained eigenvalues, descending.
    eigenvalues: Vec<f64>,
    /// `L x M` discretized eigenfunctions, orthonormal under the quadrature
    /// weights.
    eigenfunctions: Array2<f64>,
    /// Full spectrum (all `M` values, negatives clipped to zero).
    full_spectrum: Vec<f64>,
    energy_fractions: Vec<f64>,
    clipped: usize,
}

impl ResponseEigen {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunctions(&self) -> &Array2<f64> {
        &self.eigenfunctions
    }

    pub fn full_spectrum(&self) -> &[f64] {
        &self.full_spectrum
    }

    pub fn energy_fractions(&self) -> &[f64] {
        &self.energy_fractions
    }

    pub fn retained(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Number of negative eigenvalues clipped to zero.
    pub fn clipped(&self) -> usize {
        self.clipped
    }
}

/// Eigen systems for all responses plus the quadrature context.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    responses: Vec<ResponseEigen>,
    grid: Vec<f64>,
    n: usize,
    p: usize,
}

impl EigenSystem {
    pub fn response(&self, j: usize) -> &ResponseEigen {
        &self.responses[j]
    }

    pub fn num_responses(&self) -> usize {
        self.responses.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

/// Spectral decomposition of one diagonal covariance block.
///
/// The block is conjugated by the square root of the trapezoid weight matrix
/// so the discrete eigenproblem matches the L² operator; eigenfunctions are
/// transformed back and sign-fixed deterministically (nonnegative inner
/// product with the constant function, falling back to a positive leading
/// magnitude entry).
pub fn spectral_decompose(
    cov: &CovarianceEstimate,
    j: usize,
    retention: Retention,
) -> Result<ResponseEigen> {
    let m_len = cov.grid().len();
    let w = trapezoid_weights(cov.grid());
    let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let block = cov.block(j, j);
    let conjugated = DMatrix::from_fn(m_len, m_len, |a, b| sqrt_w[a] * block[(a, b)] * sqrt_w[b]);
    let eig = conjugated.symmetric_eigen();

    let mut order: Vec<usize> = (0..m_len).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut full_spectrum = Vec::with_capacity(m_len);
    let mut clipped = 0usize;
    for &idx in &order {
        let lambda = eig.eigenvalues[idx];
        if lambda < 0.0 {
            clipped += 1;
            full_spectrum.push(0.0);
        } else {
            full_spectrum.push(lambda);
        }
    }
    let total: f64 = full_spectrum.iter().sum();
    let retained = match retention {
        Retention::Count(count) => count.min(m_len).max(1),
        Retention::Energy(threshold) => {
            if total <= 0.0 {
                1
            } else {
                let mut acc = 0.0;
                let mut count = m_len;
                for (k, lambda) in full_spectrum.iter().enumerate() {
                    acc += lambda;
                    if acc >= threshold * total {
                        count = k + 1;
                        break;
                    }
                }
                count
            }
        }
    };

    let mut eigenfunctions = Array2::zeros((retained, m_len));
    for (l, &idx) in order.iter().take(retained).enumerate() {
        let column = eig.eigenvectors.column(idx);
        let mut psi: Vec<f64> = (0..m_len).map(|m| column[m] / sqrt_w[m]).collect();
        orient(&mut psi, &w);
        for m in 0..m_len {
            eigenfunctions[[l, m]] = psi[m];
        }
    }
    let energy_fractions = full_spectrum
        .iter()
        .take(retained)
        .map(|l| if total > 0.0 { l / total } else { 0.0 })
        .collect();
    Ok(ResponseEigen {
        eigenvalues: full_spectrum[..retained].to_vec(),
        eigenfunctions,
        full_spectrum,
        energy_fractions,
        clipped,
    })
}

/// Decomposes every response with a shared retention rule.
pub fn decompose_all(cov: &CovarianceEstimate, retention: Retention) -> Result<EigenSystem> {
    let responses = (0..cov.num_responses())
        .map(|j| spectral_decompose(cov, j, retention))
        .collect::<Result<Vec<_>>>()?;
    Ok(EigenSystem {
        responses,
        grid: cov.grid().to_vec(),
        n: cov.n(),
        p: cov.p(),
    })
}

fn orient(psi: &mut [f64], w: &[f64]) {
    let inner: f64 = psi.iter().zip(w).map(|(v, w)| v * w).sum();
    let scale: f64 = psi.iter().zip(w).map(|(v, w)| v.abs() * w).sum();
    let flip = if inner.abs() > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        inner < 0.0
    } else {
        let mut lead = 0usize;
        for (k, v) in psi.iter().enumerate() {
            if v.abs() > psi[lead].abs() {
                lead = k;
            }
        }
        psi[lead] < 0.0
    };
    if flip {
        for v in psi.iter_mut() {
            *v = -*v;
        }
    }
}

/// Integration rule for principal component scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreWeights {
    /// `Σ_m η̂(s_m) ψ(s_m) (s_m - s_{m-1})` with `s_0 = 0`.
    #[default]
    RiemannLeft,
    /// Trapezoid weights; consistent with the eigenproblem quadrature.
    Trapezoid,
}

/// Principal component scores per response (`n x L_j`).
#[derive(Debug, Clone)]
pub struct Scores {
    per_response: Vec<Array2<f64>>,
}

impl Scores {
    pub fn response(&self, j: usize) -> &Array2<f64> {
        &self.per_response[j]
    }

    pub fn num_responses(&self) -> usize {
        self.per_response.len()
    }
}

/// Scores with the default left-Riemann rule.
pub fn compute_scores(curves: &IndividualCurves, eig: &EigenSystem) -> Scores {
    compute_scores_with(curves, eig, ScoreWeights::default())
}

/// Scores with an explicit integration rule.
pub fn compute_scores_with(
    curves: &IndividualCurves,
    eig: &EigenSystem,
    rule: ScoreWeights,
) -> Scores {
    let (n, j_dim, m_len) = curves.eta_hat().dim();
    let weights: Vec<f64> = match rule {
        ScoreWeights::RiemannLeft => {
            let grid = eig.grid();
            (0..m_len)
                .map(|m| if m == 0 { grid[0] } else { grid[m] - grid[m - 1] })
                .collect()
        }
        ScoreWeights::Trapezoid => trapezoid_weights(eig.grid()),
    };
    let mut per_response = Vec::with_capacity(j_dim);
    for j in 0..j_dim {
        let resp = eig.response(j);
        let l_dim = resp.retained();
        let mut scores = Array2::zeros((n, l_dim));
        for i in 0..n {
            for l in 0..l_dim {
                let mut acc = 0.0;
                for m in 0..m_len {
                    acc += curves.eta_hat()[[i, j, m]]
                        * resp.eigenfunctions()[[l, m]]
                        * weights[m];
                }
                scores[[i, l]] = acc;
            }
        }
        per_response.push(scores);
    }
    Scores { per_response }
}

/// Truncated covariance reconstruction between responses `j` and `j_other`
/// from empirical score cross-moments.
pub fn cross_covariance_from_scores(
    scores: &Scores,
    eig: &EigenSystem,
    j: usize,
    j_other: usize,
) -> DMatrix<f64> {
    let m_len = eig.grid().len();
    let norm = 1.0 / (eig.n() - eig.p()) as f64;
    let s_j = scores.response(j);
    let s_jp = scores.response(j_other);
    let (n, l_j) = s_j.dim();
    let l_jp = s_jp.dim().1;
    // Empirical cross-moments of the scores.
    let mut moments = DMatrix::zeros(l_j, l_jp);
    for i in 0..n {
        for l in 0..l_j {
            let v = s_j[[i, l]];
            if v == 0.0 {
                continue;
            }
            for lp in 0..l_jp {
                moments[(l, lp)] += v * s_jp[[i, lp]];
            }
        }
    }
    moments *= norm;
    let psi_j = eig.response(j).eigenfunctions();
    let psi_jp = eig.response(j_other).eigenfunctions();
    let mut block = DMatrix::zeros(m_len, m_len);
    for l in 0..l_j {
        for lp in 0..l_jp {
            let coeff = moments[(l, lp)];
            if coeff == 0.0 {
                continue;
            }
            for a in 0..m_len {
                let va = coeff * psi_j[[l, a]];
                if va == 0.0 {
                    continue;
                }
                for b in 0..m_len {
                    block[(a, b)] += va * psi_jp[[lp, b]];
                }
            }
        }
    }
    block
}
