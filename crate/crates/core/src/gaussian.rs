//! Dense multivariate Gaussian primitives: parameter containers,
//! covariance/correlation conversion, Cholesky-based sampling, exact
//! conditionals and log density.
//!
//! Every solve goes through a Cholesky factor; no matrix is ever inverted
//! explicitly. Travel times are plain seconds and the model is genuinely
//! Gaussian, so negative samples are possible and deliberately not clamped.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector, Dyn};
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Mean vector and covariance matrix of an `n`-dimensional Gaussian.
///
/// Construction validates symmetry (within `1e-9 * max|cov|`), positive
/// definiteness (Cholesky succeeds) and matching dimensions, so a value of
/// this type is always usable for sampling and conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::DimensionMismatch {
                what: "covariance matrix",
                expected: cov.nrows(),
                got: cov.ncols(),
            });
        }
        if mean.len() != cov.nrows() {
            return Err(Error::DimensionMismatch {
                what: "mean vector",
                expected: cov.nrows(),
                got: mean.len(),
            });
        }
        check_symmetric(&cov, 1e-9 * max_abs(&cov), "covariance matrix")?;
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::NotPositiveDefinite {
                what: "covariance matrix",
            });
        }
        Ok(GaussianParams { mean, cov })
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    pub(crate) fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.cov.clone()).ok_or(Error::NotPositiveDefinite {
            what: "covariance matrix",
        })
    }
}

/// A validated correlation matrix: symmetric, unit diagonal (within 1e-12),
/// entries in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(DMatrix<f64>);

impl CorrelationMatrix {
    pub fn new(corr: DMatrix<f64>) -> Result<Self> {
        if corr.nrows() != corr.ncols() {
            return Err(Error::DimensionMismatch {
                what: "correlation matrix",
                expected: corr.nrows(),
                got: corr.ncols(),
            });
        }
        check_symmetric(&corr, 1e-12, "correlation matrix")?;
        for i in 0..corr.nrows() {
            if (corr[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter {
                    what: "correlation matrix diagonal",
                });
            }
        }
        if corr.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter {
                what: "correlation matrix entry outside [-1, 1]",
            });
        }
        Ok(CorrelationMatrix(corr))
    }

    pub fn identity(n: usize) -> Self {
        CorrelationMatrix(DMatrix::identity(n, n))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Converts a covariance matrix to its correlation matrix:
/// `corr[i][j] = cov[i][j] / sqrt(cov[i][i] * cov[j][j])`.
///
/// The diagonal is set to exactly 1 and the output is exactly symmetric.
pub fn cov_to_corr(cov: &DMatrix<f64>) -> Result<CorrelationMatrix> {
    if cov.nrows() != cov.ncols() {
        return Err(Error::DimensionMismatch {
            what: "covariance matrix",
            expected: cov.nrows(),
            got: cov.ncols(),
        });
    }
    check_symmetric(cov, 1e-9 * max_abs(cov), "covariance matrix")?;
    let n = cov.nrows();
    let mut inv_sd = DVector::zeros(n);
    for i in 0..n {
        let d = cov[(i, i)];
        if d <= 0.0 {
            return Err(Error::NonPositiveDiagonal { index: i });
        }
        inv_sd[i] = 1.0 / Float::sqrt(d);
    }
    let mut corr = DMatrix::identity(n, n);
    for j in 0..n {
        for i in 0..j {
            // Rounding can push a valid entry just past 1 in magnitude.
            let v = (cov[(i, j)] * inv_sd[i] * inv_sd[j]).clamp(-1.0, 1.0);
            corr[(i, j)] = v;
            corr[(j, i)] = v;
        }
    }
    Ok(CorrelationMatrix(corr))
}

/// Draws one sample `mu + L z` with `L` the lower Cholesky factor of the
/// covariance and `z` i.i.d. standard normal, in index order.
pub fn sample_gaussian<R: Rng + ?Sized>(
    params: &GaussianParams,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = params.cholesky()?;
    Ok(sample_with_factor(params.mean(), chol.l_dirty(), rng))
}

/// Sampling core shared with the batch samplers: `mean + L z` where only the
/// lower triangle of `l` is read.
pub(crate) fn sample_with_factor<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    l: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let n = mean.len();
    let z: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let mut x = mean.clone();
    // x += L z, reading only the lower triangle.
    for j in 0..n {
        let zj = z[j];
        for i in j..n {
            x[i] += l[(i, j)] * zj;
        }
    }
    x
}

/// Indices of `0..n` not present in `observed_idx`, ascending.
pub fn complement_indices(n: usize, observed_idx: &[usize]) -> Vec<usize> {
    let mut taken = vec![false; n];
    for &i in observed_idx {
        if i < n {
            taken[i] = true;
        }
    }
    (0..n).filter(|&i| !taken[i]).collect()
}

/// Conditions the Gaussian on exact values at `observed_idx`, returning the
/// conditional distribution over the complementary indices (ascending order):
/// mean `mu_f + S_fo S_oo^-1 (v - mu_o)`, covariance `S_ff - S_fo S_oo^-1 S_of`.
pub fn condition(
    params: &GaussianParams,
    observed_idx: &[usize],
    observed_vals: &DVector<f64>,
) -> Result<GaussianParams> {
    let n = params.n();
    if observed_idx.is_empty() {
        return Err(Error::Empty {
            what: "observed index set",
        });
    }
    let mut seen = vec![false; n];
    for &i in observed_idx {
        if i >= n {
            return Err(Error::IndexOutOfRange {
                what: "observed index",
                index: i,
                n,
            });
        }
        if seen[i] {
            return Err(Error::DuplicateIndex {
                what: "observed index",
                index: i,
            });
        }
        seen[i] = true;
    }
    if observed_idx.len() == n {
        return Err(Error::InvalidParameter {
            what: "observed index set must be a strict subset",
        });
    }
    if observed_vals.len() != observed_idx.len() {
        return Err(Error::DimensionMismatch {
            what: "observed values",
            expected: observed_idx.len(),
            got: observed_vals.len(),
        });
    }
    let fc = complement_indices(n, observed_idx);
    let (k, f) = (observed_idx.len(), fc.len());
    let cov = params.cov();
    let sigma_oo = DMatrix::from_fn(k, k, |a, b| cov[(observed_idx[a], observed_idx[b])]);
    let sigma_of = DMatrix::from_fn(k, f, |a, b| cov[(observed_idx[a], fc[b])]);
    let sigma_ff = DMatrix::from_fn(f, f, |a, b| cov[(fc[a], fc[b])]);
    let mu_o = DVector::from_fn(k, |a, _| params.mean()[observed_idx[a]]);
    let mu_f = DVector::from_fn(f, |a, _| params.mean()[fc[a]]);

    let chol_oo = Cholesky::new(sigma_oo).ok_or(Error::SingularConditioning)?;
    let w = chol_oo.solve(&sigma_of); // S_oo^-1 S_of, k x f
    let mean_f = mu_f + w.transpose() * (observed_vals - mu_o);
    let cond = sigma_ff - sigma_of.transpose() * w;
    let cond = (&cond + cond.transpose()) * 0.5;
    GaussianParams::new(mean_f, cond)
}

/// Log density of the Gaussian at `x`, via the Cholesky factor (no explicit
/// inverse): `-(n/2) log 2pi - (1/2) log|S| - (1/2) (x-mu)' S^-1 (x-mu)`.
pub fn log_density(params: &GaussianParams, x: &DVector<f64>) -> Result<f64> {
    let n = params.n();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            what: "density argument",
            expected: n,
            got: x.len(),
        });
    }
    let chol = params.cholesky()?;
    let log_det = cholesky_log_det(&chol);
    let d = x - params.mean();
    let w = chol
        .l_dirty()
        .solve_lower_triangular(&d)
        .ok_or(Error::NotPositiveDefinite {
            what: "covariance matrix",
        })?;
    let quad = w.norm_squared();
    let ln_2pi = Float::ln(2.0 * core::f64::consts::PI);
    Ok(-0.5 * (n as f64 * ln_2pi + log_det + quad))
}

/// `log|S|` from a Cholesky factor of `S`.
pub(crate) fn cholesky_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let mut s = 0.0;
    for i in 0..l.nrows() {
        s += Float::ln(l[(i, i)]);
    }
    2.0 * s
}

/// Adds `eps * I` with `eps = 1e-8 * trace/n`, escalating by 10 up to three
/// retries, until the matrix factors. Returns the repaired matrix with its
/// Cholesky factor.
pub fn jitter_repair(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    let n = cov.nrows();
    let tr = cov.trace();
    if !(tr > 0.0) {
        return Err(Error::NotPositiveDefinite {
            what: "covariance matrix (non-positive trace)",
        });
    }
    let mut eps = 1e-8 * tr / n as f64;
    for _ in 0..4 {
        let mut m = cov.clone();
        for i in 0..n {
            m[(i, i)] += eps;
        }
        if let Some(chol) = Cholesky::new(m.clone()) {
            return Ok((m, chol));
        }
        eps *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        what: "covariance matrix (jitter repair exhausted)",
    })
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()))
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, tol: f64, what: &'static str) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..j {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(Error::NotSymmetric { what });
            }
        }
    }
    Ok(())
}
