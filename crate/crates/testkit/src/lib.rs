//! Slow-but-obvious reference implementations and statistical test helpers.
//!
//! Everything here trades speed for transparency: explicit inverses, naive
//! summations, dense matrix algebra. Production code must never call into
//! this crate; it exists so tests can check the fast implementations against
//! independently written oracles.

use linktime_core::nalgebra::{DMatrix, DVector};
use linktime_core::observation::Observation;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Arithmetic mean of the sample vectors.
pub fn empirical_mean(xs: &[DVector<f64>]) -> DVector<f64> {
    let n = xs[0].len();
    let mut m = DVector::zeros(n);
    for x in xs {
        m += x;
    }
    m / xs.len() as f64
}

/// Sample covariance about the empirical mean, dividing by `m` (not `m - 1`)
/// to match the scatter convention used in the conjugate update.
pub fn empirical_cov(xs: &[DVector<f64>]) -> DMatrix<f64> {
    let n = xs[0].len();
    let mean = empirical_mean(xs);
    let mut s = DMatrix::zeros(n, n);
    for x in xs {
        let d = x - &mean;
        s += &d * d.transpose();
    }
    s / xs.len() as f64
}

/// Unbiased sample covariance (divides by `m - 1`).
pub fn empirical_cov_unbiased(xs: &[DVector<f64>]) -> DMatrix<f64> {
    let m = xs.len() as f64;
    empirical_cov(xs) * (m / (m - 1.0))
}

/// Monte Carlo standard error of a mean component: `sqrt(Sigma_jj / N)`.
pub fn se_mean(cov: &DMatrix<f64>, j: usize, n_samples: usize) -> f64 {
    (cov[(j, j)] / n_samples as f64).sqrt().max(1e-9)
}

/// Monte Carlo standard error of a covariance entry under Gaussian sampling:
/// `sqrt((Sigma_ii Sigma_jj + Sigma_ij^2) / N)`.
pub fn se_cov(cov: &DMatrix<f64>, i: usize, j: usize, n_samples: usize) -> f64 {
    ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)] * cov[(i, j)]) / n_samples as f64)
        .sqrt()
        .max(1e-9)
}

/// Matrix exponential by direct Taylor summation, accurate for small norms.
pub fn taylor_expm(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut acc = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=terms {
        term = (&term * m) / k as f64;
        acc += &term;
    }
    acc
}

/// Log density of a multivariate Gaussian via explicit inversion.
pub fn naive_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let inv = cov.clone().try_inverse().expect("oracle covariance invertible");
    let det = cov.determinant();
    let d = x - mean;
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + det.ln() + (d.transpose() * inv * d)[(0, 0)])
}

/// KL divergence between Gaussians via explicit inversion.
pub fn naive_kl(
    mean_p: &DVector<f64>,
    cov_p: &DMatrix<f64>,
    mean_q: &DVector<f64>,
    cov_q: &DMatrix<f64>,
) -> f64 {
    let n = mean_p.len() as f64;
    let inv_q = cov_q.clone().try_inverse().expect("oracle covariance invertible");
    let d = mean_q - mean_p;
    0.5 * ((cov_q.determinant() / cov_p.determinant()).ln() - n
        + (&inv_q * cov_p).trace()
        + (d.transpose() * &inv_q * &d)[(0, 0)])
}

/// Conjugate NIW update written as the literal textbook formulas, using the
/// sum-of-outer-products expansion `S = sum x x' - m xbar xbar'` so the
/// arithmetic path differs from the production two-pass version.
pub fn brute_force_niw_update(
    mu0: &DVector<f64>,
    lambda0: f64,
    psi0: &DMatrix<f64>,
    nu0: f64,
    xs: &[DVector<f64>],
) -> (DVector<f64>, f64, DMatrix<f64>, f64) {
    let m = xs.len() as f64;
    let n = mu0.len();
    if xs.is_empty() {
        return (mu0.clone(), lambda0, psi0.clone(), nu0);
    }
    let xbar = empirical_mean(xs);
    let mut outer = DMatrix::zeros(n, n);
    for x in xs {
        outer += x * x.transpose();
    }
    let s = outer - m * &xbar * xbar.transpose();
    let dm = &xbar - mu0;
    let psi = psi0 + &s + (lambda0 * m / (lambda0 + m)) * &dm * dm.transpose();
    let mu = (lambda0 * mu0 + m * &xbar) / (lambda0 + m);
    (mu, lambda0 + m, psi, nu0 + m)
}

/// Exact moments of `x ~ N(mean, cov)` conditioned on `G x = r`: classic
/// conditioning of `x` on the linear functional `y = G x` at value `r`,
/// through explicit inverses. The production sampler never forms these
/// moments, so matching them empirically is an independent check.
pub fn constrained_moments_oracle(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    g: &DMatrix<f64>,
    r: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let syg = cov * g.transpose();
    let gyg = g * cov * g.transpose();
    let gyg_inv = gyg.try_inverse().expect("Gram invertible");
    let cmean = mean + &syg * &gyg_inv * (r - g * mean);
    let ccov = cov - &syg * &gyg_inv * syg.transpose();
    (cmean, ccov)
}

/// Two-sample energy distance test by permutation. Returns
/// `(statistic, p_value)` with `p = (1 + #{perm >= obs}) / (B + 1)`.
///
/// Groups larger than `max_per_group` are subsampled deterministically from
/// the seed. `B = 199` permutations by default.
pub fn energy_distance_test(
    xs: &[DVector<f64>],
    ys: &[DVector<f64>],
    seed: u64,
) -> (f64, f64) {
    energy_distance_test_with(xs, ys, seed, 500, 199)
}

pub fn energy_distance_test_with(
    xs: &[DVector<f64>],
    ys: &[DVector<f64>],
    seed: u64,
    max_per_group: usize,
    permutations: usize,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = subsample(xs, max_per_group, &mut rng);
    let ys = subsample(ys, max_per_group, &mut rng);
    let nx = xs.len();
    let ny = ys.len();
    let pooled: Vec<&DVector<f64>> = xs.iter().chain(ys.iter()).collect();
    let total = nx + ny;
    let mut dist = vec![0.0; total * total];
    for i in 0..total {
        for j in (i + 1)..total {
            let d = (pooled[i] - pooled[j]).norm();
            dist[i * total + j] = d;
            dist[j * total + i] = d;
        }
    }
    let stat_for = |labels: &[usize]| -> f64 {
        // labels: indices of the first group in the pooled list.
        let in_x = {
            let mut mask = vec![false; total];
            for &i in labels {
                mask[i] = true;
            }
            mask
        };
        let mut dxy = 0.0;
        let mut dxx = 0.0;
        let mut dyy = 0.0;
        for i in 0..total {
            for j in 0..total {
                let d = dist[i * total + j];
                match (in_x[i], in_x[j]) {
                    (true, false) => dxy += d,
                    (true, true) => dxx += d,
                    (false, false) => dyy += d,
                    _ => {}
                }
            }
        }
        let nxf = labels.len() as f64;
        let nyf = (total - labels.len()) as f64;
        2.0 * dxy / (nxf * nyf) - dxx / (nxf * nxf) - dyy / (nyf * nyf)
    };
    let observed = stat_for(&(0..nx).collect::<Vec<_>>());
    let mut idx: Vec<usize> = (0..total).collect();
    let mut exceed = 0usize;
    for _ in 0..permutations {
        idx.shuffle(&mut rng);
        let labels: Vec<usize> = idx[..nx].to_vec();
        if stat_for(&labels) >= observed {
            exceed += 1;
        }
    }
    let p = (1.0 + exceed as f64) / (permutations as f64 + 1.0);
    (observed, p)
}

fn subsample(xs: &[DVector<f64>], cap: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    if xs.len() <= cap {
        return xs.to_vec();
    }
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.shuffle(rng);
    idx.truncate(cap);
    idx.sort_unstable();
    idx.into_iter().map(|i| xs[i].clone()).collect()
}

/// Completes the latent vectors of a batch the slow way, one dense linear
/// algebra step per observation, for cross-checking the production sampler's
/// constraint handling (not its distribution).
pub fn dense_constraint_projection(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    observation: &Observation,
    y: &DVector<f64>,
) -> DVector<f64> {
    let g = observation.alignment().to_dense();
    let gram = &g * cov * g.transpose();
    let gram_inv = gram.try_inverse().expect("Gram invertible");
    let alpha = gram_inv * (observation.recording() - &g * y);
    let _ = mean;
    y + cov * g.transpose() * alpha
}
