//! Normal-inverse-Wishart prior: conjugate update and exact sampling.
//!
//! The model is `Sigma ~ IW(Psi0, nu0)`, `mu | Sigma ~ N(mu0, Sigma / lambda0)`.
//! Sampling uses the Bartlett decomposition and triangular solves; no matrix
//! is ever inverted explicitly.

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::gaussian::{check_symmetric, GaussianParams};
use crate::{Error, Result};

/// Validated NIW parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NIWParams {
    mu0: DVector<f64>,
    lambda0: f64,
    psi0: DMatrix<f64>,
    nu0: f64,
}

impl NIWParams {
    /// Requires `lambda0 > 0`, `nu0 >= n`, and symmetric positive-definite
    /// `psi0` matching `mu0` in dimension.
    pub fn new(mu0: DVector<f64>, lambda0: f64, psi0: DMatrix<f64>, nu0: f64) -> Result<Self> {
        let n = mu0.len();
        if psi0.nrows() != n || psi0.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "psi0",
                expected: n,
                got: psi0.nrows().max(psi0.ncols()),
            });
        }
        if !(lambda0 > 0.0 && lambda0.is_finite()) {
            return Err(Error::InvalidParameter {
                what: "lambda0 must be positive and finite",
            });
        }
        if !(nu0 >= n as f64 && nu0.is_finite()) {
            return Err(Error::InvalidParameter {
                what: "nu0 must be finite and at least n",
            });
        }
        check_symmetric(&psi0, 1e-9, "psi0")?;
        if DMatrix::cholesky(psi0.clone()).is_none() {
            return Err(Error::NotPositiveDefinite { what: "psi0" });
        }
        Ok(NIWParams {
            mu0,
            lambda0,
            psi0,
            nu0,
        })
    }

    pub fn n(&self) -> usize {
        self.mu0.len()
    }

    pub fn mu0(&self) -> &DVector<f64> {
        &self.mu0
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn psi0(&self) -> &DMatrix<f64> {
        &self.psi0
    }

    pub fn nu0(&self) -> f64 {
        self.nu0
    }

    pub fn into_parts(self) -> (DVector<f64>, f64, DMatrix<f64>, f64) {
        (self.mu0, self.lambda0, self.psi0, self.nu0)
    }
}

/// The weakly informative default: `mu0 = 0`, `lambda0 = 10`, `Psi0 = I`,
/// `nu0 = n + 2`.
pub fn default_prior(n: usize) -> NIWParams {
    NIWParams::new(
        DVector::zeros(n),
        10.0,
        DMatrix::identity(n, n),
        n as f64 + 2.0,
    )
    .expect("default prior parameters are valid")
}

/// Conjugate posterior given complete vectors `xs`:
///
/// ```text
/// mu*     = (lambda0 mu0 + m xbar) / (lambda0 + m)
/// lambda* = lambda0 + m
/// nu*     = nu0 + m
/// Psi*    = Psi0 + S + (lambda0 m / (lambda0 + m)) (xbar - mu0)(xbar - mu0)'
/// ```
///
/// with `S` the scatter about the empirical mean. Returns the prior unchanged
/// for an empty `xs`.
pub fn posterior_update(prior: &NIWParams, xs: &[DVector<f64>]) -> Result<NIWParams> {
    let n = prior.n();
    for x in xs {
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                what: "posterior update vector",
                expected: n,
                got: x.len(),
            });
        }
    }
    if xs.is_empty() {
        return Ok(prior.clone());
    }
    let m = xs.len() as f64;
    let mut xbar = DVector::zeros(n);
    for x in xs {
        xbar += x;
    }
    xbar /= m;

    let mut psi = prior.psi0.clone();
    for x in xs {
        let d = x - &xbar;
        psi.ger(1.0, &d, &d, 1.0);
    }
    let dm = &xbar - &prior.mu0;
    let w = prior.lambda0 * m / (prior.lambda0 + m);
    psi.ger(w, &dm, &dm, 1.0);
    // ger touches both triangles with the same products, but keep the matrix
    // bitwise symmetric regardless of BLAS-order quirks.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (psi[(i, j)] + psi[(j, i)]);
            psi[(i, j)] = v;
            psi[(j, i)] = v;
        }
    }

    let mu = (&prior.mu0 * prior.lambda0 + &xbar * m) / (prior.lambda0 + m);
    NIWParams::new(mu, prior.lambda0 + m, psi, prior.nu0 + m)
}

/// Draws `(mu, Sigma)` from the NIW via the Bartlett decomposition.
///
/// With `Psi = L L'` and Bartlett factor `A` (chi-squared diagonal, standard
/// normal subdiagonal), `M = A^{-1} L'` gives `Sigma = M'M ~ IW(Psi, nu)`,
/// exactly symmetric by construction. Then `mu = mu0 + M'z / sqrt(lambda)`.
///
/// Draw order is fixed (diagonal and subdiagonal row by row, then `z`), so a
/// given rng stream yields identical output across platforms and thread
/// counts.
pub fn sample_niw<R: Rng + ?Sized>(params: &NIWParams, rng: &mut R) -> Result<GaussianParams> {
    let n = params.n();
    let chol = DMatrix::cholesky(params.psi0.clone()).ok_or(Error::NotPositiveDefinite {
        what: "psi0",
    })?;
    let l = chol.l();

    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let df = params.nu0 - i as f64;
        let chi = ChiSquared::new(df).map_err(|_| Error::InvalidParameter {
            what: "nu0 leaves a non-positive chi-squared dof",
        })?;
        a[(i, i)] = Float::sqrt(chi.sample(rng));
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }

    // A M = L'  =>  M = A^{-1} L'
    let m = a
        .solve_lower_triangular(&l.transpose())
        .ok_or(Error::InvalidParameter {
            what: "degenerate Bartlett draw",
        })?;
    let sigma = m.transpose() * &m;

    let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
    let mu = &params.mu0 + m.transpose() * z / Float::sqrt(params.lambda0);

    GaussianParams::new(mu, sigma)
}
