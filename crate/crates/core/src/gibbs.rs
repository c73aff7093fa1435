//! The Gibbs sampler: alternate NIW posterior draws with hyperplane-truncated
//! imputation of the incomplete observations.
//!
//! Each iteration recomputes the NIW posterior from the pristine prior and
//! the current imputed batch, draws `(mu, Sigma)`, records the draw once past
//! burn-in (on the thinning grid), then redraws the whole batch under the new
//! parameters. Identity-aligned observations never change.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::analytics;
use crate::gaussian::{cov_to_corr, CorrelationMatrix, GaussianParams};
use crate::hyperplane::sample_truncated_batch_with;
use crate::niw::{posterior_update, sample_niw, NIWParams};
use crate::observation::{least_norm_fill, Observation};
use crate::rng::{Domain, StreamFamily};
use crate::{Error, Result};

/// Chain shape and determinism knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsConfig {
    /// Discarded iterations before any draw is recorded.
    pub burn_in: usize,
    /// Iterations after burn-in; `ceil(retained / thin)` draws are recorded.
    pub retained: usize,
    /// Record every `thin`-th post-burn-in iteration.
    pub thin: usize,
    /// Root seed for every rng stream the run consumes.
    pub seed: u64,
    /// Permit one jitter repair per batch when a Gram factorization fails.
    pub jitter: bool,
}

impl GibbsConfig {
    pub fn new(burn_in: usize, retained: usize, seed: u64) -> Self {
        GibbsConfig {
            burn_in,
            retained,
            thin: 1,
            seed,
            jitter: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.retained == 0 {
            return Err(Error::InvalidParameter {
                what: "retained must be at least 1",
            });
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter {
                what: "thin must be at least 1",
            });
        }
        Ok(())
    }

    /// Number of draws a run with this config records.
    pub fn chain_len(&self) -> usize {
        self.retained.div_ceil(self.thin)
    }
}

/// Recorded posterior draws plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    mean_samples: Vec<DVector<f64>>,
    cov_samples: Vec<DMatrix<f64>>,
    corr_samples: Vec<CorrelationMatrix>,
    config: GibbsConfig,
    prior: NIWParams,
}

impl PosteriorChain {
    /// Rebuilds a chain (e.g. from disk), revalidating the invariants: equal
    /// non-zero lengths, consistent dimensions, and each correlation matrix
    /// equal to `cov_to_corr` of its covariance within 1e-10.
    pub fn from_parts(
        mean_samples: Vec<DVector<f64>>,
        cov_samples: Vec<DMatrix<f64>>,
        corr_samples: Vec<CorrelationMatrix>,
        config: GibbsConfig,
        prior: NIWParams,
    ) -> Result<Self> {
        let k = mean_samples.len();
        if k == 0 {
            return Err(Error::Empty {
                what: "chain samples",
            });
        }
        if cov_samples.len() != k || corr_samples.len() != k {
            return Err(Error::DimensionMismatch {
                what: "chain sample lists",
                expected: k,
                got: cov_samples.len().min(corr_samples.len()),
            });
        }
        let n = prior.n();
        for (t, ((mean, cov), corr)) in mean_samples
            .iter()
            .zip(&cov_samples)
            .zip(&corr_samples)
            .enumerate()
        {
            if mean.len() != n || cov.nrows() != n || corr.n() != n {
                return Err(Error::DimensionMismatch {
                    what: "chain sample",
                    expected: n,
                    got: mean.len(),
                }
                .at_iteration(t));
            }
            let derived = cov_to_corr(cov).map_err(|e| e.at_iteration(t))?;
            let dev = (derived.as_matrix() - corr.as_matrix())
                .iter()
                .fold(0.0_f64, |acc, v| acc.max(v.abs()));
            if dev > 1e-10 {
                return Err(Error::InvalidParameter {
                    what: "corr_samples disagree with cov_samples",
                }
                .at_iteration(t));
            }
        }
        Ok(PosteriorChain {
            mean_samples,
            cov_samples,
            corr_samples,
            config,
            prior,
        })
    }

    pub fn len(&self) -> usize {
        self.mean_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_samples.is_empty()
    }

    pub fn n(&self) -> usize {
        self.prior.n()
    }

    pub fn mean_samples(&self) -> &[DVector<f64>] {
        &self.mean_samples
    }

    pub fn cov_samples(&self) -> &[DMatrix<f64>] {
        &self.cov_samples
    }

    pub fn corr_samples(&self) -> &[CorrelationMatrix] {
        &self.corr_samples
    }

    pub fn config(&self) -> &GibbsConfig {
        &self.config
    }

    pub fn prior(&self) -> &NIWParams {
        &self.prior
    }

    /// The scalar trace of one correlation entry across the chain.
    pub fn corr_entry_samples(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        let n = self.n();
        if i >= n || j >= n {
            return Err(Error::IndexOutOfRange {
                what: "correlation entry",
                index: i.max(j),
                n,
            });
        }
        Ok(self
            .corr_samples
            .iter()
            .map(|c| c.as_matrix()[(i, j)])
            .collect())
    }

    /// Posterior-mean parameters: averaged mean vector and covariance.
    pub fn posterior_mean_params(&self) -> Result<GaussianParams> {
        let k = self.len() as f64;
        let n = self.n();
        let mut mean = DVector::zeros(n);
        for m in &self.mean_samples {
            mean += m;
        }
        mean /= k;
        let mut cov = DMatrix::zeros(n, n);
        for c in &self.cov_samples {
            cov += c;
        }
        cov /= k;
        GaussianParams::new(mean, cov)
    }
}

/// Element-wise average of the correlation draws. The diagonal stays exactly
/// one and off-diagonal entries are clamped into `[-1, 1]` against summation
/// round-off.
pub fn posterior_mean_corr(chain: &PosteriorChain) -> CorrelationMatrix {
    let n = chain.n();
    let k = chain.len() as f64;
    let mut acc = DMatrix::zeros(n, n);
    for c in chain.corr_samples() {
        acc += c.as_matrix();
    }
    acc /= k;
    for i in 0..n {
        acc[(i, i)] = 1.0;
        for j in 0..i {
            let v = acc[(i, j)].clamp(-1.0, 1.0);
            acc[(i, j)] = v;
            acc[(j, i)] = v;
        }
    }
    CorrelationMatrix::new(acc).expect("average of correlation matrices is one")
}

/// Average correlation with every entry not decided `RejectNull` zeroed; a
/// convenience composing [`posterior_mean_corr`] with the analytics layer.
pub fn thresholded_mean_corr(
    chain: &PosteriorChain,
    settings: &analytics::RopeSettings,
) -> Result<CorrelationMatrix> {
    let corr = posterior_mean_corr(chain);
    let decisions = analytics::rope_decisions(chain, settings)?;
    analytics::threshold_display(&corr, &decisions)
}

fn singleton_means(observations: &[Observation], mu0: &DVector<f64>) -> DVector<f64> {
    let n = mu0.len();
    let mut sums: DVector<f64> = DVector::zeros(n);
    let mut counts = alloc::vec![0usize; n];
    for obs in observations {
        for (ri, s) in obs.alignment().spans().iter().enumerate() {
            if s.len == 1 {
                sums[s.start] += obs.recording()[ri];
                counts[s.start] += 1;
            }
        }
    }
    DVector::from_fn(n, |j, _| {
        if counts[j] > 0 {
            sums[j] / counts[j] as f64
        } else {
            mu0[j]
        }
    })
}

/// Runs the sampler and returns the recorded chain.
///
/// Initialization: each observation is completed by [`least_norm_fill`]
/// against a fallback mean built from per-link singleton averages (falling
/// back to `mu0` for links never observed alone). Iteration `t` then
/// recomputes the posterior from the pristine prior and the current batch,
/// draws `(mu, Sigma, Corr)`, records it when past burn-in on the thinning
/// grid, and finally redraws the batch. Errors carry the 1-based iteration.
///
/// Determinism: iteration `t` uses NIW stream `(seed, Niw, 0, t)` and latent
/// streams `(seed, Latent, t, i)` for observation `i`, so runs are bitwise
/// reproducible for a given seed and observation order.
pub fn run_gibbs(
    observations: &[Observation],
    prior: &NIWParams,
    config: &GibbsConfig,
) -> Result<PosteriorChain> {
    config.validate()?;
    if observations.is_empty() {
        return Err(Error::Empty {
            what: "observations",
        });
    }
    let n = prior.n();
    for obs in observations {
        if obs.n() != n {
            return Err(Error::DimensionMismatch {
                what: "observation alignment",
                expected: n,
                got: obs.n(),
            });
        }
    }

    let fallback = singleton_means(observations, prior.mu0());
    let mut xs: Vec<DVector<f64>> = observations
        .iter()
        .map(|obs| least_norm_fill(obs, &fallback))
        .collect::<Result<_>>()?;

    let niw_streams = StreamFamily::new(config.seed, Domain::Niw, 0);
    let total = config.burn_in + config.retained;
    let mut mean_samples = Vec::with_capacity(config.chain_len());
    let mut cov_samples = Vec::with_capacity(config.chain_len());
    let mut corr_samples = Vec::with_capacity(config.chain_len());

    for t in 1..=total {
        let wrap = |e: Error| e.at_iteration(t);
        let posterior = posterior_update(prior, &xs).map_err(wrap)?;
        let params = sample_niw(&posterior, &mut niw_streams.stream(t as u64)).map_err(wrap)?;

        if t > config.burn_in && (t - config.burn_in - 1) % config.thin == 0 {
            corr_samples.push(cov_to_corr(params.cov()).map_err(wrap)?);
            mean_samples.push(params.mean().clone());
            cov_samples.push(params.cov().clone());
        }

        let latent = StreamFamily::new(config.seed, Domain::Latent, t as u64);
        xs = sample_truncated_batch_with(&params, observations, &latent, config.jitter)
            .map_err(wrap)?;

        #[cfg(debug_assertions)]
        if t % 100 == 0 {
            for (obs, x) in observations.iter().zip(&xs) {
                let scale = obs
                    .recording()
                    .iter()
                    .fold(1.0_f64, |acc, v| acc.max(v.abs()));
                debug_assert!(
                    obs.constraint_residual(x) <= 1e-8 * scale,
                    "constraint residual exceeded tolerance at iteration {t}"
                );
            }
        }
    }

    PosteriorChain::from_parts(
        mean_samples,
        cov_samples,
        corr_samples,
        *config,
        prior.clone(),
    )
}
