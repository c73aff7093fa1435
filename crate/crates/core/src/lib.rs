//! Bayesian estimation of bus link travel time distributions from incomplete
//! observations.
//!
//! Link travel times of a route with `n` links are modeled as a multivariate
//! Gaussian `x ~ N(mu, Sigma)`. A bus run rarely records every link: links can
//! be missing entirely, and a skipped stop produces a *ragged* value, the sum
//! of two or more adjacent link times. Each run is therefore an
//! [`observation::Observation`]: a recording vector `r` together with a binary
//! alignment matrix `G` such that `r = G x`.
//!
//! Estimation runs a Gibbs sampler ([`gibbs::run_gibbs`]) that alternates
//! between drawing `(mu, Sigma)` from a Gaussian-inverse-Wishart posterior
//! ([`niw`]) given imputed complete vectors, and redrawing the latent vectors
//! from hyperplane-truncated Gaussians ([`hyperplane`]) that satisfy `G x = r`
//! exactly. Posterior chains feed credible intervals, ROPE decisions and KL
//! evaluation ([`analytics`]) and conditional-Gaussian forecasting
//! ([`forecast`]). [`synth`] generates graph-kernel benchmarks with known
//! ground truth.
//!
//! The crate is `no_std` (with `alloc`); all randomness flows through
//! explicitly seeded [`rng::StreamFamily`] substreams, so every result is
//! reproducible bit for bit regardless of scheduling.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analytics;
pub mod error;
pub mod forecast;
pub mod gaussian;
pub mod gibbs;
pub mod hyperplane;
pub mod niw;
pub mod observation;
pub mod rng;
pub mod synth;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

pub use nalgebra;
