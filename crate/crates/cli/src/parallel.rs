//! Deterministic multi-chain execution.
//!
//! Chains are independent given their configs (every random draw flows from
//! the config's seed), so running them on a thread pool cannot change any
//! result: the output vector is bit-identical to a sequential loop for any
//! thread count.

use anyhow::{anyhow, Result};
use linktime_core::gibbs::{run_gibbs, GibbsConfig, PosteriorChain};
use linktime_core::niw::NIWParams;
use linktime_core::observation::Observation;
use rayon::prelude::*;

/// Runs one Gibbs chain per config over the same data, in parallel,
/// preserving config order.
pub fn run_chains(
    observations: &[Observation],
    prior: &NIWParams,
    configs: &[GibbsConfig],
) -> Result<Vec<PosteriorChain>> {
    configs
        .par_iter()
        .map(|cfg| {
            run_gibbs(observations, prior, cfg)
                .map_err(|e| anyhow!("chain with seed {}: {e}", cfg.seed))
        })
        .collect()
}
