//! Split-chain potential scale reduction, reported as an advisory
//! convergence check; nothing gates on it.

use anyhow::{bail, Result};
use linktime_core::gibbs::PosteriorChain;

/// Split-chain R-hat for one scalar trace per chain.
///
/// Each chain is halved (odd lengths drop their middle element), then the
/// classic between/within variance ratio is taken over the half-chains:
/// `sqrt(((L-1)/L * W + B/L) / W)`. Values near 1 indicate the chains mix.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        bail!("split R-hat needs at least two chains, got {}", chains.len());
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        bail!("split R-hat needs equal-length chains");
    }
    if len < 4 {
        bail!("split R-hat needs at least 4 draws per chain, got {len}");
    }

    let half = len / 2;
    let mut halves: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        halves.push(&c[..half]);
        halves.push(&c[len - half..]);
    }

    let l = half as f64;
    let m = halves.len() as f64;
    let means: Vec<f64> = halves
        .iter()
        .map(|h| h.iter().sum::<f64>() / l)
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = l / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (l - 1.0))
        .sum::<f64>()
        / m;

    if w == 0.0 {
        // Degenerate traces: identical constants across chains are as
        // converged as it gets; differing constants never will be.
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (l - 1.0) / l * w + b / l;
    Ok((var_plus / w).sqrt())
}

/// Largest split R-hat across the mean-vector components of parallel
/// chains, with the offending component (0-based).
pub fn max_split_rhat_means(chains: &[PosteriorChain]) -> Result<(f64, usize)> {
    if chains.len() < 2 {
        bail!("need at least two chains");
    }
    let n = chains[0].n();
    let mut worst = (f64::NEG_INFINITY, 0usize);
    for comp in 0..n {
        let traces: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.mean_samples().iter().map(|mu| mu[comp]).collect())
            .collect();
        let r = split_rhat(&traces)?;
        if r > worst.0 {
            worst = (r, comp);
        }
    }
    Ok(worst)
}
