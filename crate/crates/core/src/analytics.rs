//! Posterior summaries: credible intervals, ROPE decisions, KL divergence,
//! and the thresholded correlation display.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_traits::Float;

use crate::gaussian::{cholesky_log_det, CorrelationMatrix, GaussianParams};
use crate::gibbs::PosteriorChain;
use crate::{Error, Result};

/// Equal-tailed credible interval via linearly interpolated quantiles with
/// plotting position `(k - 1) / (N - 1)`. Needs at least two samples and
/// `level` strictly inside `(0, 1)`.
pub fn credible_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter {
            what: "credible interval needs at least two samples",
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter {
            what: "credible level must lie strictly inside (0, 1)",
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&sorted, tail), quantile(&sorted, 1.0 - tail)))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = Float::floor(h) as usize;
    let frac = h - lo as f64;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// ROPE rule parameters. Defaults: rope `(-0.05, 0.05)`, reject when the
/// in-rope posterior fraction falls below 0.05, accept when it exceeds 0.95,
/// and report a 95% credible interval alongside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeSettings {
    pub rope: (f64, f64),
    pub reject_threshold: f64,
    pub accept_threshold: f64,
    pub ci_level: f64,
}

impl Default for RopeSettings {
    fn default() -> Self {
        RopeSettings {
            rope: (-0.05, 0.05),
            reject_threshold: 0.05,
            accept_threshold: 0.95,
            ci_level: 0.95,
        }
    }
}

impl RopeSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rope.0 < self.rope.1) {
            return Err(Error::InvalidParameter {
                what: "rope interval must have positive width",
            });
        }
        for t in [self.reject_threshold, self.accept_threshold] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidParameter {
                    what: "rope thresholds must lie in [0, 1]",
                });
            }
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidParameter {
                what: "credible level must lie strictly inside (0, 1)",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Practically nonzero: almost no posterior mass inside the rope.
    RejectNull,
    /// Practically zero: almost all posterior mass inside the rope.
    AcceptNull,
    Undecided,
}

/// The ROPE outcome for one correlation entry (0-based indices).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeDecision {
    pub entry: (usize, usize),
    pub posterior_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub fraction_in_rope: f64,
    pub verdict: Verdict,
}

/// Applies the ROPE rule to one scalar trace.
pub fn rope_test(
    samples: &[f64],
    entry: (usize, usize),
    settings: &RopeSettings,
) -> Result<RopeDecision> {
    settings.validate()?;
    let (ci_low, ci_high) = credible_interval(samples, settings.ci_level)?;
    let inside = samples
        .iter()
        .filter(|&&v| v > settings.rope.0 && v < settings.rope.1)
        .count();
    let fraction_in_rope = inside as f64 / samples.len() as f64;
    let verdict = if fraction_in_rope < settings.reject_threshold {
        Verdict::RejectNull
    } else if fraction_in_rope > settings.accept_threshold {
        Verdict::AcceptNull
    } else {
        Verdict::Undecided
    };
    let posterior_mean = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok(RopeDecision {
        entry,
        posterior_mean,
        ci_low,
        ci_high,
        fraction_in_rope,
        verdict,
    })
}

/// ROPE decisions for every off-diagonal entry `i < j` of the correlation
/// matrix, in row-major order.
pub fn rope_decisions(
    chain: &PosteriorChain,
    settings: &RopeSettings,
) -> Result<Vec<RopeDecision>> {
    let n = chain.n();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let trace = chain.corr_entry_samples(i, j)?;
            out.push(rope_test(&trace, (i, j), settings)?);
        }
    }
    Ok(out)
}

/// KL(p || q) between Gaussians, computed from Cholesky factors:
///
/// ```text
/// KL = 0.5 [ ln|Sq|/|Sp| - n + tr(Sq^{-1} Sp) + (mq - mp)' Sq^{-1} (mq - mp) ]
/// ```
///
/// The trace term is the squared Frobenius norm of `Lq^{-1} Lp` and the
/// quadratic term the squared norm of `Lq^{-1} (mq - mp)`. Clamped at zero
/// against round-off, so `kl_gaussian(p, p) == 0`.
pub fn kl_gaussian(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    let n = p.n();
    if q.n() != n {
        return Err(Error::DimensionMismatch {
            what: "kl operands",
            expected: n,
            got: q.n(),
        });
    }
    let chol_p = DMatrix::cholesky(p.cov().clone()).ok_or(Error::NotPositiveDefinite {
        what: "kl first operand",
    })?;
    let chol_q = DMatrix::cholesky(q.cov().clone()).ok_or(Error::NotPositiveDefinite {
        what: "kl second operand",
    })?;
    let log_det_p = cholesky_log_det(&chol_p);
    let log_det_q = cholesky_log_det(&chol_q);

    let lp = chol_p.l();
    let x = chol_q
        .l_dirty()
        .solve_lower_triangular(&lp)
        .ok_or(Error::NotPositiveDefinite {
            what: "kl second operand",
        })?;
    let trace: f64 = x.iter().map(|v| v * v).sum();

    let d = q.mean() - p.mean();
    let y = chol_q
        .l_dirty()
        .solve_lower_triangular(&d)
        .ok_or(Error::NotPositiveDefinite {
            what: "kl second operand",
        })?;
    let quad: f64 = y.iter().map(|v| v * v).sum();

    Ok((0.5 * (log_det_q - log_det_p - n as f64 + trace + quad)).max(0.0))
}

/// Copies `corr` keeping only entries whose decision is `RejectNull`; every
/// other off-diagonal entry becomes zero. Requires a decision for every pair
/// `i < j`.
pub fn threshold_display(
    corr: &CorrelationMatrix,
    decisions: &[RopeDecision],
) -> Result<CorrelationMatrix> {
    let n = corr.n();
    let mut keep = DMatrix::from_element(n, n, false);
    let mut seen = DMatrix::from_element(n, n, false);
    for d in decisions {
        let (a, b) = d.entry;
        let (i, j) = if a <= b { (a, b) } else { (b, a) };
        if i == j || j >= n {
            return Err(Error::IndexOutOfRange {
                what: "rope decision entry",
                index: j,
                n,
            });
        }
        seen[(i, j)] = true;
        keep[(i, j)] = d.verdict == Verdict::RejectNull;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if !seen[(i, j)] {
                return Err(Error::MissingDecision { i, j });
            }
        }
    }
    let src = corr.as_matrix();
    let mut out = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if keep[(i, j)] {
                out[(i, j)] = src[(i, j)];
                out[(j, i)] = src[(j, i)];
            }
        }
    }
    CorrelationMatrix::new(out)
}
