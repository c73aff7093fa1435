//! Conditional-Gaussian forecasting from a posterior chain.
//!
//! Given observed links on a run in progress, the remaining links are
//! forecast from the Gaussian conditional. `Mixture` averages the conditional
//! over every posterior draw (the full posterior predictive, combined by the
//! law of total variance); `PlugIn` conditions once at the posterior-mean
//! parameters.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;
use num_traits::Float;

use crate::gaussian::{complement_indices, condition, sample_gaussian, GaussianParams};
use crate::gibbs::PosteriorChain;
use crate::rng::{Domain, StreamFamily};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictiveMode {
    /// Average the conditional over every chain draw.
    Mixture,
    /// Condition once at the posterior-mean parameters.
    PlugIn,
}

/// Per-link forecast: moments of the predictive and one sample per chain
/// draw, all restricted to `forecast_idx` (in that order).
#[derive(Debug, Clone, PartialEq)]
pub struct LinkForecast {
    pub forecast_idx: Vec<usize>,
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub samples: Vec<DVector<f64>>,
}

/// Scalar forecast of a whole-trip travel time.
#[derive(Debug, Clone, PartialEq)]
pub struct TripForecast {
    pub mean: f64,
    pub variance: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub rmse: f64,
    pub mape: f64,
}

fn check_index_set(what: &'static str, idx: &[usize], n: usize) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::Empty { what });
    }
    let mut seen = vec![false; n];
    for &i in idx {
        if i >= n {
            return Err(Error::IndexOutOfRange { what, index: i, n });
        }
        if seen[i] {
            return Err(Error::DuplicateIndex { what, index: i });
        }
        seen[i] = true;
    }
    Ok(())
}

fn validate_forecast_inputs(
    n: usize,
    observed_idx: &[usize],
    observed_vals: &DVector<f64>,
    forecast_idx: &[usize],
) -> Result<()> {
    check_index_set("observed indices", observed_idx, n)?;
    check_index_set("forecast indices", forecast_idx, n)?;
    if observed_vals.len() != observed_idx.len() {
        return Err(Error::DimensionMismatch {
            what: "observed values",
            expected: observed_idx.len(),
            got: observed_vals.len(),
        });
    }
    for &f in forecast_idx {
        if observed_idx.contains(&f) {
            return Err(Error::DuplicateIndex {
                what: "forecast index also observed",
                index: f,
            });
        }
    }
    Ok(())
}

/// Positions of `targets` inside the conditional (complement) index list.
fn complement_positions(n: usize, observed_idx: &[usize], targets: &[usize]) -> Vec<usize> {
    let complement = complement_indices(n, observed_idx);
    targets
        .iter()
        .map(|t| {
            complement
                .iter()
                .position(|c| c == t)
                .expect("target is unobserved, hence in the complement")
        })
        .collect()
}

/// Forecasts `forecast_idx` given observed links, in `Mixture` mode.
pub fn forecast_links(
    chain: &PosteriorChain,
    observed_idx: &[usize],
    observed_vals: &DVector<f64>,
    forecast_idx: &[usize],
    seed: u64,
) -> Result<LinkForecast> {
    forecast_links_with_mode(
        chain,
        observed_idx,
        observed_vals,
        forecast_idx,
        seed,
        PredictiveMode::Mixture,
    )
}

/// Forecasts `forecast_idx` given observed links.
///
/// Mixture moments combine the per-draw conditionals by the law of total
/// variance: the predictive mean is the average conditional mean, the
/// predictive variance the average conditional variance plus the population
/// variance of the conditional means. One predictive sample is drawn per
/// chain draw from rng stream `(seed, Forecast, 0, k)`.
pub fn forecast_links_with_mode(
    chain: &PosteriorChain,
    observed_idx: &[usize],
    observed_vals: &DVector<f64>,
    forecast_idx: &[usize],
    seed: u64,
    mode: PredictiveMode,
) -> Result<LinkForecast> {
    let n = chain.n();
    validate_forecast_inputs(n, observed_idx, observed_vals, forecast_idx)?;
    let pos = complement_positions(n, observed_idx, forecast_idx);
    let streams = StreamFamily::new(seed, Domain::Forecast, 0);
    let f = forecast_idx.len();
    let k_total = chain.len();

    let mut mean_acc = DVector::zeros(f);
    let mut var_acc = DVector::zeros(f);
    let mut cond_means: Vec<DVector<f64>> = Vec::with_capacity(k_total);
    let mut samples: Vec<DVector<f64>> = Vec::with_capacity(k_total);

    let mut push_draw = |cond: &GaussianParams, k: usize| -> Result<()> {
        let cm = DVector::from_fn(f, |a, _| cond.mean()[pos[a]]);
        let cv = DVector::from_fn(f, |a, _| cond.cov()[(pos[a], pos[a])]);
        let full = sample_gaussian(cond, &mut streams.stream(k as u64))?;
        samples.push(DVector::from_fn(f, |a, _| full[pos[a]]));
        mean_acc += &cm;
        var_acc += &cv;
        cond_means.push(cm);
        Ok(())
    };

    match mode {
        PredictiveMode::Mixture => {
            for k in 0..k_total {
                let params = GaussianParams::new(
                    chain.mean_samples()[k].clone(),
                    chain.cov_samples()[k].clone(),
                )?;
                let cond = condition(&params, observed_idx, observed_vals)?;
                push_draw(&cond, k)?;
            }
        }
        PredictiveMode::PlugIn => {
            let params = chain.posterior_mean_params()?;
            let cond = condition(&params, observed_idx, observed_vals)?;
            for k in 0..k_total {
                push_draw(&cond, k)?;
            }
        }
    }

    let kf = k_total as f64;
    let mean = &mean_acc / kf;
    let mut variance = &var_acc / kf;
    for cm in &cond_means {
        let d = cm - &mean;
        for a in 0..f {
            variance[a] += d[a] * d[a] / kf;
        }
    }

    Ok(LinkForecast {
        forecast_idx: forecast_idx.to_vec(),
        mean,
        variance,
        samples,
    })
}

/// Forecasts the total travel time over `trip_links`.
///
/// Observed links contribute their recorded values as constants; unobserved
/// links contribute through the conditional, with variance `1' Sigma_c 1`
/// over the unobserved block. A trip with every link observed has variance
/// zero. Samples use rng stream `(seed, Forecast, 1, k)`.
pub fn forecast_trip(
    chain: &PosteriorChain,
    observed_idx: &[usize],
    observed_vals: &DVector<f64>,
    trip_links: &[usize],
    seed: u64,
    mode: PredictiveMode,
) -> Result<TripForecast> {
    let n = chain.n();
    check_index_set("observed indices", observed_idx, n)?;
    check_index_set("trip links", trip_links, n)?;
    if observed_vals.len() != observed_idx.len() {
        return Err(Error::DimensionMismatch {
            what: "observed values",
            expected: observed_idx.len(),
            got: observed_vals.len(),
        });
    }

    let observed_part: f64 = trip_links
        .iter()
        .filter_map(|t| {
            observed_idx
                .iter()
                .position(|o| o == t)
                .map(|p| observed_vals[p])
        })
        .sum();
    let open_links: Vec<usize> = trip_links
        .iter()
        .copied()
        .filter(|t| !observed_idx.contains(t))
        .collect();

    let k_total = chain.len();
    if open_links.is_empty() {
        return Ok(TripForecast {
            mean: observed_part,
            variance: 0.0,
            samples: vec![observed_part; k_total],
        });
    }

    let pos = complement_positions(n, observed_idx, &open_links);
    let streams = StreamFamily::new(seed, Domain::Forecast, 1);

    let mut means = Vec::with_capacity(k_total);
    let mut vars = Vec::with_capacity(k_total);
    let mut samples = Vec::with_capacity(k_total);

    let mut push_draw = |cond: &GaussianParams, k: usize| -> Result<()> {
        let m: f64 = pos.iter().map(|&p| cond.mean()[p]).sum();
        let mut v = 0.0;
        for &pa in &pos {
            for &pb in &pos {
                v += cond.cov()[(pa, pb)];
            }
        }
        let full = sample_gaussian(cond, &mut streams.stream(k as u64))?;
        let s: f64 = pos.iter().map(|&p| full[p]).sum();
        means.push(observed_part + m);
        vars.push(v);
        samples.push(observed_part + s);
        Ok(())
    };

    match mode {
        PredictiveMode::Mixture => {
            for k in 0..k_total {
                let params = GaussianParams::new(
                    chain.mean_samples()[k].clone(),
                    chain.cov_samples()[k].clone(),
                )?;
                let cond = condition(&params, observed_idx, observed_vals)?;
                push_draw(&cond, k)?;
            }
        }
        PredictiveMode::PlugIn => {
            let params = chain.posterior_mean_params()?;
            let cond = condition(&params, observed_idx, observed_vals)?;
            for k in 0..k_total {
                push_draw(&cond, k)?;
            }
        }
    }

    let kf = k_total as f64;
    let mean = means.iter().sum::<f64>() / kf;
    let mut variance = vars.iter().sum::<f64>() / kf;
    for m in &means {
        variance += (m - mean) * (m - mean) / kf;
    }

    Ok(TripForecast {
        mean,
        variance,
        samples,
    })
}

/// How much conditioning moved the forecast links away from the marginal
/// posterior mean: predictive mean minus averaged chain mean, restricted to
/// `forecast_idx`. Needs no rng; uses mixture moments.
pub fn mean_correction(
    chain: &PosteriorChain,
    observed_idx: &[usize],
    observed_vals: &DVector<f64>,
    forecast_idx: &[usize],
) -> Result<DVector<f64>> {
    let n = chain.n();
    validate_forecast_inputs(n, observed_idx, observed_vals, forecast_idx)?;
    let pos = complement_positions(n, observed_idx, forecast_idx);
    let f = forecast_idx.len();
    let mut pred = DVector::zeros(f);
    for k in 0..chain.len() {
        let params = GaussianParams::new(
            chain.mean_samples()[k].clone(),
            chain.cov_samples()[k].clone(),
        )?;
        let cond = condition(&params, observed_idx, observed_vals)?;
        for a in 0..f {
            pred[a] += cond.mean()[pos[a]];
        }
    }
    pred /= chain.len() as f64;

    let mut marginal = DVector::zeros(f);
    for m in chain.mean_samples() {
        for a in 0..f {
            marginal[a] += m[forecast_idx[a]];
        }
    }
    marginal /= chain.len() as f64;
    Ok(pred - marginal)
}

/// Baseline: the training-set mean restricted to `forecast_idx`.
pub fn historical_average(train: &[DVector<f64>], forecast_idx: &[usize]) -> Result<DVector<f64>> {
    if train.is_empty() {
        return Err(Error::Empty {
            what: "training vectors",
        });
    }
    let n = train[0].len();
    for x in train {
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                what: "training vector",
                expected: n,
                got: x.len(),
            });
        }
    }
    check_index_set("forecast indices", forecast_idx, n)?;
    let mut mean = DVector::zeros(n);
    for x in train {
        mean += x;
    }
    mean /= train.len() as f64;
    Ok(DVector::from_fn(forecast_idx.len(), |a, _| {
        mean[forecast_idx[a]]
    }))
}

struct ScoreAccum {
    sq: f64,
    ape: f64,
    total: usize,
    kept: usize,
    excluded: Vec<usize>,
}

fn accumulate_scores(y_true: &[DVector<f64>], y_pred: &[DVector<f64>]) -> Result<ScoreAccum> {
    if y_true.is_empty() {
        return Err(Error::Empty { what: "score rows" });
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            what: "score rows",
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let mut acc = ScoreAccum {
        sq: 0.0,
        ape: 0.0,
        total: 0,
        kept: 0,
        excluded: Vec::new(),
    };
    for (row, (yt, yp)) in y_true.iter().zip(y_pred).enumerate() {
        if yt.len() != yp.len() {
            return Err(Error::DimensionMismatch {
                what: "score row",
                expected: yt.len(),
                got: yp.len(),
            }
            .at_iteration(row));
        }
        for (t, p) in yt.iter().zip(yp.iter()) {
            let e = p - t;
            acc.sq += e * e;
            if t.abs() < 1e-9 {
                acc.excluded.push(acc.total);
            } else {
                acc.ape += (e / t).abs();
                acc.kept += 1;
            }
            acc.total += 1;
        }
    }
    if acc.total == 0 {
        return Err(Error::Empty {
            what: "score entries",
        });
    }
    Ok(acc)
}

/// RMSE over every entry and MAPE over entries with `|truth| >= 1e-9`.
/// Fails with [`Error::ZeroTrueValue`] if any entry falls below that floor
/// (use [`score_lenient`] to exclude them instead).
pub fn score(y_true: &[DVector<f64>], y_pred: &[DVector<f64>]) -> Result<Scores> {
    let acc = accumulate_scores(y_true, y_pred)?;
    if !acc.excluded.is_empty() {
        return Err(Error::ZeroTrueValue {
            indices: acc.excluded,
        });
    }
    Ok(Scores {
        rmse: Float::sqrt(acc.sq / acc.total as f64),
        mape: acc.ape / acc.kept as f64,
    })
}

/// Like [`score`] but excludes near-zero truth entries from the MAPE,
/// returning their flat indices (entry counter in iteration order). RMSE
/// still covers every entry.
pub fn score_lenient(
    y_true: &[DVector<f64>],
    y_pred: &[DVector<f64>],
) -> Result<(Scores, Vec<usize>)> {
    let acc = accumulate_scores(y_true, y_pred)?;
    if acc.kept == 0 {
        return Err(Error::Empty {
            what: "mape entries",
        });
    }
    Ok((
        Scores {
            rmse: Float::sqrt(acc.sq / acc.total as f64),
            mape: acc.ape / acc.kept as f64,
        },
        acc.excluded,
    ))
}
