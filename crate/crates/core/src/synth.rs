//! Synthetic ground truth and datasets.
//!
//! The benchmark covariance comes from a graph kernel: build the normalized
//! Laplacian `L = D^{-1/2} (D - A) D^{-1/2}` of the link-adjacency graph
//! (a chain plus a few extra edges), exponentiate `exp(beta L)` through the
//! symmetric eigendecomposition, normalize to a correlation matrix, and scale
//! by a variance parameter.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_traits::Float;

use crate::gaussian::{cov_to_corr, CorrelationMatrix, GaussianParams};
use crate::observation::{spans_for_range, Alignment, Observation};
use crate::rng::{Domain, StreamFamily};
use crate::{Error, Result};

/// Graph-kernel covariance description. Link indices are 0-based; the chain
/// edges `(j, j+1)` are implicit and `extra_edges` adds shortcuts.
///
/// `beta` sets the kernel bandwidth and its sign the orientation of the
/// dominant correlations (`exp(beta L)` is positive definite for any real
/// `beta`, so both signs are accepted). `sigma` scales the correlation matrix
/// into a covariance, so it is the common link variance.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub n_links: usize,
    pub extra_edges: Vec<(usize, usize)>,
    pub beta: f64,
    pub sigma: f64,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_links == 0 {
            return Err(Error::InvalidParameter {
                what: "n_links must be at least 1",
            });
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidParameter {
                what: "beta must be finite",
            });
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter {
                what: "sigma must be positive and finite",
            });
        }
        for &(i, j) in &self.extra_edges {
            let hi = i.max(j);
            if hi >= self.n_links {
                return Err(Error::IndexOutOfRange {
                    what: "extra edge endpoint",
                    index: hi,
                    n: self.n_links,
                });
            }
            if i == j {
                return Err(Error::InvalidParameter {
                    what: "extra edge endpoints must differ",
                });
            }
        }
        Ok(())
    }
}

/// The 18-link benchmark graph: a chain with shortcut edges 4-13, 5-12 and
/// 7-15 in 1-based labels, `beta = 3`, `sigma = 10`.
pub fn benchmark_spec() -> KernelSpec {
    KernelSpec {
        n_links: 18,
        extra_edges: alloc::vec![(3, 12), (4, 11), (6, 14)],
        beta: 3.0,
        sigma: 10.0,
    }
}

/// The benchmark mean travel times in seconds.
pub fn benchmark_mean() -> DVector<f64> {
    DVector::from_row_slice(&[
        14.0, 15.0, 18.0, 13.0, 17.0, 15.0, 10.0, 24.0, 15.0, 11.0, 12.0, 15.0, 9.0, 13.0, 17.0,
        15.0, 19.0, 21.0,
    ])
}

/// Correlation and covariance of the graph kernel.
///
/// Fails with [`Error::IsolatedVertex`] if any vertex has degree zero (the
/// normalized Laplacian is undefined there), which includes `n_links == 1`.
pub fn graph_kernel_covariance(spec: &KernelSpec) -> Result<(CorrelationMatrix, DMatrix<f64>)> {
    spec.validate()?;
    let n = spec.n_links;

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for j in 0..n.saturating_sub(1) {
        edges.insert((j, j + 1));
    }
    for &(i, j) in &spec.extra_edges {
        edges.insert((i.min(j), i.max(j)));
    }

    let mut adj = DMatrix::zeros(n, n);
    for &(i, j) in &edges {
        adj[(i, j)] = 1.0;
        adj[(j, i)] = 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| adj.row(i).sum()).collect();
    if let Some(i) = deg.iter().position(|&d| d == 0.0) {
        return Err(Error::IsolatedVertex { index: i });
    }

    // L = D^{-1/2} (D - A) D^{-1/2}: unit diagonal, -a_ij / sqrt(d_i d_j).
    let mut lap = DMatrix::identity(n, n);
    for &(i, j) in &edges {
        let v = -1.0 / Float::sqrt(deg[i] * deg[j]);
        lap[(i, j)] = v;
        lap[(j, i)] = v;
    }

    // exp(beta L) = Q diag(exp(beta lambda)) Q' = R R', R = Q diag(exp(beta lambda / 2)).
    let eigen = SymmetricEigen::new(lap);
    let mut r = eigen.eigenvectors;
    for (c, &lambda) in eigen.eigenvalues.iter().enumerate() {
        let s = Float::exp(spec.beta * lambda / 2.0);
        for i in 0..n {
            r[(i, c)] *= s;
        }
    }
    let kernel = &r * r.transpose();

    let corr = cov_to_corr(&kernel)?;
    let cov = corr.as_matrix() * spec.sigma;
    Ok((corr, cov))
}

/// How many observations of each shape to generate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteCount {
    pub route_id: String,
    /// Inclusive 0-based link range the route covers.
    pub coverage: (usize, usize),
    /// Skipped-stop boundaries inside the coverage (boundary `b` merges
    /// links `b` and `b+1`).
    pub skips: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetCounts {
    pub target_route_id: String,
    /// Complete observations of the target route.
    pub full: usize,
    /// Target-route observations with the `ragged_merges` boundaries merged.
    pub ragged: usize,
    pub ragged_merges: Vec<usize>,
    /// Partially overlapping routes.
    pub routes: Vec<RouteCount>,
}

/// The benchmark mix: 80 complete runs, 80 ragged runs merging links 5 and 6
/// (1-based), and 80 runs each from two routes covering links 1..12 and
/// 5..18.
pub fn benchmark_counts() -> DatasetCounts {
    DatasetCounts {
        target_route_id: String::from("route-1"),
        full: 80,
        ragged: 80,
        ragged_merges: alloc::vec![4],
        routes: alloc::vec![
            RouteCount {
                route_id: String::from("route-2"),
                coverage: (0, 11),
                skips: Vec::new(),
                count: 80,
            },
            RouteCount {
                route_id: String::from("route-3"),
                coverage: (4, 17),
                skips: Vec::new(),
                count: 80,
            },
        ],
    }
}

/// A generated dataset with its exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub observations: Vec<Observation>,
    pub truth: GaussianParams,
    pub truth_corr: CorrelationMatrix,
}

/// Draws complete travel-time vectors from the kernel truth and reduces each
/// to its observation via the alignment its group prescribes. Draw `k` uses
/// rng stream `(seed, Dataset, 0, k)`, so any prefix of the dataset is stable
/// under changes to later group counts.
pub fn generate_dataset(
    spec: &KernelSpec,
    mean: &DVector<f64>,
    counts: &DatasetCounts,
    seed: u64,
) -> Result<SyntheticDataset> {
    let n = spec.n_links;
    if mean.len() != n {
        return Err(Error::DimensionMismatch {
            what: "mean",
            expected: n,
            got: mean.len(),
        });
    }
    let (truth_corr, cov) = graph_kernel_covariance(spec)?;
    let truth = GaussianParams::new(mean.clone(), cov)?;

    let mut groups: Vec<(Alignment, String, usize)> = Vec::new();
    if counts.full > 0 {
        groups.push((
            Alignment::identity(n),
            counts.target_route_id.clone(),
            counts.full,
        ));
    }
    if counts.ragged > 0 {
        let skips: BTreeSet<usize> = counts.ragged_merges.iter().copied().collect();
        for &b in &skips {
            if b + 1 >= n {
                return Err(Error::SkipOutsideCoverage { boundary: b });
            }
        }
        let spans = spans_for_range(0, n - 1, &skips);
        let alignment = Alignment::from_spans(n, spans).map_err(|v| Error::InvalidObservation {
            summary: crate::observation::summarize_violations(&v),
        })?;
        groups.push((alignment, counts.target_route_id.clone(), counts.ragged));
    }
    for rc in &counts.routes {
        let (lo, hi) = rc.coverage;
        if lo > hi || hi >= n {
            return Err(Error::IndexOutOfRange {
                what: "route coverage range",
                index: hi,
                n,
            });
        }
        let skips: BTreeSet<usize> = rc.skips.iter().copied().collect();
        for &b in &skips {
            if !(b >= lo && b + 1 <= hi) {
                return Err(Error::SkipOutsideCoverage { boundary: b });
            }
        }
        let spans = spans_for_range(lo, hi, &skips);
        let alignment = Alignment::from_spans(n, spans).map_err(|v| Error::InvalidObservation {
            summary: crate::observation::summarize_violations(&v),
        })?;
        groups.push((alignment, rc.route_id.clone(), rc.count));
    }
    if groups.is_empty() {
        return Err(Error::Empty {
            what: "dataset counts",
        });
    }

    let chol = DMatrix::cholesky(truth.cov().clone()).ok_or(Error::NotPositiveDefinite {
        what: "truth covariance",
    })?;
    let factor = chol.unpack_dirty();
    let streams = StreamFamily::new(seed, Domain::Dataset, 0);

    let mut observations = Vec::new();
    let mut k: u64 = 0;
    for (alignment, route_id, count) in &groups {
        for _ in 0..*count {
            let mut rng = streams.stream(k);
            let x = crate::gaussian::sample_with_factor(truth.mean(), &factor, &mut rng);
            let r = alignment.apply(&x);
            let obs = Observation::new(
                r,
                alignment.clone(),
                route_id.clone(),
                format!("bus-{:04}", k),
                None,
            )
            .map_err(|v| Error::InvalidObservation {
                summary: crate::observation::summarize_violations(&v),
            })?;
            observations.push(obs);
            k += 1;
        }
    }

    Ok(SyntheticDataset {
        observations,
        truth,
        truth_corr,
    })
}
