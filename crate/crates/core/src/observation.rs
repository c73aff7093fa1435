//! Incomplete bus-run observations.
//!
//! A run over a route with `n` target links records `r = G x`, where `G` is a
//! binary alignment matrix: each row sums one or more *consecutive* links
//! (a multi-link row is a ragged value from a skipped stop), row supports are
//! disjoint, and links absent from every row are missing. Those properties
//! make `G` full row rank, which the hyperplane sampler relies on.
//!
//! All link indices here are 0-based; file formats and CLI flags use 1-based
//! indices and translate at the boundary.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// One alignment row: the consecutive links `start .. start + len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn new(start: usize, len: usize) -> Self {
        Span { start, len }
    }

    /// One past the last covered link.
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn contains(&self, link: usize) -> bool {
        (self.start..self.end()).contains(&link)
    }
}

/// A violation of the observation invariants, reported by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyRow { row: usize },
    ColumnOutOfRange { row: usize, column: usize },
    DuplicateColumn { row: usize, column: usize },
    NonConsecutiveRow { row: usize, gap_after: usize },
    OverlappingSupport { row_a: usize, row_b: usize, column: usize },
    RecordingLength { expected: usize, got: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyRow { row } => write!(f, "empty row {row}"),
            Violation::ColumnOutOfRange { row, column } => {
                write!(f, "row {row}: link index {column} out of range")
            }
            Violation::DuplicateColumn { row, column } => {
                write!(f, "row {row}: duplicate link index {column}")
            }
            Violation::NonConsecutiveRow { row, gap_after } => {
                write!(f, "row {row}: non-consecutive links (gap after {gap_after})")
            }
            Violation::OverlappingSupport { row_a, row_b, column } => {
                write!(f, "overlapping support: rows {row_a} and {row_b} share link {column}")
            }
            Violation::RecordingLength { expected, got } => {
                write!(f, "recording length {got} does not match {expected} rows")
            }
        }
    }
}

/// Checks the alignment invariants for rows given as lists of one-positions,
/// plus the recording length. Returns every violation found.
pub fn validate(n: usize, rows: &[Vec<usize>], recording_len: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (ri, row) in rows.iter().enumerate() {
        if row.is_empty() {
            out.push(Violation::EmptyRow { row: ri });
            continue;
        }
        let mut cols = row.clone();
        cols.sort_unstable();
        let mut last: Option<usize> = None;
        for &c in &cols {
            if c >= n {
                out.push(Violation::ColumnOutOfRange { row: ri, column: c });
                continue;
            }
            if last == Some(c) {
                out.push(Violation::DuplicateColumn { row: ri, column: c });
                continue;
            }
            if let Some(prev) = last {
                if prev + 1 != c {
                    out.push(Violation::NonConsecutiveRow { row: ri, gap_after: prev });
                }
            }
            last = Some(c);
            if let Some(prev_row) = owner[c] {
                out.push(Violation::OverlappingSupport {
                    row_a: prev_row,
                    row_b: ri,
                    column: c,
                });
            } else {
                owner[c] = Some(ri);
            }
        }
    }
    if rows.len() != recording_len {
        out.push(Violation::RecordingLength {
            expected: rows.len(),
            got: recording_len,
        });
    }
    out
}

/// A validated alignment matrix in span form: one [`Span`] per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    n: usize,
    spans: Vec<Span>,
}

impl Alignment {
    /// The n-by-n identity alignment of a complete observation.
    pub fn identity(n: usize) -> Self {
        Alignment {
            n,
            spans: (0..n).map(|j| Span::new(j, 1)).collect(),
        }
    }

    /// Builds from explicit spans, checking all invariants.
    pub fn from_spans(n: usize, spans: Vec<Span>) -> core::result::Result<Self, Vec<Violation>> {
        let rows: Vec<Vec<usize>> = spans.iter().map(|s| (s.start..s.end()).collect()).collect();
        Self::from_rows(n, &rows)
    }

    /// Builds from rows given as lists of one-positions.
    pub fn from_rows(n: usize, rows: &[Vec<usize>]) -> core::result::Result<Self, Vec<Violation>> {
        let violations = validate(n, rows, rows.len());
        if !violations.is_empty() {
            return Err(violations);
        }
        let spans = rows
            .iter()
            .map(|row| {
                let start = *row.iter().min().expect("validated non-empty");
                Span::new(start, row.len())
            })
            .collect();
        Ok(Alignment { n, spans })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_rows(&self) -> usize {
        self.spans.len()
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn is_identity(&self) -> bool {
        self.spans.len() == self.n
            && self
                .spans
                .iter()
                .enumerate()
                .all(|(j, s)| s.start == j && s.len == 1)
    }

    /// Links covered by any row, ascending.
    pub fn covered_links(&self) -> Vec<usize> {
        let mut links: Vec<usize> = self
            .spans
            .iter()
            .flat_map(|s| s.start..s.end())
            .collect();
        links.sort_unstable();
        links
    }

    /// `G x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.spans.len(),
            self.spans
                .iter()
                .map(|s| (s.start..s.end()).map(|j| x[j]).sum()),
        )
    }

    /// `G' a`.
    pub fn apply_transpose(&self, a: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (ri, s) in self.spans.iter().enumerate() {
            for j in s.start..s.end() {
                out[j] = a[ri];
            }
        }
        out
    }

    /// Dense 0/1 matrix form, mainly for tests and oracles.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.spans.len(), self.n);
        for (ri, s) in self.spans.iter().enumerate() {
            for j in s.start..s.end() {
                g[(ri, j)] = 1.0;
            }
        }
        g
    }
}

/// One bus run: a recording vector with its alignment and identifiers.
/// `start_time` is epoch seconds when known.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    recording: DVector<f64>,
    alignment: Alignment,
    route_id: String,
    bus_id: String,
    start_time: Option<i64>,
}

impl Observation {
    pub fn new(
        recording: DVector<f64>,
        alignment: Alignment,
        route_id: String,
        bus_id: String,
        start_time: Option<i64>,
    ) -> core::result::Result<Self, Vec<Violation>> {
        if recording.len() != alignment.n_rows() {
            return Err(vec![Violation::RecordingLength {
                expected: alignment.n_rows(),
                got: recording.len(),
            }]);
        }
        Ok(Observation {
            recording,
            alignment,
            route_id,
            bus_id,
            start_time,
        })
    }

    pub fn recording(&self) -> &DVector<f64> {
        &self.recording
    }

    pub fn alignment(&self) -> &Alignment {
        &self.alignment
    }

    pub fn route_id(&self) -> &str {
        &self.route_id
    }

    pub fn bus_id(&self) -> &str {
        &self.bus_id
    }

    pub fn start_time(&self) -> Option<i64> {
        self.start_time
    }

    pub fn n(&self) -> usize {
        self.alignment.n()
    }

    /// `max |G x - r|` for a candidate complete vector.
    pub fn constraint_residual(&self, x: &DVector<f64>) -> f64 {
        let gx = self.alignment.apply(x);
        (gx - &self.recording)
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

/// Per-route coverage of the target links: inclusive 0-based index ranges,
/// ascending and non-overlapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutePattern {
    pub route_id: String,
    pub coverage: Vec<(usize, usize)>,
}

/// Target-route link list plus the coverage patterns of every contributing
/// route.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteGeometry {
    target_links: Vec<String>,
    patterns: Vec<RoutePattern>,
}

impl RouteGeometry {
    pub fn new(target_links: Vec<String>, patterns: Vec<RoutePattern>) -> Result<Self> {
        let n = target_links.len();
        for p in &patterns {
            let mut prev_end: Option<usize> = None;
            for &(a, b) in &p.coverage {
                if a > b || b >= n {
                    return Err(Error::IndexOutOfRange {
                        what: "route coverage range",
                        index: b,
                        n,
                    });
                }
                if let Some(pe) = prev_end {
                    if a <= pe {
                        return Err(Error::InvalidParameter {
                            what: "route coverage ranges must be ascending and disjoint",
                        });
                    }
                }
                prev_end = Some(b);
            }
        }
        Ok(RouteGeometry {
            target_links,
            patterns,
        })
    }

    pub fn n(&self) -> usize {
        self.target_links.len()
    }

    pub fn target_links(&self) -> &[String] {
        &self.target_links
    }

    pub fn patterns(&self) -> &[RoutePattern] {
        &self.patterns
    }
}

/// Rows covering `lo..=hi` with the given skipped boundaries merged. Boundary
/// `b` merges links `b` and `b+1`; every boundary must lie inside the range.
pub(crate) fn spans_for_range(lo: usize, hi: usize, skips: &BTreeSet<usize>) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut start = lo;
    for j in lo..=hi {
        if j < hi && skips.contains(&j) {
            continue; // merge j with j + 1
        }
        spans.push(Span::new(start, j - start + 1));
        start = j + 1;
    }
    spans
}

/// Builds the alignment for `route_id` with the given skipped stops.
///
/// A skipped stop is identified by the 0-based boundary it removes: boundary
/// `b` merges links `b` and `b+1` into one ragged row. Uncovered links appear
/// in no row; rows come out ordered by leading link index.
pub fn build_alignment(
    geometry: &RouteGeometry,
    route_id: &str,
    skipped_stops: &BTreeSet<usize>,
) -> Result<Alignment> {
    let pattern = geometry
        .patterns
        .iter()
        .find(|p| p.route_id == route_id)
        .ok_or_else(|| Error::UnknownRoute {
            route: String::from(route_id),
        })?;
    if pattern.coverage.is_empty() {
        return Err(Error::Empty {
            what: "route coverage",
        });
    }
    for &b in skipped_stops {
        let inside = pattern.coverage.iter().any(|&(lo, hi)| b >= lo && b + 1 <= hi);
        if !inside {
            return Err(Error::SkipOutsideCoverage { boundary: b });
        }
    }
    let mut spans = Vec::new();
    for &(lo, hi) in &pattern.coverage {
        spans.extend(spans_for_range(lo, hi, skipped_stops));
    }
    Alignment::from_spans(geometry.n(), spans).map_err(|v| Error::InvalidObservation {
        summary: summarize_violations(&v),
    })
}

pub(crate) fn summarize_violations(violations: &[Violation]) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    for (k, v) in violations.iter().enumerate() {
        if k > 0 {
            let _ = write!(s, "; ");
        }
        let _ = write!(s, "{v}");
    }
    s
}

/// A complete vector satisfying `G x = r` exactly: singleton rows take their
/// recorded value, ragged sums split proportionally to `fallback_mean` over
/// the span (uniformly if the span sums to <= 0), unobserved links take the
/// fallback entries.
pub fn least_norm_fill(observation: &Observation, fallback_mean: &DVector<f64>) -> Result<DVector<f64>> {
    let n = observation.n();
    if fallback_mean.len() != n {
        return Err(Error::DimensionMismatch {
            what: "fallback mean",
            expected: n,
            got: fallback_mean.len(),
        });
    }
    let mut x = fallback_mean.clone();
    for (ri, s) in observation.alignment().spans().iter().enumerate() {
        let r = observation.recording()[ri];
        if s.len == 1 {
            x[s.start] = r;
            continue;
        }
        let span_sum: f64 = (s.start..s.end()).map(|j| fallback_mean[j]).sum();
        if span_sum > 0.0 {
            for j in s.start..s.end() {
                x[j] = r * fallback_mean[j] / span_sum;
            }
        } else {
            let share = r / s.len as f64;
            for j in s.start..s.end() {
                x[j] = share;
            }
        }
    }
    Ok(x)
}
