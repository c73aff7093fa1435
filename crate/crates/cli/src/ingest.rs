//! AVL in-out-stop event ingestion: parse the raw CSV feed, difference
//! arrival timestamps into link travel times, and assemble per-period
//! observations with missing links and ragged spans detected from the
//! route geometry.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::{NaiveDateTime, NaiveTime, Timelike};
use linktime_core::nalgebra::DVector;
use linktime_core::observation::{Alignment, Observation};
use serde::Serialize;

use crate::formats::{GeometryJson, PeriodJson};

/// One row of the in-out-stop feed. Arrivals (`ad_flag == 1`) carry the
/// information; departures are kept for completeness but ignored when
/// differencing, since arrival-to-arrival spans already include the
/// upstream dwell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopEvent {
    pub record_id: String,
    pub bus_id: String,
    pub trip_id: String,
    pub route_id: String,
    pub direction_id: String,
    pub stop_id: String,
    /// 1 = arrival, 0 = departure.
    pub ad_flag: u8,
    pub ad_time: NaiveDateTime,
}

#[derive(Debug, Clone, Serialize)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug)]
pub struct ParseReport {
    /// Valid events sorted by (trip_id, ad_time).
    pub events: Vec<StopEvent>,
    pub rejects: Vec<RejectedRow>,
}

const MANDATORY: [&str; 8] = [
    "ID",
    "OBUID",
    "TRIP_ID",
    "ROUTE_ID",
    "ROUTESUB_ID",
    "ROUTE_STA_ID",
    "AD_FLAG",
    "AD_TIME",
];

/// Accepted timestamp shapes: the feed's `YYYYMMDD, HH:MM:SS` (comma or
/// space separated) and ISO-8601 with a space or `T`.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in [
        "%Y%m%d, %H:%M:%S",
        "%Y%m%d %H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    None
}

/// Parses the Table-3 CSV. Malformed rows land in the rejects report;
/// only an unreadable file or a missing mandatory column is fatal.
pub fn parse_events(path: &Path) -> Result<ParseReport> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("open {}", path.display()))?;

    let headers: Vec<String> = reader
        .headers()
        .context("read header row")?
        .iter()
        .map(|h| h.trim().to_ascii_uppercase())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = BTreeMap::new();
    for name in MANDATORY {
        match col(name) {
            Some(i) => {
                idx.insert(name, i);
            }
            None => bail!("{}: missing mandatory column {name}", path.display()),
        }
    }
    let n_cols = headers.len();
    let ad_time_idx = idx["AD_TIME"];

    let mut events = Vec::new();
    let mut rejects = Vec::new();
    for (rec_no, record) in reader.records().enumerate() {
        let line = rec_no + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejects.push(RejectedRow {
                    line,
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        let mut fields: Vec<String> = record.iter().map(|f| f.trim().to_string()).collect();
        // An unquoted `YYYYMMDD, HH:MM:SS` timestamp in the last column
        // splits into two fields; stitch it back together.
        if fields.len() == n_cols + 1 && ad_time_idx == n_cols - 1 {
            let tail = fields.pop().expect("checked length");
            let head = fields.pop().expect("checked length");
            fields.push(format!("{head}, {tail}"));
        }
        if fields.len() != n_cols {
            rejects.push(RejectedRow {
                line,
                reason: format!("expected {n_cols} columns, got {}", fields.len()),
            });
            continue;
        }

        let get = |name: &str| fields[idx[name]].clone();
        let ad_flag = match get("AD_FLAG").as_str() {
            "1" => 1,
            "0" => 0,
            other => {
                rejects.push(RejectedRow {
                    line,
                    reason: format!("invalid ad_flag {other:?}"),
                });
                continue;
            }
        };
        let ad_time = match parse_timestamp(&get("AD_TIME")) {
            Some(t) => t,
            None => {
                rejects.push(RejectedRow {
                    line,
                    reason: format!("unparseable ad_time {:?}", get("AD_TIME")),
                });
                continue;
            }
        };
        let event = StopEvent {
            record_id: get("ID"),
            bus_id: get("OBUID"),
            trip_id: get("TRIP_ID"),
            route_id: get("ROUTE_ID"),
            direction_id: get("ROUTESUB_ID"),
            stop_id: get("ROUTE_STA_ID"),
            ad_flag,
            ad_time,
        };
        if event.record_id.is_empty()
            || event.bus_id.is_empty()
            || event.trip_id.is_empty()
            || event.route_id.is_empty()
            || event.stop_id.is_empty()
        {
            rejects.push(RejectedRow {
                line,
                reason: "empty identifier".to_string(),
            });
            continue;
        }
        events.push(event);
    }
    events.sort_by(|a, b| (&a.trip_id, a.ad_time).cmp(&(&b.trip_id, b.ad_time)));
    Ok(ParseReport { events, rejects })
}

// ---------------------------------------------------------------- periods

/// Named time-of-day interval `[start, end)`; wraps past midnight when
/// `end <= start`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Period {
    pub name: String,
    pub start: NaiveTime,
    pub end: NaiveTime,
}

/// A set of named intervals that partition the 24-hour clock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodSpec {
    periods: Vec<Period>,
}

const DAY: u32 = 86_400;

fn second_of_day(t: NaiveTime) -> u32 {
    t.num_seconds_from_midnight()
}

impl PeriodSpec {
    pub fn new(periods: Vec<Period>) -> Result<Self> {
        if periods.is_empty() {
            bail!("at least one period is required");
        }
        let mut names = std::collections::BTreeSet::new();
        for p in &periods {
            if !names.insert(&p.name) {
                bail!("duplicate period name {:?}", p.name);
            }
        }
        // Each interval covers one or two [lo, hi) second ranges; together
        // they must tile [0, 86400) exactly.
        let mut segments: Vec<(u32, u32)> = Vec::new();
        for p in &periods {
            let s = second_of_day(p.start);
            let e = second_of_day(p.end);
            if s == e {
                bail!("period {:?} is empty", p.name);
            }
            if s < e {
                segments.push((s, e));
            } else {
                segments.push((s, DAY));
                if e > 0 {
                    segments.push((0, e));
                }
            }
        }
        segments.sort_unstable();
        let mut cursor = 0u32;
        for (lo, hi) in &segments {
            if *lo != cursor {
                if *lo > cursor {
                    bail!("periods leave {}..{} seconds of the day uncovered", cursor, lo);
                }
                bail!("periods overlap at second {lo}");
            }
            cursor = *hi;
        }
        if cursor != DAY {
            bail!("periods leave {}..{} seconds of the day uncovered", cursor, DAY);
        }
        Ok(PeriodSpec { periods })
    }

    /// Morning 07-10, normal 10-17, afternoon 17-20, night 20-07.
    pub fn default_four() -> Self {
        let t = |h| NaiveTime::from_hms_opt(h, 0, 0).expect("valid hour");
        PeriodSpec::new(vec![
            Period { name: "morning".into(), start: t(7), end: t(10) },
            Period { name: "normal".into(), start: t(10), end: t(17) },
            Period { name: "afternoon".into(), start: t(17), end: t(20) },
            Period { name: "night".into(), start: t(20), end: t(7) },
        ])
        .expect("default periods partition the day")
    }

    pub fn from_json(periods: &[PeriodJson]) -> Result<Self> {
        let parse = |s: &str| -> Result<NaiveTime> {
            NaiveTime::parse_from_str(s, "%H:%M:%S")
                .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M"))
                .with_context(|| format!("bad time of day {s:?}"))
        };
        let mut out = Vec::with_capacity(periods.len());
        for p in periods {
            out.push(Period {
                name: p.name.clone(),
                start: parse(&p.start)?,
                end: parse(&p.end)?,
            });
        }
        PeriodSpec::new(out)
    }

    pub fn names(&self) -> Vec<&str> {
        self.periods.iter().map(|p| p.name.as_str()).collect()
    }

    /// The unique period containing this time of day.
    pub fn assign(&self, t: NaiveTime) -> &str {
        let s = second_of_day(t);
        for p in &self.periods {
            let lo = second_of_day(p.start);
            let hi = second_of_day(p.end);
            let inside = if lo < hi { s >= lo && s < hi } else { s >= lo || s < hi };
            if inside {
                return &p.name;
            }
        }
        unreachable!("periods partition the clock");
    }
}

// ------------------------------------------------- events to observations

#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestSummary {
    /// Observations kept, per period.
    pub per_period: BTreeMap<String, usize>,
    /// Dropped trips by reason.
    pub dropped_trips: BTreeMap<String, usize>,
    /// Trip segments skipped without dropping the trip, by reason.
    pub skipped_segments: BTreeMap<String, usize>,
}

fn bump(map: &mut BTreeMap<String, usize>, key: &str) {
    *map.entry(key.to_string()).or_insert(0) += 1;
}

/// Turns arrival events into per-period observations.
///
/// Per trip, the arrivals are placed on the route's stop sequence; each
/// consecutive observed pair yields one value, the arrival-to-arrival
/// difference. A pair separated by skipped stops becomes a ragged row over
/// the merged links. Segments touching an uncovered (null) stop pair are
/// dropped silently into the summary; trips are dropped whole on
/// out-of-order stops, negative differences (non-monotone clocks), a ragged
/// row wider than `max_ragged_span`, or when nothing covered remains.
pub fn events_to_observations(
    events: &[StopEvent],
    geometry: &GeometryJson,
    periods: &PeriodSpec,
    max_ragged_span: usize,
) -> Result<(BTreeMap<String, Vec<Observation>>, IngestSummary)> {
    geometry.validate().context("invalid geometry")?;
    if max_ragged_span == 0 {
        bail!("max_ragged_span must be at least 1");
    }
    let n = geometry.n_links;
    let mut summary = IngestSummary::default();
    let mut out: BTreeMap<String, Vec<Observation>> = BTreeMap::new();

    // Group arrivals by trip; BTreeMap fixes the processing order.
    let mut trips: BTreeMap<&str, Vec<&StopEvent>> = BTreeMap::new();
    for e in events {
        if e.ad_flag == 1 {
            trips.entry(&e.trip_id).or_default().push(e);
        }
    }

    'trip: for (trip_id, trip_events) in trips {
        let route_id = &trip_events[0].route_id;
        if trip_events.iter().any(|e| &e.route_id != route_id) {
            bump(&mut summary.dropped_trips, "mixed route ids");
            continue;
        }
        let route = match geometry.routes.get(route_id.as_str()) {
            Some(r) => r,
            None => bail!("trip {trip_id}: route {route_id} is not in the geometry"),
        };

        // Place each arrival on the stop sequence, keeping the first
        // arrival per stop.
        let mut arrivals: Vec<(usize, NaiveDateTime)> = Vec::new();
        for e in &trip_events {
            let pos = match route.stops.iter().position(|s| s == &e.stop_id) {
                Some(p) => p,
                None => bail!(
                    "trip {trip_id}: stop {} is not on route {route_id}",
                    e.stop_id
                ),
            };
            if !arrivals.iter().any(|(p, _)| *p == pos) {
                arrivals.push((pos, e.ad_time));
            }
        }
        if arrivals.len() < 2 {
            bump(&mut summary.dropped_trips, "fewer than two stops");
            continue;
        }
        // The route's stop order is ground truth; timestamps are
        // measurements. Any arrival at a later stop with an earlier clock
        // reading surfaces below as a negative difference.
        arrivals.sort_by_key(|(p, _)| *p);

        let mut rows: Vec<Vec<usize>> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut first_entry: Option<NaiveDateTime> = None;
        for w in arrivals.windows(2) {
            let (pa, ta) = w[0];
            let (pb, tb) = w[1];
            let dt = (tb - ta).num_seconds();
            if dt < 0 {
                bump(&mut summary.dropped_trips, "non-monotone timestamps");
                continue 'trip;
            }
            // Stop pairs pa..pb traversed in one go; all must map to
            // covered links for the value to be attributable.
            let pair_links: Vec<Option<usize>> = (pa..pb).map(|i| route.links[i]).collect();
            if pair_links.iter().any(|l| l.is_none()) {
                bump(&mut summary.skipped_segments, "uncovered stop pair");
                continue;
            }
            let row: Vec<usize> = pair_links.into_iter().map(|l| l.unwrap() - 1).collect();
            if row.windows(2).any(|r| r[1] != r[0] + 1) {
                bump(&mut summary.skipped_segments, "merge across a corridor gap");
                continue;
            }
            if row.len() > max_ragged_span {
                bump(&mut summary.dropped_trips, "ragged span too wide");
                continue 'trip;
            }
            first_entry.get_or_insert(ta);
            rows.push(row);
            values.push(dt as f64);
        }
        let Some(t0) = first_entry else {
            bump(&mut summary.dropped_trips, "no covered links");
            continue;
        };

        let alignment = match Alignment::from_rows(n, &rows) {
            Ok(a) => a,
            Err(violations) => bail!(
                "trip {trip_id}: constructed alignment is invalid: {}",
                violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            ),
        };
        let obs = Observation::new(
            DVector::from_vec(values),
            alignment,
            route_id.clone(),
            trip_events[0].bus_id.clone(),
            Some(t0.and_utc().timestamp()),
        )
        .map_err(|violations| {
            anyhow::anyhow!(
                "trip {trip_id}: invalid observation: {}",
                violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            )
        })?;

        let period = periods.assign(t0.time()).to_string();
        bump(&mut summary.per_period, &period);
        out.entry(period).or_default().push(obs);
    }
    Ok((out, summary))
}
