//! On-disk formats: matrices, observation JSON lines, truth files, chain
//! directories, and the CSV reports.
//!
//! Every numeric field round-trips bit exactly. CSV floats are written with
//! 18 significant decimal digits; JSON floats rely on serde_json's
//! shortest-round-trip encoding. Link indices are 1-based in every file and
//! converted at this boundary; the library is 0-based throughout.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, NaiveDateTime};
use linktime_core::analytics::{RopeDecision, RopeSettings, Verdict};
use linktime_core::gaussian::{CorrelationMatrix, GaussianParams};
use linktime_core::gibbs::{GibbsConfig, PosteriorChain};
use linktime_core::nalgebra::{DMatrix, DVector};
use linktime_core::niw::NIWParams;
use linktime_core::observation::{Alignment, Observation};
use serde::{Deserialize, Serialize};

const T0_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Decimal encoding that parses back to the identical f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .with_context(|| format!("bad float in {what}: {s:?}"))
}

pub fn epoch_to_iso(t: i64) -> String {
    DateTime::from_timestamp(t, 0)
        .map(|dt| dt.naive_utc().format(T0_FORMAT).to_string())
        .unwrap_or_else(|| t.to_string())
}

pub fn iso_to_epoch(s: &str) -> Result<i64> {
    let dt = NaiveDateTime::parse_from_str(s, T0_FORMAT)
        .with_context(|| format!("bad timestamp {s:?}"))?;
    Ok(dt.and_utc().timestamp())
}

// ---------------------------------------------------------------- matrices

/// Square matrix as CSV: first line the dimension, then one comma-separated
/// line per row.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        bail!("matrix CSV holds square matrices, got {}x{}", m.nrows(), m.ncols());
    }
    let file = fs::File::create(path).with_context(|| format!("create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", m.nrows())?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let file = fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let n: usize = lines
        .next()
        .context("matrix CSV is empty")??
        .trim()
        .parse()
        .context("matrix CSV header is not a dimension")?;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let line = lines
            .next()
            .with_context(|| format!("matrix CSV ends after {i} of {n} rows"))??;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n {
            bail!("matrix CSV row {} has {} cells, expected {n}", i + 1, cells.len());
        }
        for (j, c) in cells.iter().enumerate() {
            m[(i, j)] = parse_f64(c, "matrix CSV")?;
        }
    }
    Ok(m)
}

/// Square matrix as JSON: `{"n": dim, "data": row-major entries}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub n: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(m[(i, j)]);
            }
        }
        MatrixJson { n, data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.n * self.n {
            bail!(
                "matrix JSON claims n={} but carries {} entries",
                self.n,
                self.data.len()
            );
        }
        Ok(DMatrix::from_row_slice(self.n, self.n, &self.data))
    }
}

// ------------------------------------------------------------ observations

#[derive(Serialize, Deserialize)]
struct ObservationLine {
    route: String,
    bus: String,
    t0: Option<String>,
    r: Vec<f64>,
    /// 1-based link indices, one list per alignment row.
    rows: Vec<Vec<usize>>,
}

/// JSON lines, one observation per line.
pub fn write_observations_jsonl(path: &Path, observations: &[Observation]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for obs in observations {
        let rows: Vec<Vec<usize>> = obs
            .alignment()
            .spans()
            .iter()
            .map(|s| (s.start + 1..s.end() + 1).collect())
            .collect();
        let line = ObservationLine {
            route: obs.route_id().to_string(),
            bus: obs.bus_id().to_string(),
            t0: obs.start_time().map(epoch_to_iso),
            r: obs.recording().iter().copied().collect(),
            rows,
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads observations back. `n_links` fixes the full dimension; when absent
/// it is inferred as the largest link index used anywhere in the file.
pub fn read_observations_jsonl(path: &Path, n_links: Option<usize>) -> Result<Vec<Observation>> {
    let file = fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
    let mut parsed: Vec<(usize, ObservationLine)> = Vec::new();
    let mut max_link = 0usize;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let obs: ObservationLine = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: bad observation", path.display(), idx + 1))?;
        for row in &obs.rows {
            for &l in row {
                if l == 0 {
                    bail!("{}:{}: link indices are 1-based", path.display(), idx + 1);
                }
                max_link = max_link.max(l);
            }
        }
        parsed.push((idx + 1, obs));
    }
    let n = n_links.unwrap_or(max_link);
    let mut out = Vec::with_capacity(parsed.len());
    for (lineno, line) in parsed {
        let rows: Vec<Vec<usize>> = line
            .rows
            .iter()
            .map(|row| row.iter().map(|&l| l - 1).collect())
            .collect();
        let alignment = Alignment::from_rows(n, &rows).map_err(|violations| {
            anyhow::anyhow!(
                "{}:{}: invalid alignment: {}",
                path.display(),
                lineno,
                violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            )
        })?;
        let t0 = line.t0.as_deref().map(iso_to_epoch).transpose()?;
        let obs = Observation::new(
            DVector::from_vec(line.r),
            alignment,
            line.route,
            line.bus,
            t0,
        )
        .map_err(|violations| {
            anyhow::anyhow!(
                "{}:{}: invalid observation: {}",
                path.display(),
                lineno,
                violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            )
        })?;
        out.push(obs);
    }
    Ok(out)
}

// ------------------------------------------------------------------ truth

#[derive(Serialize, Deserialize)]
struct TruthJson {
    mean: Vec<f64>,
    cov: MatrixJson,
    corr: MatrixJson,
}

pub fn write_truth_json(
    path: &Path,
    truth: &GaussianParams,
    corr: &CorrelationMatrix,
) -> Result<()> {
    let doc = TruthJson {
        mean: truth.mean().iter().copied().collect(),
        cov: MatrixJson::from_matrix(truth.cov()),
        corr: MatrixJson::from_matrix(corr.as_matrix()),
    };
    fs::write(path, serde_json::to_string_pretty(&doc)?)
        .with_context(|| format!("write {}", path.display()))?;
    Ok(())
}

pub fn read_truth_json(path: &Path) -> Result<(GaussianParams, DMatrix<f64>)> {
    let doc: TruthJson = serde_json::from_str(
        &fs::read_to_string(path).with_context(|| format!("open {}", path.display()))?,
    )
    .with_context(|| format!("parse {}", path.display()))?;
    let params = GaussianParams::new(DVector::from_vec(doc.mean), doc.cov.to_matrix()?)
        .map_err(|e| anyhow::anyhow!("{}: invalid truth: {e}", path.display()))?;
    Ok((params, doc.corr.to_matrix()?))
}

// ------------------------------------------------------------------ prior

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorJson {
    pub mu0: Vec<f64>,
    pub lambda0: f64,
    pub psi0: MatrixJson,
    pub nu0: f64,
}

impl PriorJson {
    pub fn from_params(p: &NIWParams) -> Self {
        PriorJson {
            mu0: p.mu0().iter().copied().collect(),
            lambda0: p.lambda0(),
            psi0: MatrixJson::from_matrix(p.psi0()),
            nu0: p.nu0(),
        }
    }

    pub fn to_params(&self) -> Result<NIWParams> {
        NIWParams::new(
            DVector::from_vec(self.mu0.clone()),
            self.lambda0,
            self.psi0.to_matrix()?,
            self.nu0,
        )
        .map_err(|e| anyhow::anyhow!("invalid prior: {e}"))
    }
}

pub fn read_prior_json(path: &Path) -> Result<NIWParams> {
    let doc: PriorJson = serde_json::from_str(
        &fs::read_to_string(path).with_context(|| format!("open {}", path.display()))?,
    )
    .with_context(|| format!("parse {}", path.display()))?;
    doc.to_params()
}

// -------------------------------------------------------- chain directory

#[derive(Serialize, Deserialize)]
struct ConfigJson {
    burn_in: usize,
    retained: usize,
    thin: usize,
    seed: u64,
    jitter: bool,
}

#[derive(Serialize, Deserialize)]
struct ManifestJson {
    n: usize,
    chain_len: usize,
    /// Per-draw record layout inside the samples file.
    layout: String,
    dtype: String,
    samples: String,
}

const LAYOUT: &str = "mean,cov,corr";
const DTYPE: &str = "f64-le";
const SAMPLES_FILE: &str = "samples.bin";

/// Persists a chain as `config.json`, `prior.json`, `manifest.json` and
/// `samples.bin` (per draw: mean, then row-major covariance, then row-major
/// correlation, all little-endian f64).
pub fn write_chain_dir(dir: &Path, chain: &PosteriorChain) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("create {}", dir.display()))?;
    let cfg = chain.config();
    let config = ConfigJson {
        burn_in: cfg.burn_in,
        retained: cfg.retained,
        thin: cfg.thin,
        seed: cfg.seed,
        jitter: cfg.jitter,
    };
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    fs::write(
        dir.join("prior.json"),
        serde_json::to_string_pretty(&PriorJson::from_params(chain.prior()))?,
    )?;
    let n = chain.n();
    let manifest = ManifestJson {
        n,
        chain_len: chain.len(),
        layout: LAYOUT.to_string(),
        dtype: DTYPE.to_string(),
        samples: SAMPLES_FILE.to_string(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    let file = fs::File::create(dir.join(SAMPLES_FILE))?;
    let mut w = BufWriter::new(file);
    for k in 0..chain.len() {
        for v in chain.mean_samples()[k].iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for m in [&chain.cov_samples()[k], chain.corr_samples()[k].as_matrix()] {
            for i in 0..n {
                for j in 0..n {
                    w.write_all(&m[(i, j)].to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_chain_dir(dir: &Path) -> Result<PosteriorChain> {
    let config: ConfigJson = serde_json::from_str(
        &fs::read_to_string(dir.join("config.json"))
            .with_context(|| format!("open {}", dir.join("config.json").display()))?,
    )?;
    let prior = read_prior_json(&dir.join("prior.json"))?;
    let manifest: ManifestJson =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.layout != LAYOUT || manifest.dtype != DTYPE {
        bail!(
            "unsupported chain layout {:?}/{:?} (expected {LAYOUT:?}/{DTYPE:?})",
            manifest.layout,
            manifest.dtype
        );
    }
    let n = manifest.n;
    let record = n + 2 * n * n;
    let bytes = fs::read(dir.join(&manifest.samples))
        .with_context(|| format!("open {}", dir.join(&manifest.samples).display()))?;
    if bytes.len() != manifest.chain_len * record * 8 {
        bail!(
            "samples file holds {} bytes, manifest implies {}",
            bytes.len(),
            manifest.chain_len * record * 8
        );
    }
    let mut floats = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let mut next = || floats.next().expect("length checked above");

    let mut means = Vec::with_capacity(manifest.chain_len);
    let mut covs = Vec::with_capacity(manifest.chain_len);
    let mut corrs = Vec::with_capacity(manifest.chain_len);
    for _ in 0..manifest.chain_len {
        means.push(DVector::from_fn(n, |_, _| next()));
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] = next();
            }
        }
        covs.push(cov);
        let mut corr = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                corr[(i, j)] = next();
            }
        }
        corrs.push(
            CorrelationMatrix::new(corr)
                .map_err(|e| anyhow::anyhow!("invalid stored correlation: {e}"))?,
        );
    }

    let cfg = GibbsConfig {
        burn_in: config.burn_in,
        retained: config.retained,
        thin: config.thin,
        seed: config.seed,
        jitter: config.jitter,
    };
    PosteriorChain::from_parts(means, covs, corrs, cfg, prior)
        .map_err(|e| anyhow::anyhow!("inconsistent chain directory: {e}"))
}

// ------------------------------------------------------------ CSV reports

/// One forecast line: a 1-based link label (or `trip`), predictive mean and
/// standard deviation, and the 2.5%/97.5% predictive quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub label: String,
    pub mean: f64,
    pub std: f64,
    pub q025: f64,
    pub q975: f64,
}

pub fn write_forecast_csv(path: &Path, rows: &[ForecastRow]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "link,mean,std,q2.5,q97.5")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.label,
            fmt_f64(r.mean),
            fmt_f64(r.std),
            fmt_f64(r.q025),
            fmt_f64(r.q975)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::RejectNull => "reject_null",
        Verdict::AcceptNull => "accept_null",
        Verdict::Undecided => "undecided",
    }
}

/// ROPE decisions, entries 1-based.
pub fn write_decisions_csv(path: &Path, decisions: &[RopeDecision]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "i,j,mean,ci_low,ci_high,fraction_in_rope,verdict")?;
    for d in decisions {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            d.entry.0 + 1,
            d.entry.1 + 1,
            fmt_f64(d.posterior_mean),
            fmt_f64(d.ci_low),
            fmt_f64(d.ci_high),
            fmt_f64(d.fraction_in_rope),
            verdict_str(d.verdict)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Observed link values for the forecast command: header `link,value`,
/// links 1-based.
pub fn read_observed_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
    let file = fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if idx == 0 {
            if !trimmed.eq_ignore_ascii_case("link,value") {
                bail!("{}: expected header `link,value`", path.display());
            }
            continue;
        }
        let (l, v) = trimmed
            .split_once(',')
            .with_context(|| format!("{}:{}: expected `link,value`", path.display(), idx + 1))?;
        let link: usize = l.trim().parse().with_context(|| {
            format!("{}:{}: bad link index {l:?}", path.display(), idx + 1)
        })?;
        if link == 0 {
            bail!("{}:{}: link indices are 1-based", path.display(), idx + 1);
        }
        out.push((link - 1, parse_f64(v, "observed value")?));
    }
    Ok(out)
}

// --------------------------------------------------------------- geometry

/// Route geometry for ingest: each route lists its ordered stops, and for
/// each consecutive stop pair the 1-based target link it traverses (or null
/// when the pair lies outside the modeled corridor).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryJson {
    pub n_links: usize,
    pub routes: BTreeMap<String, RouteMapJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteMapJson {
    pub stops: Vec<String>,
    pub links: Vec<Option<usize>>,
}

impl GeometryJson {
    pub fn validate(&self) -> Result<()> {
        if self.n_links == 0 {
            bail!("geometry needs at least one target link");
        }
        for (route, map) in &self.routes {
            if map.stops.len() < 2 {
                bail!("route {route}: needs at least two stops");
            }
            if map.links.len() != map.stops.len() - 1 {
                bail!(
                    "route {route}: {} stops imply {} stop pairs, got {} link entries",
                    map.stops.len(),
                    map.stops.len() - 1,
                    map.links.len()
                );
            }
            let mut last: Option<usize> = None;
            for (i, link) in map.links.iter().enumerate() {
                if let Some(l) = *link {
                    if l == 0 || l > self.n_links {
                        bail!("route {route}: stop pair {i} maps to link {l}, valid range 1..={}", self.n_links);
                    }
                    if let Some(prev) = last {
                        if l <= prev {
                            bail!(
                                "route {route}: covered links must increase along the route ({prev} then {l})"
                            );
                        }
                    }
                    last = Some(l);
                }
            }
            let mut seen = std::collections::BTreeSet::new();
            for stop in &map.stops {
                if !seen.insert(stop) {
                    bail!("route {route}: stop {stop} listed twice");
                }
            }
        }
        Ok(())
    }
}

pub fn read_geometry_json(path: &Path) -> Result<GeometryJson> {
    let doc: GeometryJson = serde_json::from_str(
        &fs::read_to_string(path).with_context(|| format!("open {}", path.display()))?,
    )
    .with_context(|| format!("parse {}", path.display()))?;
    doc.validate()?;
    Ok(doc)
}

// ------------------------------------------------------------- run config

/// Optional knobs for `estimate`/`diagnose`/`ingest`. Command-line flags
/// take precedence over anything set here.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunConfigJson {
    pub prior: Option<PriorJson>,
    pub gibbs: Option<GibbsJson>,
    pub periods: Option<Vec<PeriodJson>>,
    pub rope: Option<RopeJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GibbsJson {
    pub burn_in: Option<usize>,
    pub retained: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
    pub jitter: Option<bool>,
}

/// Time-of-day interval `[start, end)`, wrapping past midnight when
/// `end <= start`. `HH:MM` or `HH:MM:SS`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodJson {
    pub name: String,
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RopeJson {
    pub low: Option<f64>,
    pub high: Option<f64>,
    pub reject_threshold: Option<f64>,
    pub accept_threshold: Option<f64>,
    pub ci_level: Option<f64>,
}

impl RopeJson {
    pub fn apply(&self, mut settings: RopeSettings) -> RopeSettings {
        if let Some(v) = self.low {
            settings.rope.0 = v;
        }
        if let Some(v) = self.high {
            settings.rope.1 = v;
        }
        if let Some(v) = self.reject_threshold {
            settings.reject_threshold = v;
        }
        if let Some(v) = self.accept_threshold {
            settings.accept_threshold = v;
        }
        if let Some(v) = self.ci_level {
            settings.ci_level = v;
        }
        settings
    }
}

pub fn read_run_config(path: &Path) -> Result<RunConfigJson> {
    serde_json::from_str(
        &fs::read_to_string(path).with_context(|| format!("open {}", path.display()))?,
    )
    .with_context(|| format!("parse {}", path.display()))
}

// ------------------------------------------------------------- synth spec

/// Full synthetic protocol: kernel, mean, and the observation mix. Link
/// indices 1-based; a merge boundary `b` fuses links `b` and `b+1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpecJson {
    pub kernel: KernelJson,
    pub mean: Vec<f64>,
    pub counts: CountsJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelJson {
    pub n_links: usize,
    pub extra_edges: Vec<(usize, usize)>,
    pub beta: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountsJson {
    pub target_route_id: String,
    pub full: usize,
    pub ragged: usize,
    pub ragged_merges: Vec<usize>,
    pub routes: Vec<RouteCountJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteCountJson {
    pub route_id: String,
    /// Inclusive 1-based link range.
    pub coverage: (usize, usize),
    pub skips: Vec<usize>,
    pub count: usize,
}

pub fn read_synth_spec(path: &Path) -> Result<SynthSpecJson> {
    serde_json::from_str(
        &fs::read_to_string(path).with_context(|| format!("open {}", path.display()))?,
    )
    .with_context(|| format!("parse {}", path.display()))
}
