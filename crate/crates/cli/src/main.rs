//! `linktime`: estimate link travel time distributions from incomplete bus
//! observations, and forecast with them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use linktime_core::analytics::{credible_interval, kl_gaussian, rope_decisions, RopeSettings};
use linktime_core::forecast::{forecast_links_with_mode, forecast_trip, PredictiveMode};
use linktime_core::gibbs::{posterior_mean_corr, run_gibbs, GibbsConfig};
use linktime_core::nalgebra::DVector;
use linktime_core::niw::{default_prior, NIWParams};
use linktime_core::observation::Observation;
use linktime_core::synth::{
    benchmark_counts, benchmark_mean, benchmark_spec, generate_dataset, DatasetCounts, KernelSpec,
    RouteCount, SyntheticDataset,
};
use serde_json::json;

use linktime_cli::formats::{self, ForecastRow};
use linktime_cli::ingest::{events_to_observations, parse_events, PeriodSpec};
use linktime_cli::parallel::run_chains;
use linktime_cli::rhat::max_split_rhat_means;

#[derive(Parser)]
#[command(name = "linktime", version, about = "Bayesian link travel time estimation")]
struct Cli {
    /// Print a machine-readable JSON summary to stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset with known ground truth.
    Synth(SynthArgs),
    /// Run the Gibbs sampler over an observation file.
    Estimate(EstimateArgs),
    /// Forecast unobserved links from observed ones using a chain.
    Forecast(ForecastArgs),
    /// Posterior analytics over a chain: intervals, ROPE verdicts, KL.
    Diagnose(DiagnoseArgs),
    /// Parse raw in-out-stop events into per-period observation files.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for observations.jsonl and truth.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Protocol description (kernel, mean, counts); defaults to the
    /// 18-link benchmark.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Include {
    /// Complete observations only.
    Full,
    /// Complete plus missing-link observations (no ragged rows).
    FullMissing,
    /// Everything.
    All,
}

#[derive(Args)]
struct EstimateArgs {
    /// Directory holding observations.jsonl (or observations_<period>.jsonl).
    #[arg(long)]
    data: PathBuf,
    /// Output chain directory.
    #[arg(long)]
    out: PathBuf,
    /// Use observations_<period>.jsonl instead of observations.jsonl.
    #[arg(long)]
    period: Option<String>,
    #[arg(long, value_enum, default_value = "all")]
    include: Include,
    /// Burn-in iterations.
    #[arg(long)]
    k1: Option<usize>,
    /// Post-burn-in iterations.
    #[arg(long)]
    k2: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// NIW prior file; defaults to (0, 10, I, n+2).
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Run config JSON (prior/gibbs overrides; flags win).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Full dimension when it exceeds the largest link index in the file.
    #[arg(long)]
    n_links: Option<usize>,
    /// Run 4 chains on adjacent seeds and report split R-hat (advisory).
    #[arg(long)]
    rhat: bool,
}

#[derive(Args)]
struct ForecastArgs {
    /// Chain directory from `estimate`.
    #[arg(long)]
    chain: PathBuf,
    /// Observed link values: CSV with header link,value (1-based).
    #[arg(long)]
    input: PathBuf,
    /// Links to condition on, e.g. 1-11; defaults to every link in the input.
    #[arg(long)]
    observe: Option<String>,
    /// Links to forecast, e.g. 12-18.
    #[arg(long)]
    predict: String,
    /// Also forecast the total over these links, e.g. 1-18.
    #[arg(long)]
    trip: Option<String>,
    #[arg(long, value_enum, default_value = "mixture")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV: link,mean,std,q2.5,q97.5.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Average the conditional over every posterior draw.
    Mixture,
    /// Condition once at the posterior-mean parameters.
    Plugin,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    chain: PathBuf,
    /// truth.json for KL divergence of truth against the estimate.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// ROPE interval as low,high.
    #[arg(long)]
    rope: Option<String>,
    #[arg(long)]
    reject_threshold: Option<f64>,
    #[arg(long)]
    accept_threshold: Option<f64>,
    #[arg(long)]
    ci_level: Option<f64>,
    /// Run config JSON (rope overrides; flags win).
    #[arg(long)]
    config: Option<PathBuf>,
    /// ROPE decisions CSV.
    #[arg(long)]
    out_decisions: Option<PathBuf>,
    /// ROPE-thresholded posterior mean correlation, matrix CSV.
    #[arg(long)]
    out_corr: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// Raw in-out-stop CSV.
    #[arg(long)]
    events: PathBuf,
    /// Route geometry JSON.
    #[arg(long)]
    geometry: PathBuf,
    /// Output directory for observations_<period>.jsonl and rejects.json.
    #[arg(long)]
    out: PathBuf,
    /// Drop trips with a ragged row wider than this many links.
    #[arg(long, default_value_t = 3)]
    max_ragged_span: usize,
    /// Run config JSON (custom periods).
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let json = cli.json;
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args, json),
        Command::Estimate(args) => cmd_estimate(args, json),
        Command::Forecast(args) => cmd_forecast(args, json),
        Command::Diagnose(args) => cmd_diagnose(args, json),
        Command::Ingest(args) => cmd_ingest(args, json),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn emit(json: bool, summary: serde_json::Value, human: String) {
    if json {
        println!("{summary}");
    } else {
        println!("{human}");
    }
}

/// Parses 1-based "3", "1-11", "1,3,5-7" into 0-based indices.
fn parse_ranges(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (
                a.trim().parse::<usize>().with_context(|| format!("bad index {a:?}"))?,
                b.trim().parse::<usize>().with_context(|| format!("bad index {b:?}"))?,
            ),
            None => {
                let v = part.parse::<usize>().with_context(|| format!("bad index {part:?}"))?;
                (v, v)
            }
        };
        if lo == 0 {
            bail!("link indices are 1-based: {part:?}");
        }
        if hi < lo {
            bail!("empty range {part:?}");
        }
        out.extend(lo - 1..hi);
    }
    if out.is_empty() {
        bail!("no indices in {s:?}");
    }
    Ok(out)
}

// ------------------------------------------------------------------ synth

fn spec_from_file(path: &Path) -> Result<(KernelSpec, DVector<f64>, DatasetCounts)> {
    let doc = formats::read_synth_spec(path)?;
    let to0 = |v: usize, what: &str| -> Result<usize> {
        if v == 0 {
            bail!("{what} indices are 1-based");
        }
        Ok(v - 1)
    };
    let spec = KernelSpec {
        n_links: doc.kernel.n_links,
        extra_edges: doc
            .kernel
            .extra_edges
            .iter()
            .map(|&(i, j)| Ok((to0(i, "edge")?, to0(j, "edge")?)))
            .collect::<Result<_>>()?,
        beta: doc.kernel.beta,
        sigma: doc.kernel.sigma,
    };
    let counts = DatasetCounts {
        target_route_id: doc.counts.target_route_id.clone(),
        full: doc.counts.full,
        ragged: doc.counts.ragged,
        ragged_merges: doc
            .counts
            .ragged_merges
            .iter()
            .map(|&b| to0(b, "merge boundary"))
            .collect::<Result<_>>()?,
        routes: doc
            .counts
            .routes
            .iter()
            .map(|r| {
                Ok(RouteCount {
                    route_id: r.route_id.clone(),
                    coverage: (to0(r.coverage.0, "coverage")?, to0(r.coverage.1, "coverage")?),
                    skips: r
                        .skips
                        .iter()
                        .map(|&b| to0(b, "skip boundary"))
                        .collect::<Result<_>>()?,
                    count: r.count,
                })
            })
            .collect::<Result<_>>()?,
    };
    Ok((spec, DVector::from_vec(doc.mean.clone()), counts))
}

fn cmd_synth(args: SynthArgs, json: bool) -> Result<()> {
    let (spec, mean, counts) = match &args.spec {
        Some(path) => spec_from_file(path)?,
        None => (benchmark_spec(), benchmark_mean(), benchmark_counts()),
    };
    let SyntheticDataset { observations, truth, truth_corr } =
        generate_dataset(&spec, &mean, &counts, args.seed)
            .map_err(|e| anyhow::anyhow!("generate dataset: {e}"))?;
    std::fs::create_dir_all(&args.out)?;
    let obs_path = args.out.join("observations.jsonl");
    let truth_path = args.out.join("truth.json");
    formats::write_observations_jsonl(&obs_path, &observations)?;
    formats::write_truth_json(&truth_path, &truth, &truth_corr)?;
    emit(
        json,
        json!({
            "command": "synth",
            "observations": observations.len(),
            "n_links": spec.n_links,
            "seed": args.seed,
            "observations_file": obs_path,
            "truth_file": truth_path,
        }),
        format!(
            "wrote {} observations over {} links to {} (truth in {})",
            observations.len(),
            spec.n_links,
            obs_path.display(),
            truth_path.display()
        ),
    );
    Ok(())
}

// --------------------------------------------------------------- estimate

fn keep(obs: &Observation, include: Include) -> bool {
    match include {
        Include::All => true,
        Include::Full => obs.alignment().is_identity(),
        Include::FullMissing => obs.alignment().spans().iter().all(|s| s.len == 1),
    }
}

fn cmd_estimate(args: EstimateArgs, json: bool) -> Result<()> {
    let file = match &args.period {
        Some(p) => args.data.join(format!("observations_{p}.jsonl")),
        None => args.data.join("observations.jsonl"),
    };
    let config = args
        .config
        .as_deref()
        .map(formats::read_run_config)
        .transpose()?
        .unwrap_or_default();

    let all = formats::read_observations_jsonl(&file, args.n_links)?;
    let total = all.len();
    let observations: Vec<Observation> =
        all.into_iter().filter(|o| keep(o, args.include)).collect();
    if observations.is_empty() {
        bail!("{}: no observations left after filtering", file.display());
    }
    let n = observations[0].n();

    let prior: NIWParams = match (&args.prior, &config.prior) {
        (Some(path), _) => formats::read_prior_json(path)?,
        (None, Some(doc)) => doc.to_params()?,
        (None, None) => default_prior(n),
    };

    let g = config.gibbs.as_ref();
    let pick = |flag: Option<usize>, file: Option<usize>, fallback: usize| {
        flag.or(file).unwrap_or(fallback)
    };
    let cfg = GibbsConfig {
        burn_in: pick(args.k1, g.and_then(|g| g.burn_in), 10_000),
        retained: pick(args.k2, g.and_then(|g| g.retained), 5_000),
        thin: pick(args.thin, g.and_then(|g| g.thin), 1),
        seed: args.seed.or(g.and_then(|g| g.seed)).unwrap_or(0),
        jitter: g.and_then(|g| g.jitter).unwrap_or(true),
    };

    let (chain, rhat) = if args.rhat {
        let configs: Vec<GibbsConfig> = (0..4)
            .map(|k| GibbsConfig { seed: cfg.seed.wrapping_add(k), ..cfg })
            .collect();
        let mut chains = run_chains(&observations, &prior, &configs)?;
        let (r, comp) = max_split_rhat_means(&chains)?;
        (chains.swap_remove(0), Some((r, comp)))
    } else {
        let chain = run_gibbs(&observations, &prior, &cfg)
            .map_err(|e| anyhow::anyhow!("gibbs: {e}"))?;
        (chain, None)
    };

    formats::write_chain_dir(&args.out, &chain)?;
    let mu = chain.posterior_mean_params().map_err(|e| anyhow::anyhow!("{e}"))?;
    let mean: Vec<f64> = mu.mean().iter().copied().collect();
    let mut summary = json!({
        "command": "estimate",
        "observations_read": total,
        "observations_used": observations.len(),
        "n_links": n,
        "chain_len": chain.len(),
        "seed": cfg.seed,
        "posterior_mean": mean,
        "chain_dir": args.out,
    });
    let mut human = format!(
        "estimated over {} of {total} observations ({} links): {} draws in {}",
        observations.len(),
        n,
        chain.len(),
        args.out.display()
    );
    if let Some((r, comp)) = rhat {
        summary["split_rhat_max"] = json!(r);
        summary["split_rhat_component"] = json!(comp + 1);
        human.push_str(&format!(
            "; advisory split R-hat {r:.4} (worst component {})",
            comp + 1
        ));
    }
    emit(json, summary, human);
    Ok(())
}

// --------------------------------------------------------------- forecast

fn cmd_forecast(args: ForecastArgs, json: bool) -> Result<()> {
    let chain = formats::read_chain_dir(&args.chain)?;
    let input = formats::read_observed_csv(&args.input)?;
    let observed_idx: Vec<usize> = match &args.observe {
        Some(s) => parse_ranges(s)?,
        None => input.iter().map(|&(l, _)| l).collect(),
    };
    let lookup: BTreeMap<usize, f64> = input.into_iter().collect();
    let observed_vals = DVector::from_fn(observed_idx.len(), |a, _| {
        lookup.get(&observed_idx[a]).copied().unwrap_or(f64::NAN)
    });
    if observed_vals.iter().any(|v| v.is_nan()) {
        let missing: Vec<usize> = observed_idx
            .iter()
            .filter(|l| !lookup.contains_key(l))
            .map(|l| l + 1)
            .collect();
        bail!("input file lacks values for observed links {missing:?}");
    }
    let forecast_idx = parse_ranges(&args.predict)?;
    let mode = match args.mode {
        Mode::Mixture => PredictiveMode::Mixture,
        Mode::Plugin => PredictiveMode::PlugIn,
    };

    let fc = forecast_links_with_mode(
        &chain,
        &observed_idx,
        &observed_vals,
        &forecast_idx,
        args.seed,
        mode,
    )
    .map_err(|e| anyhow::anyhow!("forecast: {e}"))?;

    let mut rows = Vec::with_capacity(forecast_idx.len() + 1);
    for (a, &link) in forecast_idx.iter().enumerate() {
        let trace: Vec<f64> = fc.samples.iter().map(|s| s[a]).collect();
        let (q025, q975) = credible_interval(&trace, 0.95)
            .map_err(|e| anyhow::anyhow!("predictive quantiles: {e}"))?;
        rows.push(ForecastRow {
            label: (link + 1).to_string(),
            mean: fc.mean[a],
            std: fc.variance[a].sqrt(),
            q025,
            q975,
        });
    }
    let mut trip_summary = None;
    if let Some(trip) = &args.trip {
        let trip_links = parse_ranges(trip)?;
        let tf = forecast_trip(&chain, &observed_idx, &observed_vals, &trip_links, args.seed, mode)
            .map_err(|e| anyhow::anyhow!("trip forecast: {e}"))?;
        let (q025, q975) = if tf.variance == 0.0 {
            (tf.mean, tf.mean)
        } else {
            credible_interval(&tf.samples, 0.95)
                .map_err(|e| anyhow::anyhow!("trip quantiles: {e}"))?
        };
        rows.push(ForecastRow {
            label: "trip".to_string(),
            mean: tf.mean,
            std: tf.variance.sqrt(),
            q025,
            q975,
        });
        trip_summary = Some(json!({"mean": tf.mean, "std": tf.variance.sqrt()}));
    }
    formats::write_forecast_csv(&args.out, &rows)?;

    let mut summary = json!({
        "command": "forecast",
        "links": forecast_idx.iter().map(|l| l + 1).collect::<Vec<_>>(),
        "mean": fc.mean.iter().copied().collect::<Vec<f64>>(),
        "out": args.out,
    });
    if let Some(t) = trip_summary {
        summary["trip"] = t;
    }
    emit(
        json,
        summary,
        format!("forecast {} links into {}", forecast_idx.len(), args.out.display()),
    );
    Ok(())
}

// --------------------------------------------------------------- diagnose

fn cmd_diagnose(args: DiagnoseArgs, json: bool) -> Result<()> {
    let chain = formats::read_chain_dir(&args.chain)?;
    let config = args
        .config
        .as_deref()
        .map(formats::read_run_config)
        .transpose()?
        .unwrap_or_default();

    let mut settings = RopeSettings::default();
    if let Some(doc) = &config.rope {
        settings = doc.apply(settings);
    }
    if let Some(s) = &args.rope {
        let (lo, hi) = s
            .split_once(',')
            .with_context(|| format!("--rope wants low,high, got {s:?}"))?;
        settings.rope = (lo.trim().parse()?, hi.trim().parse()?);
    }
    if let Some(v) = args.reject_threshold {
        settings.reject_threshold = v;
    }
    if let Some(v) = args.accept_threshold {
        settings.accept_threshold = v;
    }
    if let Some(v) = args.ci_level {
        settings.ci_level = v;
    }

    let decisions =
        rope_decisions(&chain, &settings).map_err(|e| anyhow::anyhow!("rope: {e}"))?;
    let mut verdicts: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &decisions {
        *verdicts.entry(formats::verdict_str(d.verdict)).or_insert(0) += 1;
    }
    if let Some(path) = &args.out_decisions {
        formats::write_decisions_csv(path, &decisions)?;
    }
    if let Some(path) = &args.out_corr {
        let corr = posterior_mean_corr(&chain);
        let shown = linktime_core::analytics::threshold_display(&corr, &decisions)
            .map_err(|e| anyhow::anyhow!("threshold: {e}"))?;
        formats::write_matrix_csv(path, shown.as_matrix())?;
    }

    let mut summary = json!({
        "command": "diagnose",
        "chain_len": chain.len(),
        "n_links": chain.n(),
        "verdicts": verdicts,
        "rope": {"low": settings.rope.0, "high": settings.rope.1},
    });
    let mut human = format!(
        "{} decisions over {} links: {:?}",
        decisions.len(),
        chain.n(),
        verdicts
    );
    if let Some(path) = &args.truth {
        let (truth, _) = formats::read_truth_json(path)?;
        let estimate = chain
            .posterior_mean_params()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let kl = kl_gaussian(&truth, &estimate).map_err(|e| anyhow::anyhow!("kl: {e}"))?;
        summary["kl_truth_vs_estimate"] = json!(kl);
        human.push_str(&format!("; KL(truth||estimate) = {kl:.6}"));
    }
    emit(json, summary, human);
    Ok(())
}

// ----------------------------------------------------------------- ingest

fn cmd_ingest(args: IngestArgs, json: bool) -> Result<()> {
    let geometry = formats::read_geometry_json(&args.geometry)?;
    let config = args
        .config
        .as_deref()
        .map(formats::read_run_config)
        .transpose()?
        .unwrap_or_default();
    let periods = match &config.periods {
        Some(list) => PeriodSpec::from_json(list)?,
        None => PeriodSpec::default_four(),
    };

    let report = parse_events(&args.events)?;
    let (grouped, summary) =
        events_to_observations(&report.events, &geometry, &periods, args.max_ragged_span)?;

    std::fs::create_dir_all(&args.out)?;
    let mut files = BTreeMap::new();
    for (period, observations) in &grouped {
        let path = args.out.join(format!("observations_{period}.jsonl"));
        formats::write_observations_jsonl(&path, observations)?;
        files.insert(period.clone(), path);
    }
    let rejects_path = args.out.join("rejects.json");
    std::fs::write(
        &rejects_path,
        serde_json::to_string_pretty(&json!({
            "rejected_rows": report.rejects,
            "dropped_trips": summary.dropped_trips,
            "skipped_segments": summary.skipped_segments,
        }))?,
    )?;

    emit(
        json,
        json!({
            "command": "ingest",
            "events": report.events.len(),
            "rejected_rows": report.rejects.len(),
            "per_period": summary.per_period,
            "dropped_trips": summary.dropped_trips,
            "skipped_segments": summary.skipped_segments,
            "files": files,
            "rejects_file": rejects_path,
        }),
        format!(
            "ingested {} events ({} rows rejected); observations per period: {:?}",
            report.events.len(),
            report.rejects.len(),
            summary.per_period
        ),
    );
    Ok(())
}
