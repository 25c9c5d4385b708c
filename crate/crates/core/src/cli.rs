//! Command-line front end. Exit codes: 0 success, 1 pipeline failure,
//! 2 usage or configuration error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bias::BaselineKeywordClassifier;
use crate::error::{Error, Result};
use crate::extraction::Representation;
use crate::harness::{HarnessConfig, SimClock};
use crate::metrics::read_distances_csv;
use crate::pipeline::{load_manifest, run_audit, write_fixture_bundle, AuditOverrides};
use crate::report::render_report;
use crate::simulator::{presets, serve, ScenarioConfig, Site};
use crate::url_taxonomy::{evaluate_identifier, read_domain_freq, read_labeled_corpus, DomainList, EvalReport, UrlRules};
use crate::visit_store::{ingest_visit_file, tune_refresh_threshold};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "scrape-audit", version, about = "Audit post-hoc scraping of browsing histories against in-situ captures")]
pub struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Run seed; overrides the manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Confidence level in percent.
    #[arg(long, global = true, value_parser = ["95", "99"])]
    confidence: Option<String>,
    /// Output directory; overrides the manifest.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Log verbosity (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full audit described by a manifest.
    Audit(AuditArgs),
    /// Render figures and the error table from a finished run directory.
    Report {
        run_dir: PathBuf,
    },
    /// Score the article identifier on a labeled URL corpus.
    EvaluateUrls(EvaluateArgs),
    /// Serve a scenario as an HTTP proxy target, or write a preset bundle.
    Simulate(SimulateArgs),
    /// Pick the refresh window that minimizes mean distance.
    TuneRefresh(TuneArgs),
    /// Baseline keyword classifier speaking the line protocol on stdio.
    #[command(hide = true)]
    BaselineClassifier,
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Audit manifest (JSON); relative paths in it resolve against its directory.
    manifest: PathBuf,
    /// Delay cohorts in days, comma separated.
    #[arg(long, value_delimiter = ',')]
    delays: Option<Vec<u32>>,
    /// Simulated milliseconds per wall millisecond.
    #[arg(long)]
    compression: Option<f64>,
    /// Hosts fetched concurrently.
    #[arg(long)]
    max_parallel: Option<usize>,
    /// Minimum wall milliseconds between requests to one host.
    #[arg(long)]
    per_host_gap_ms: Option<u64>,
    /// Classifier command line or URL; defaults to $SCRAPE_AUDIT_CLASSIFIER.
    #[arg(long)]
    classifier: Option<String>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// CSV with `url,is_article` columns.
    corpus: PathBuf,
    /// Domain list CSV with `domain,outlet_type` columns.
    #[arg(long)]
    domains: PathBuf,
    /// URL rules JSON; the built-in rules when omitted.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// CSV with `domain,count` weights for the weighted metrics.
    #[arg(long)]
    domain_freq: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Demo,
    Paywall,
    AdChurn,
    Deletion,
    UaBlock,
    Bias,
    Errors,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario JSON to serve.
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Write an audit bundle for the preset into DIR instead of serving.
    #[arg(long, value_name = "DIR", requires = "preset")]
    write: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Simulated milliseconds per wall millisecond.
    #[arg(long, default_value_t = 1.0)]
    compression: f64,
    /// Simulated time at startup in epoch ms; the scenario epoch by default.
    #[arg(long)]
    start_ms: Option<i64>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    /// Visit log (JSONL) before refresh deduplication.
    visits: PathBuf,
    /// distances.csv from a run whose refresh window is no larger than the
    /// smallest candidate; only then does every survivor have a distance.
    #[arg(long)]
    distances: PathBuf,
    /// Candidate windows in seconds.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,30,60")]
    candidates: Vec<u64>,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let g = cli.global;
    match cli.command {
        Command::Audit(a) => cmd_audit(&g, a),
        Command::Report { run_dir } => cmd_report(&run_dir),
        Command::EvaluateUrls(a) => cmd_evaluate(a),
        Command::Simulate(a) => cmd_simulate(&g, a),
        Command::TuneRefresh(a) => cmd_tune(a),
        Command::BaselineClassifier => {
            let stdin = std::io::stdin();
            BaselineKeywordClassifier::default().serve_lines(stdin.lock(), std::io::stdout().lock())?;
            Ok(EXIT_OK)
        }
    }
}

fn confidence(g: &GlobalArgs) -> Option<f64> {
    g.confidence.as_deref().map(|c| if c == "99" { 0.99 } else { 0.95 })
}

fn cmd_audit(g: &GlobalArgs, a: AuditArgs) -> Result<i32> {
    let overrides = AuditOverrides {
        seed: g.seed,
        confidence: confidence(g),
        output_dir: g.out.clone(),
        delays: a.delays,
        compression: a.compression,
        max_parallel: a.max_parallel,
        per_host_gap_ms: a.per_host_gap_ms,
        classifier: a.classifier,
    };
    let audit = load_manifest(&a.manifest, &overrides)?;
    match run_audit(&audit) {
        Ok(summary) => {
            println!("audit complete: {}", audit.output_dir.display());
            for (repr, cohorts) in &summary.cohort_means {
                let means: Vec<String> = cohorts.iter().map(|c| format!("{}d={:.4}", c.delay_days, c.mean)).collect();
                println!("  {repr}: {}", means.join(" "));
            }
            match &summary.first_aligned {
                Some(plan) => println!("  first aligned debias plan: {plan}"),
                None => println!("  no debias plan aligned the distributions"),
            }
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            Ok(EXIT_OK)
        }
        Err(f) => {
            eprintln!("error: stage {} failed: {}", f.stage, f.error);
            Ok(EXIT_FAILURE)
        }
    }
}

fn cmd_report(run_dir: &Path) -> Result<i32> {
    for path in render_report(run_dir)? {
        println!("{}", path.display());
    }
    Ok(EXIT_OK)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

/// Human-readable evaluation report.
pub fn format_eval(r: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("n = {}\n", r.n));
    s.push_str(&format!(
        "plain:    precision {}  recall {}  F1 {:.4}\n",
        fmt_opt(r.precision),
        fmt_opt(r.recall),
        r.f1
    ));
    s.push_str(&format!(
        "weighted: precision {}  recall {}  F1 {:.4}\n",
        fmt_opt(r.weighted_precision),
        fmt_opt(r.weighted_recall),
        r.weighted_f1
    ));
    let c = &r.confusion;
    s.push_str(&format!("confusion: tp {} fp {} fn {} tn {}\n", c.tp, c.fp, c.fn_, c.tn));
    if !r.failures_by_rule.is_empty() {
        s.push_str("rejections by rule (decisions, of which gold articles):\n");
        for (rule, (n, wrong)) in &r.failures_by_rule {
            s.push_str(&format!("  {rule}: {n} ({wrong})\n"));
        }
    }
    s
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<i32> {
    let labeled = read_labeled_corpus(open(&a.corpus)?)?;
    let domains = DomainList::from_path(&a.domains)?;
    let rules = match &a.rules {
        Some(p) => UrlRules::from_path(p)?,
        None => UrlRules::default(),
    };
    let freq = a.domain_freq.as_deref().map(|p| read_domain_freq(open(p)?)).transpose()?;
    let report = evaluate_identifier(&labeled, freq.as_ref(), &domains, &rules)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", format_eval(&report));
    }
    Ok(EXIT_OK)
}

/// Fixture for a named preset, with a harness config sized for it.
fn preset_fixture(p: Preset, seed: u64) -> (presets::Fixture, HarnessConfig) {
    let fast = HarnessConfig { compression: 172_800.0, per_host_min_gap: 1, ..HarnessConfig::default() };
    match p {
        Preset::Demo => (presets::demo(seed), fast),
        Preset::Paywall => (presets::paywall(seed, 40, 3, 0.1), HarnessConfig { delay_cohorts: vec![0], ..fast }),
        Preset::AdChurn => (presets::ad_churn(seed, 40, 6, 80), HarnessConfig { delay_cohorts: vec![0], ..fast }),
        Preset::Deletion => (presets::deletion(seed, 50, 1, 15, 2), fast),
        Preset::UaBlock => (
            presets::ua_block(seed, crate::harness::DEFAULT_FIXED_USER_AGENT, 20, 3, 40, 6, 10),
            HarnessConfig { delay_cohorts: vec![0], ..fast },
        ),
        Preset::Bias => (presets::bias(seed), HarnessConfig { delay_cohorts: vec![0], ..fast }),
        Preset::Errors => (
            presets::errors(seed, 20, 5, 3, 3_000),
            HarnessConfig { delay_cohorts: vec![0, 30], timeout_secs: 0.5, ..fast },
        ),
    }
}

fn cmd_simulate(g: &GlobalArgs, a: SimulateArgs) -> Result<i32> {
    let seed = g.seed.unwrap_or(0);
    let scenario = match (&a.scenario, a.preset) {
        (Some(path), _) => ScenarioConfig::from_path(path)?,
        (None, Some(p)) => {
            let (fixture, harness) = preset_fixture(p, seed);
            if let Some(dir) = &a.write {
                let manifest = write_fixture_bundle(&fixture, dir, &harness, seed)?;
                println!("{}", manifest.display());
                return Ok(EXIT_OK);
            }
            fixture.scenario
        }
        (None, None) => return Err(Error::Config("simulate needs --scenario or --preset".into())),
    };
    if !(a.compression.is_finite() && a.compression > 0.0) {
        return Err(Error::Config("compression must be positive".into()));
    }
    let start = a.start_ms.unwrap_or(scenario.sim_epoch);
    let routes = scenario.routes.len();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Http(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async move {
        let site = Arc::new(Site::new(scenario)?);
        let clock = SimClock::compressed(start, a.compression);
        let handle = serve(site, clock, SocketAddr::from(([127, 0, 0, 1], a.port))).await?;
        println!("serving {routes} routes; use {} as HTTP proxy (Ctrl-C to stop)", handle.proxy_url());
        let _ = std::io::stdout().flush();
        let _ = tokio::signal::ctrl_c().await;
        handle.shutdown().await;
        Ok::<_, Error>(())
    })?;
    Ok(EXIT_OK)
}

fn cmd_tune(a: TuneArgs) -> Result<i32> {
    let visits = ingest_visit_file(&a.visits, false)?.records;
    let pairs = read_distances_csv(open(&a.distances)?)?;
    let first = pairs.iter().map(|p| p.delay_days).min().ok_or_else(|| Error::Invalid("distances file is empty".into()))?;
    let mut sums: HashMap<String, (f64, usize)> = HashMap::new();
    for p in pairs.iter().filter(|p| p.delay_days == first && p.representation == Representation::CleanedText) {
        let e = sums.entry(p.visit_id.clone()).or_insert((0.0, 0));
        e.0 += p.distance;
        e.1 += 1;
    }
    let by_visit: HashMap<String, f64> = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    let tuning = tune_refresh_threshold(&visits, &by_visit, &a.candidates)?;
    println!("window_s,mean_distance");
    for (w, m) in &tuning.table {
        println!("{w},{m:.6}");
    }
    println!("best window: {} s", tuning.chosen);
    Ok(EXIT_OK)
}
