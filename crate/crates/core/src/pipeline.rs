//! End-to-end audit: ingest, identify, dedup, schedule and fetch, extract,
//! score, summarise and analyse bias. Every stage writes its artifact into
//! the output directory; `stage.json` records progress so partial runs can
//! be diagnosed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::{
    adapter_from_spec, classify_content, compare_distributions, distribution, domain_distance_table,
    flag_biased_categories, migration_matrix, run_debias_search, write_distributions_csv, write_domain_csv,
    write_labels_csv, write_migration_csv, ClassifierAdapter, DebiasPlan, DebiasReport, LabelInput, Side,
    CLASSIFIER_ENV,
};
use crate::blob::{content_hash, BlobStore, TextCache};
use crate::error::{Error, Result};
use crate::extraction::{decode_lossy, extract, Representation};
use crate::harness::{
    build_schedule, error_ledger, run_fetches, write_ledger_csv, HarnessConfig, LedgerRow, ScrapeRecord,
    ScrapeResult, SimClock,
};
use crate::metrics::{
    group_stats, linear_trend, normalized_distance, rolling_mean, stats::validate_level, write_distances_csv,
    write_series_csv, DistanceOptions, DistancePair, GroupReport, Trend,
};
use crate::simulator::{presets::Fixture, serve, ScenarioConfig, Site};
use crate::url_taxonomy::{categorize_by_path, domain_of, identify_article, DomainList, UrlRules};
use crate::visit_store::{
    dedup_refreshes, filter_scrape_gap, ingest_visit_file, write_rejections, write_visit_log, FilterConfig,
    HtmlRef, VisitRecord,
};

pub const FALLBACK_CATEGORY: &str = "Non-thematic";

fn default_confidence() -> f64 {
    0.95
}

fn default_window() -> u32 {
    7
}

/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditManifest {
    pub visit_log: PathBuf,
    pub domain_list: PathBuf,
    #[serde(default)]
    pub url_rules: Option<PathBuf>,
    #[serde(default)]
    pub harness_config: Option<PathBuf>,
    #[serde(default)]
    pub debias_strategies: Option<PathBuf>,
    /// When set, fetches go to an in-process simulator serving this scenario.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default)]
    pub filters: FilterConfig,
    #[serde(default)]
    pub distance: DistanceOptions,
    #[serde(default = "default_window")]
    pub rolling_window_days: u32,
}

/// Command-line overrides applied on top of the manifest.
#[derive(Debug, Clone, Default)]
pub struct AuditOverrides {
    pub seed: Option<u64>,
    pub confidence: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub delays: Option<Vec<u32>>,
    pub compression: Option<f64>,
    pub max_parallel: Option<usize>,
    pub per_host_gap_ms: Option<u64>,
    pub classifier: Option<String>,
}

/// A manifest with every path resolved and every referenced file loaded.
pub struct ResolvedAudit {
    pub manifest: AuditManifest,
    pub visit_log: PathBuf,
    pub domains: DomainList,
    pub rules: UrlRules,
    pub harness: HarnessConfig,
    pub strategies: Option<Vec<DebiasPlan>>,
    pub scenario: Option<ScenarioConfig>,
    pub output_dir: PathBuf,
    pub classifier: Option<String>,
}

fn existing(base: &Path, field: &str, path: &Path) -> Result<PathBuf> {
    let full = base.join(path);
    if full.is_file() {
        Ok(full)
    } else {
        Err(Error::Config(format!("{field}: file not found: {}", full.display())))
    }
}

fn field_err(field: &str, e: Error) -> Error {
    Error::Config(format!("{field}: {e}"))
}

/// Reads and validates a manifest. All failures are configuration errors.
pub fn load_manifest(path: &Path, overrides: &AuditOverrides) -> Result<ResolvedAudit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
    let manifest: AuditManifest =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let visit_log = existing(&base, "visit_log", &manifest.visit_log)?;
    let domains = DomainList::from_path(&existing(&base, "domain_list", &manifest.domain_list)?)
        .map_err(|e| field_err("domain_list", e))?;
    let rules = match &manifest.url_rules {
        Some(p) => UrlRules::from_path(&existing(&base, "url_rules", p)?).map_err(|e| field_err("url_rules", e))?,
        None => UrlRules::default(),
    };
    let mut harness = match &manifest.harness_config {
        Some(p) => {
            let full = existing(&base, "harness_config", p)?;
            let text = std::fs::read_to_string(&full).map_err(|e| Error::Config(format!("harness_config: {e}")))?;
            HarnessConfig::from_json(&text).map_err(|e| field_err("harness_config", e))?
        }
        None => HarnessConfig::default(),
    };
    let strategies = match &manifest.debias_strategies {
        Some(p) => {
            let full = existing(&base, "debias_strategies", p)?;
            let text = std::fs::read_to_string(&full).map_err(|e| Error::Config(format!("debias_strategies: {e}")))?;
            let plans: Vec<DebiasPlan> =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("debias_strategies: {e}")))?;
            for plan in &plans {
                plan.validate().map_err(|e| field_err("debias_strategies", e))?;
            }
            Some(plans)
        }
        None => None,
    };
    let scenario = match &manifest.scenario {
        Some(p) => Some(ScenarioConfig::from_path(&existing(&base, "scenario", p)?).map_err(|e| field_err("scenario", e))?),
        None => None,
    };

    harness.seed = overrides.seed.unwrap_or(manifest.seed);
    if let Some(d) = &overrides.delays {
        harness.delay_cohorts = d.clone();
    }
    if let Some(c) = overrides.compression {
        harness.compression = c;
    }
    if let Some(m) = overrides.max_parallel {
        harness.max_parallel = m;
    }
    if let Some(g) = overrides.per_host_gap_ms {
        harness.per_host_min_gap = g;
    }
    harness.validate().map_err(|e| field_err("harness_config", e))?;

    let mut manifest = manifest;
    if let Some(level) = overrides.confidence {
        manifest.confidence = level;
    }
    validate_level(manifest.confidence).map_err(|e| field_err("confidence", e))?;
    manifest.filters.validate().map_err(|e| field_err("filters", e))?;
    if manifest.rolling_window_days == 0 {
        return Err(Error::Config("rolling_window_days: must be positive".into()));
    }
    manifest.seed = harness.seed;

    let output_dir = overrides.output_dir.clone().unwrap_or_else(|| base.join(&manifest.output_dir));
    std::fs::create_dir_all(&output_dir)
        .map_err(|e| Error::Config(format!("output_dir: cannot create {}: {e}", output_dir.display())))?;
    let classifier = overrides.classifier.clone();
    Ok(ResolvedAudit { manifest, visit_log, domains, rules, harness, strategies, scenario, output_dir, classifier })
}

/// The stage that failed plus its error.
#[derive(Debug)]
pub struct StageFailure {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.error)
    }
}

#[derive(Serialize)]
struct StageMarker<'a> {
    stage: &'a str,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn write_marker(out: &Path, stage: &str, status: &str, error: Option<String>) {
    let marker = StageMarker { stage, status, error };
    let text = serde_json::to_string_pretty(&marker).expect("marker serializes");
    if let Err(e) = std::fs::write(out.join("stage.json"), text + "\n") {
        log::warn!("cannot write stage marker: {e}");
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Counts {
    pub ingested: usize,
    pub rejected: usize,
    pub articles: usize,
    pub after_dedup: usize,
    pub tasks: usize,
    pub fetched: usize,
    pub failures: usize,
    pub gap_removed: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortMean {
    pub delay_days: u32,
    pub n: usize,
    pub mean: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanVerdict {
    pub name: String,
    pub filter: String,
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
    pub verdict: crate::bias::Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSummary {
    pub seed: u64,
    pub confidence: f64,
    pub delay_cohorts: Vec<u32>,
    pub classifier: String,
    pub counts: Counts,
    pub warnings: Vec<String>,
    /// Per representation, ascending delay.
    pub cohort_means: BTreeMap<String, Vec<CohortMean>>,
    pub profile_means: BTreeMap<String, BTreeMap<String, f64>>,
    pub trends: BTreeMap<String, Option<Trend>>,
    pub error_ledger: Vec<LedgerRow>,
    pub flagged_categories: Vec<String>,
    pub debias: Vec<PlanVerdict>,
    pub first_aligned: Option<String>,
    /// Output name → path relative to the output directory.
    pub files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct StatsFile<'a> {
    by_cohort: BTreeMap<&'a str, GroupReport>,
    by_profile: BTreeMap<&'a str, GroupReport>,
    by_cohort_profile: BTreeMap<&'a str, GroupReport>,
    trends: BTreeMap<&'a str, Option<Trend>>,
}

struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn create(&mut self, name: &str, rel: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.files.insert(name.to_string(), rel.to_string());
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(BufWriter::new(f))
    }

    fn json<T: Serialize>(&mut self, name: &str, rel: &str, value: &T) -> Result<()> {
        let mut w = self.create(name, rel)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

struct Texts {
    by_repr: [String; 3],
}

fn repr_index(r: Representation) -> usize {
    match r {
        Representation::HtmlFull => 0,
        Representation::RawText => 1,
        Representation::CleanedText => 2,
    }
}

fn extract_all(html: &[u8], cache: &TextCache) -> Texts {
    let hash = content_hash(html);
    let text = decode_lossy(html);
    let by_repr = Representation::ALL.map(|r| {
        if let Some(t) = cache.get(&hash, r.as_str()) {
            return t;
        }
        let t = extract(&text, r);
        if let Err(e) = cache.put(&hash, r.as_str(), &t) {
            log::warn!("text cache: {e}");
        }
        t
    });
    Texts { by_repr }
}

fn chars_limited(s: &str, limit: Option<usize>) -> (String, bool) {
    match limit {
        Some(n) if s.chars().count() > n => (s.chars().take(n).collect(), true),
        _ => (s.to_string(), false),
    }
}

/// Runs a whole audit. Configuration problems were caught by
/// [`load_manifest`]; anything failing here is a pipeline failure.
pub fn run_audit(audit: &ResolvedAudit) -> std::result::Result<AuditSummary, StageFailure> {
    let out = &audit.output_dir;
    let mut stage = "ingest";
    let result = run_stages(audit, &mut stage);
    match &result {
        Ok(_) => write_marker(out, "summary", "complete", None),
        Err(e) => write_marker(out, stage, "failed", Some(e.to_string())),
    }
    result.map_err(|error| StageFailure { stage, error })
}

fn run_stages(audit: &ResolvedAudit, stage: &mut &'static str) -> Result<AuditSummary> {
    let m = &audit.manifest;
    let out_dir = audit.output_dir.clone();
    let mut outputs = Outputs { dir: out_dir.clone(), files: BTreeMap::new() };
    let mut counts = Counts::default();
    let mut warnings = Vec::new();
    let enter = |s: &'static str, stage: &mut &'static str| {
        *stage = s;
        write_marker(&out_dir, s, "running", None);
        log::info!("stage {s}");
    };

    enter("ingest", stage);
    let ingested = ingest_visit_file(&audit.visit_log, false)?;
    counts.ingested = ingested.records.len();
    counts.rejected = ingested.rejected.len();
    {
        let mut w = outputs.create("rejected", "ingest/rejected.jsonl")?;
        write_rejections(&mut w, &ingested.rejected)?;
        w.flush()?;
    }
    if ingested.records.is_empty() {
        return Err(Error::Invalid("the visit log holds no valid records".into()));
    }
    let log_dir = audit.visit_log.parent().unwrap_or(Path::new(".")).to_path_buf();

    enter("identify", stage);
    let mut articles = Vec::new();
    {
        let mut w = csv::Writer::from_writer(outputs.create("identification", "identify/decisions.csv")?);
        w.write_record(["visit_id", "url", "is_article", "reasons", "path_categories"])?;
        for v in &ingested.records {
            let d = identify_article(&v.url, &audit.domains, &audit.rules);
            let cats: Vec<String> = categorize_by_path(&v.url, &audit.rules).into_iter().collect();
            w.write_record([
                v.visit_id.as_str(),
                &v.url,
                if d.is_article { "true" } else { "false" },
                &d.reasons.join(";"),
                &cats.join(";"),
            ])?;
            if d.is_article {
                articles.push(v.clone());
            }
        }
        w.flush()?;
    }
    counts.articles = articles.len();
    if articles.is_empty() {
        return Err(Error::Invalid("no visit passed article identification".into()));
    }

    enter("dedup", stage);
    let visits = dedup_refreshes(&articles, m.filters.refresh_window);
    counts.after_dedup = visits.len();
    let in_blobs = BlobStore::open(&out_dir, "blobs/in_situ")?;
    let mut in_html: HashMap<String, Vec<u8>> = HashMap::with_capacity(visits.len());
    let mut stored = Vec::with_capacity(visits.len());
    for v in &visits {
        let html = v.load_html(&log_dir)?;
        let rel = in_blobs.put(&html, "html")?;
        in_html.insert(v.visit_id.clone(), html);
        stored.push(VisitRecord { html: HtmlRef::Path(rel), ..v.clone() });
    }
    {
        let mut w = outputs.create("articles", "articles.jsonl")?;
        write_visit_log(&mut w, &stored)?;
        w.flush()?;
    }

    enter("schedule", stage);
    let schedule = build_schedule(&visits, &audit.harness)?;
    warnings.extend(schedule.warnings.iter().cloned());
    counts.tasks = schedule.tasks.len();
    {
        let mut w = outputs.create("schedule", "schedule.jsonl")?;
        for t in &schedule.tasks {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }

    enter("fetch", stage);
    let run = fetch_schedule(&schedule.tasks, schedule.origin_ms, &audit.harness, audit.scenario.as_ref())?;
    counts.fetched = run.results.len();
    counts.failures = run.results.iter().filter(|r| r.status.is_failure()).count();
    let ex_blobs = BlobStore::open(&out_dir, "blobs/ex_situ")?;
    {
        let mut w = outputs.create("results", "results.jsonl")?;
        for r in &run.results {
            let html_path = if r.html.is_empty() { None } else { Some(ex_blobs.put(&r.html, "html")?) };
            let record = ScrapeRecord {
                visit_id: r.visit_id.clone(),
                profile: r.profile,
                delay_days: r.delay_days,
                fetch_ts_ms: r.fetch_time,
                status: r.status,
                final_url: r.final_url.clone(),
                html_path,
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    {
        let mut w = outputs.create("request_trace", "request_trace.jsonl")?;
        for t in &run.trace {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }

    enter("ledger", stage);
    let ledger = error_ledger(&run.results);
    {
        let mut w = outputs.create("error_ledger", "error_ledger.csv")?;
        write_ledger_csv(&mut w, &ledger)?;
    }

    enter("gap_filter", stage);
    let by_id: HashMap<&str, &VisitRecord> = visits.iter().map(|v| (v.visit_id.as_str(), v)).collect();
    let pairs: Vec<(VisitRecord, ScrapeResult)> = run
        .results
        .into_iter()
        .filter_map(|r| by_id.get(r.visit_id.as_str()).map(|v| ((*v).clone(), r)))
        .collect();
    let filtered = filter_scrape_gap(pairs, m.filters.max_scrape_gap);
    counts.gap_removed = filtered.removed;
    if filtered.removed > 0 {
        warnings.push(format!("{} same-day fetches exceeded the {} h gap and were dropped", filtered.removed, m.filters.max_scrape_gap));
    }

    enter("distances", stage);
    let cache = TextCache::open(&out_dir)?;
    let in_texts: HashMap<&str, Texts> = visits
        .par_iter()
        .map(|v| (v.visit_id.as_str(), extract_all(&in_html[&v.visit_id], &cache)))
        .collect();
    let limit = m.distance.max_chars;
    let mut scored: Vec<(DistancePair, i64)> = filtered
        .kept
        .par_iter()
        .flat_map_iter(|(visit, scrape)| {
            let ex_html: &[u8] = if scrape.status.is_failure() { &[] } else { &scrape.html };
            let ex = extract_all(ex_html, &cache);
            let inn = &in_texts[visit.visit_id.as_str()];
            Representation::ALL
                .into_iter()
                .map(|r| {
                    let i = repr_index(r);
                    let (a, ta) = chars_limited(&inn.by_repr[i], limit);
                    let (b, tb) = chars_limited(&ex.by_repr[i], limit);
                    let pair = DistancePair {
                        visit_id: visit.visit_id.clone(),
                        representation: r,
                        delay_days: scrape.delay_days,
                        profile: scrape.profile,
                        distance: normalized_distance(&a, &b),
                        in_len: inn.by_repr[i].chars().count(),
                        ex_len: ex.by_repr[i].chars().count(),
                        truncated: ta || tb,
                    };
                    (pair, visit.visit_start)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    scored.sort_by(|(a, _), (b, _)| {
        a.visit_id
            .cmp(&b.visit_id)
            .then(a.delay_days.cmp(&b.delay_days))
            .then(repr_index(a.representation).cmp(&repr_index(b.representation)))
    });
    let truncated = scored.iter().filter(|(p, _)| p.truncated).count();
    if truncated > 0 {
        warnings.push(format!("{truncated} pairs were truncated before comparison"));
    }
    let pairs: Vec<DistancePair> = scored.iter().map(|(p, _)| p.clone()).collect();
    counts.pairs = pairs.len();
    {
        let mut w = outputs.create("distances", "distances.csv")?;
        write_distances_csv(&mut w, &pairs)?;
    }

    enter("statistics", stage);
    let level = m.confidence;
    let first_cohort = *audit.harness.delay_cohorts.first().expect("validated non-empty");
    let mut stats = StatsFile {
        by_cohort: BTreeMap::new(),
        by_profile: BTreeMap::new(),
        by_cohort_profile: BTreeMap::new(),
        trends: BTreeMap::new(),
    };
    let mut cohort_means = BTreeMap::new();
    let mut profile_means = BTreeMap::new();
    for r in Representation::ALL {
        let of_repr: Vec<&(DistancePair, i64)> = scored.iter().filter(|(p, _)| p.representation == r).collect();
        let by_cohort = group_stats(of_repr.iter().map(|(p, _)| (p.delay_days, p.distance)), level);
        cohort_means.insert(
            r.to_string(),
            by_cohort
                .groups
                .iter()
                .map(|g| CohortMean {
                    delay_days: g.group.parse().expect("cohort labels are integers"),
                    n: g.n,
                    mean: g.mean,
                    ci_low: g.ci_low,
                    ci_high: g.ci_high,
                })
                .collect::<Vec<_>>(),
        );
        let by_profile = group_stats(of_repr.iter().map(|(p, _)| (p.profile, p.distance)), level);
        profile_means.insert(
            r.to_string(),
            by_profile.groups.iter().map(|g| (g.group.clone(), g.mean)).collect::<BTreeMap<_, _>>(),
        );
        let by_cp = group_stats(
            of_repr.iter().map(|(p, _)| (format!("{:03}:{}", p.delay_days, p.profile), p.distance)),
            level,
        );
        let points: Vec<(i64, f64)> = of_repr
            .iter()
            .filter(|(p, _)| p.delay_days == first_cohort)
            .map(|(p, t)| (*t, p.distance))
            .collect();
        let series = rolling_mean(&points, m.rolling_window_days, level);
        let trend = linear_trend(&series, m.filters.launch_exclusion);
        {
            let name = format!("series_{}", r.as_str());
            let mut w = outputs.create(&name, &format!("{name}.csv"))?;
            write_series_csv(&mut w, &series)?;
        }
        stats.by_cohort.insert(r.as_str(), by_cohort);
        stats.by_profile.insert(r.as_str(), by_profile);
        stats.by_cohort_profile.insert(r.as_str(), by_cp);
        stats.trends.insert(r.as_str(), trend);
    }
    outputs.json("stats", "stats.json", &stats)?;
    let trends: BTreeMap<String, Option<Trend>> = stats.trends.iter().map(|(k, v)| (k.to_string(), *v)).collect();

    enter("domains", stage);
    let domain_of_visit: HashMap<String, String> =
        visits.iter().map(|v| (v.visit_id.clone(), domain_of(&v.url))).collect();
    let cleaned: Vec<DistancePair> =
        pairs.iter().filter(|p| p.representation == Representation::CleanedText).cloned().collect();
    let domain_rows = domain_distance_table(&cleaned, &domain_of_visit);
    {
        let mut w = outputs.create("domains", "domains.csv")?;
        write_domain_csv(&mut w, &domain_rows)?;
    }

    enter("bias", stage);
    let spec = audit.classifier.clone().or_else(|| std::env::var(CLASSIFIER_ENV).ok());
    let adapter: Box<dyn ClassifierAdapter> = adapter_from_spec(spec.as_deref())?;
    let first_results: BTreeMap<&str, &ScrapeResult> = filtered
        .kept
        .iter()
        .filter(|(_, s)| s.delay_days == first_cohort)
        .map(|(v, s)| (v.visit_id.as_str(), s))
        .collect();
    let ex_cleaned: Vec<(String, String)> = first_results
        .par_iter()
        .map(|(id, s)| {
            let html: &[u8] = if s.status.is_failure() { &[] } else { &s.html };
            (id.to_string(), extract_all(html, &cache).by_repr[2].clone())
        })
        .collect();
    let ids: Vec<&str> = first_results.keys().copied().collect();
    let in_inputs: Vec<LabelInput<'_>> = ids
        .iter()
        .map(|id| LabelInput { visit_id: id, domain: &domain_of_visit[*id], text: &in_texts[id].by_repr[2] })
        .collect();
    let ex_inputs: Vec<LabelInput<'_>> = ex_cleaned
        .iter()
        .map(|(id, text)| LabelInput { visit_id: id, domain: &domain_of_visit[id], text })
        .collect();
    let in_labels = classify_content(&in_inputs, Side::InSitu, adapter.as_ref());
    let ex_labels = classify_content(&ex_inputs, Side::ExSitu, adapter.as_ref());
    {
        let mut w = outputs.create("labels", "bias/labels.csv")?;
        let all: Vec<_> = in_labels.iter().chain(&ex_labels).cloned().collect();
        write_labels_csv(&mut w, &all)?;
    }
    let base_plan = DebiasPlan::default();
    let flagged = flag_biased_categories(
        &compare_distributions(&distribution(&in_labels, &base_plan), &distribution(&ex_labels, &base_plan)),
        crate::bias::DEFAULT_RESIDUAL_LIMIT,
    );
    let strategies = match &audit.strategies {
        Some(s) => s.clone(),
        None => default_strategies(&domain_rows, &flagged),
    };
    let report: DebiasReport = run_debias_search(&in_labels, &ex_labels, &strategies)?;
    {
        let mut w = outputs.create("distributions", "bias/distributions.csv")?;
        write_distributions_csv(&mut w, &report)?;
    }
    let migration = migration_matrix(&in_labels, &ex_labels, 0.0);
    {
        let mut w = outputs.create("migration", "bias/migration.csv")?;
        write_migration_csv(&mut w, &migration)?;
    }
    outputs.json("debias", "bias/debias.json", &report)?;

    *stage = "summary";
    let debias = report
        .results
        .iter()
        .map(|r| PlanVerdict {
            name: r.plan.name.clone(),
            filter: r.plan.describe(),
            chi2: r.comparison.chi2,
            df: r.comparison.df,
            p: r.comparison.p,
            verdict: r.verdict,
        })
        .collect();
    outputs.files.insert("summary".into(), "summary.json".into());
    outputs.files.insert("stage".into(), "stage.json".into());
    outputs.files.insert("blobs_in_situ".into(), "blobs/in_situ".into());
    outputs.files.insert("blobs_ex_situ".into(), "blobs/ex_situ".into());
    outputs.files.insert("text_cache".into(), "text-cache".into());
    let summary = AuditSummary {
        seed: m.seed,
        confidence: m.confidence,
        delay_cohorts: audit.harness.delay_cohorts.clone(),
        classifier: adapter.name(),
        counts,
        warnings,
        cohort_means,
        profile_means,
        trends,
        error_ledger: ledger,
        flagged_categories: flagged.into_iter().collect(),
        debias,
        first_aligned: report.first_aligned.clone(),
        files: outputs.files.clone(),
    };
    outputs.json("summary", "summary.json", &summary)?;
    Ok(summary)
}

/// Threshold sweep, top-domain removal, fallback removal and removal of the
/// flagged categories, in that order.
pub fn default_strategies(domain_rows: &[crate::bias::DomainRow], flagged: &BTreeSet<String>) -> Vec<DebiasPlan> {
    let mut worst: Vec<&crate::bias::DomainRow> = domain_rows.iter().collect();
    worst.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.domain.cmp(&b.domain)));
    let top: BTreeSet<String> = worst.iter().take(2).map(|r| r.domain.clone()).collect();
    let mut plans: Vec<DebiasPlan> = [0.0, 0.5, 0.75]
        .into_iter()
        .map(|t| DebiasPlan { name: format!("threshold_{t}"), score_threshold: t, ..Default::default() })
        .collect();
    plans.push(DebiasPlan { name: "exclude_top_domains".into(), excluded_domains: top, ..Default::default() });
    plans.push(DebiasPlan {
        name: "exclude_fallback".into(),
        excluded_categories: [FALLBACK_CATEGORY.to_string()].into(),
        ..Default::default()
    });
    plans.push(DebiasPlan {
        name: "exclude_flagged".into(),
        excluded_categories: flagged.clone(),
        ..Default::default()
    });
    plans
}

/// Fetches a schedule, against an in-process simulator when a scenario is
/// given. Simulated time starts at `origin_ms`.
pub fn fetch_schedule(
    tasks: &[crate::harness::ScrapeTask],
    origin_ms: i64,
    config: &HarnessConfig,
    scenario: Option<&ScenarioConfig>,
) -> Result<crate::harness::FetchRun> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Http(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        match scenario {
            Some(s) => {
                let clock = SimClock::compressed(origin_ms, config.compression);
                let site = Arc::new(Site::new(s.clone())?);
                let server = serve(site, clock, SocketAddr::from(([127, 0, 0, 1], 0))).await?;
                let cfg = HarnessConfig { proxy: Some(server.proxy_url()), ..config.clone() };
                let run = run_fetches(tasks, &cfg, clock).await;
                server.shutdown().await;
                run
            }
            None => {
                let clock = if config.compression == 1.0 {
                    SimClock::realtime()
                } else {
                    SimClock::compressed(origin_ms, config.compression)
                };
                run_fetches(tasks, config, clock).await
            }
        }
    })
}

/// Writes a self-contained audit bundle for a simulator fixture: scenario,
/// visit log with HTML files, domain list, harness config and manifest.
pub fn write_fixture_bundle(fixture: &Fixture, dir: &Path, harness: &HarnessConfig, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("html")).map_err(|e| Error::io(dir, e))?;
    let visits = fixture.visits()?;
    let mut stored = Vec::with_capacity(visits.len());
    for v in visits {
        let HtmlRef::Inline(html) = &v.html else { unreachable!("synthesized visits carry inline html") };
        let rel = format!("html/{}.html", v.visit_id);
        std::fs::write(dir.join(&rel), html).map_err(|e| Error::io(dir.join(&rel), e))?;
        stored.push(VisitRecord { html: HtmlRef::Path(rel), ..v });
    }
    let write = |name: &str, bytes: Vec<u8>| std::fs::write(dir.join(name), bytes).map_err(|e| Error::io(dir.join(name), e));
    let mut log = Vec::new();
    write_visit_log(&mut log, &stored)?;
    write("visits.jsonl", log)?;
    let mut domains = String::from("domain,outlet_type\n");
    for (d, t) in &fixture.domains {
        let t = serde_json::to_value(t)?;
        domains.push_str(&format!("{d},{}\n", t.as_str().unwrap_or_default()));
    }
    write("domains.csv", domains.into_bytes())?;
    write("scenario.json", serde_json::to_vec_pretty(&fixture.scenario)?)?;
    write("plan.json", serde_json::to_vec_pretty(&fixture.plan)?)?;
    write("harness.json", serde_json::to_vec_pretty(harness)?)?;
    let manifest = AuditManifest {
        visit_log: "visits.jsonl".into(),
        domain_list: "domains.csv".into(),
        url_rules: None,
        harness_config: Some("harness.json".into()),
        debias_strategies: None,
        scenario: Some("scenario.json".into()),
        output_dir: "out".into(),
        seed,
        confidence: 0.95,
        filters: FilterConfig::default(),
        distance: DistanceOptions::default(),
        rolling_window_days: 7,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
