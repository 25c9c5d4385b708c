//! News-URL taxonomy: outlet domain matching, homepage / leaf-page
//! heuristics, keyword exclusions, path categories and evaluation against a
//! labeled corpus.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::error::{Error, Result};

const DEFAULT_RULES: &str = include_str!("../data/rules/default_rules.json");

pub const UNCATEGORIZED: &str = "uncategorized";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutletType {
    CommercialBroadcasting,
    DigitalBorn,
    Hyperpartisan,
    LegacyPress,
    PublicBroadcasting,
    Tabloid,
    PortalNews,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DomainList {
    entries: BTreeMap<String, OutletType>,
}

#[derive(Debug, Deserialize)]
struct DomainRow {
    domain: String,
    outlet_type: OutletType,
}

impl DomainList {
    pub fn new(entries: impl IntoIterator<Item = (String, OutletType)>) -> Result<Self> {
        let mut list = Self::default();
        for (domain, outlet) in entries {
            list.insert(domain, outlet)?;
        }
        Ok(list)
    }

    fn insert(&mut self, domain: String, outlet: OutletType) -> Result<()> {
        let valid = !domain.is_empty()
            && domain == domain.to_lowercase()
            && !domain.contains("://")
            && !domain.contains('/')
            && !domain.contains(':');
        if !valid {
            return Err(Error::Invalid(format!(
                "domain entry {domain:?} must be a lowercase bare host"
            )));
        }
        if self.entries.insert(domain.clone(), outlet).is_some() {
            return Err(Error::Invalid(format!("duplicate domain entry {domain}")));
        }
        Ok(())
    }

    /// Parses CSV with header `domain,outlet_type`.
    pub fn from_csv<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(source);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["domain", "outlet_type"] {
            return Err(Error::Invalid(
                "domain list header must be \"domain,outlet_type\"".into(),
            ));
        }
        let mut list = Self::default();
        for row in reader.deserialize::<DomainRow>() {
            let row = row?;
            list.insert(row.domain.trim().to_string(), row.outlet_type)?;
        }
        Ok(list)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(file)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Most specific entry equal to `host` or a suffix of it at a label
    /// boundary.
    pub fn lookup_host(&self, host: &str) -> Option<(&str, OutletType)> {
        let mut candidate = host;
        loop {
            if let Some((k, v)) = self.entries.get_key_value(candidate) {
                return Some((k.as_str(), *v));
            }
            match candidate.split_once('.') {
                Some((_, rest)) if !rest.is_empty() => candidate = rest,
                _ => return None,
            }
        }
    }
}

/// Lenient URL parse: scheme-less inputs such as `example.com/a` are read
/// as `http://example.com/a`.
pub fn parse_url(raw: &str) -> Option<Url> {
    let raw = raw.trim();
    let parsed = if raw.contains("://") {
        Url::parse(raw)
    } else {
        Url::parse(&format!("http://{raw}"))
    };
    parsed
        .ok()
        .filter(|u| u.host_str().is_some_and(|h| !h.is_empty()))
}

/// Lowercased host without `www.` and without port.
pub fn normalized_host(url: &Url) -> Option<String> {
    let host = url.host_str()?.to_lowercase();
    Some(host.strip_prefix("www.").unwrap_or(&host).to_string())
}

/// eTLD+1 via the bundled public-suffix list, falling back to the last two
/// labels.
pub fn registrable_domain(host: &str) -> String {
    let host = host.trim_end_matches('.').to_lowercase();
    if let Some(domain) = psl::domain_str(&host) {
        return domain.to_string();
    }
    let labels: Vec<&str> = host.split('.').collect();
    if labels.len() <= 2 {
        host
    } else {
        labels[labels.len() - 2..].join(".")
    }
}

/// Registrable domain of a URL string, or the raw input when unparseable.
pub fn domain_of(url: &str) -> String {
    parse_url(url)
        .and_then(|u| normalized_host(&u))
        .map(|h| registrable_domain(&h))
        .unwrap_or_else(|| url.to_string())
}

pub fn match_news_domain(url: &str, domains: &DomainList) -> Option<OutletType> {
    let Some(parsed) = parse_url(url) else {
        log::debug!("unparseable url {url:?}: no domain match");
        return None;
    };
    let host = normalized_host(&parsed)?;
    domains.lookup_host(&host).map(|(_, outlet)| outlet)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UrlRules {
    /// keyword → reason; iteration order is rule order.
    pub exclusion_keywords: IndexMap<String, String>,
    /// keyword → category.
    pub category_keywords: IndexMap<String, String>,
    pub homepage_keywords: Vec<String>,
    pub min_digit_run: usize,
    pub min_slug_tokens: usize,
}

impl Default for UrlRules {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_RULES).expect("bundled rules parse")
    }
}

impl UrlRules {
    pub fn from_json(text: &str) -> Result<Self> {
        let rules: Self = serde_json::from_str(text)?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let keywords = self
            .exclusion_keywords
            .keys()
            .chain(self.category_keywords.keys())
            .chain(self.homepage_keywords.iter());
        for k in keywords {
            if k.is_empty() || *k != k.to_lowercase() {
                return Err(Error::Invalid(format!(
                    "rule keyword {k:?} must be lowercase and non-empty"
                )));
            }
        }
        if self.category_keywords.values().any(|c| c.is_empty()) {
            return Err(Error::Invalid("empty category name in rules".into()));
        }
        Ok(())
    }

    /// The closed category set declared by the rules.
    pub fn categories(&self) -> BTreeSet<&str> {
        self.category_keywords.values().map(String::as_str).collect()
    }
}

fn path_segments(url: &Url) -> Vec<String> {
    url.path_segments()
        .map(|segs| {
            segs.filter(|s| !s.is_empty())
                .map(|s| s.to_lowercase())
                .collect()
        })
        .unwrap_or_default()
}

/// Removes a trailing file extension such as `.html` or `.php`.
fn strip_extension(segment: &str) -> &str {
    match segment.rsplit_once('.') {
        Some((stem, ext))
            if !stem.is_empty()
                && (1..=5).contains(&ext.len())
                && ext.chars().all(|c| c.is_ascii_alphabetic()) =>
        {
            stem
        }
        _ => segment,
    }
}

fn longest_digit_run(s: &str) -> usize {
    let mut best = 0;
    let mut run = 0;
    for c in s.chars() {
        if c.is_ascii_digit() {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

fn homepage_path(segments: &[String], rules: &UrlRules) -> bool {
    match segments {
        [] => true,
        [only] => {
            let stem = strip_extension(only);
            rules.homepage_keywords.iter().any(|k| k == stem)
        }
        _ => false,
    }
}

fn leaf_segment(segment: &str, rules: &UrlRules) -> bool {
    let stem = strip_extension(segment);
    let tokens: Vec<&str> = stem.split('-').filter(|t| !t.is_empty()).collect();
    let alphabetic = tokens
        .iter()
        .filter(|t| t.chars().all(char::is_alphabetic))
        .count();
    let slug = tokens.len() >= rules.min_slug_tokens && alphabetic >= 2;
    slug || longest_digit_run(stem) >= rules.min_digit_run
}

pub fn is_homepage(url: &str, rules: &UrlRules) -> bool {
    parse_url(url).is_some_and(|u| homepage_path(&path_segments(&u), rules))
}

/// True for slug-like or long-number final segments. A homepage is never a
/// leaf.
pub fn is_leaf_page(url: &str, rules: &UrlRules) -> bool {
    let Some(u) = parse_url(url) else {
        return false;
    };
    let segments = path_segments(&u);
    if homepage_path(&segments, rules) {
        return false;
    }
    segments.last().is_some_and(|s| leaf_segment(s, rules))
}

/// First exclusion keyword found, by path position and then rule order.
/// Matches whole segments (extension stripped) or dash-delimited tokens.
pub fn exclusion_reason(url: &str, rules: &UrlRules) -> Option<(String, String)> {
    let u = parse_url(url)?;
    for segment in path_segments(&u) {
        let stem = strip_extension(&segment);
        let candidates: Vec<&str> = std::iter::once(stem)
            .chain(stem.split('-').filter(|t| !t.is_empty()))
            .collect();
        for (keyword, reason) in &rules.exclusion_keywords {
            if candidates.iter().any(|c| c == keyword) {
                return Some((keyword.clone(), reason.clone()));
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArticleDecision {
    pub is_article: bool,
    pub reasons: Vec<String>,
}

pub fn identify_article(url: &str, domains: &DomainList, rules: &UrlRules) -> ArticleDecision {
    let Some(parsed) = parse_url(url) else {
        return ArticleDecision {
            is_article: false,
            reasons: vec!["invalid_url".into()],
        };
    };
    let mut reasons = Vec::new();
    let news = normalized_host(&parsed).is_some_and(|h| domains.lookup_host(&h).is_some());
    if !news {
        reasons.push("not_news_domain".to_string());
    }
    let segments = path_segments(&parsed);
    if homepage_path(&segments, rules) {
        reasons.push("homepage".into());
    } else if !segments.last().is_some_and(|s| leaf_segment(s, rules)) {
        reasons.push("not_leaf".into());
    }
    if let Some((keyword, _)) = exclusion_reason(url, rules) {
        reasons.push(format!("excluded:{keyword}"));
    }
    ArticleDecision {
        is_article: reasons.is_empty(),
        reasons,
    }
}

/// Categories whose keyword is a full path segment. The final segment is
/// skipped when it is an article slug.
pub fn categorize_by_path(url: &str, rules: &UrlRules) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    if let Some(u) = parse_url(url) {
        let mut segments = path_segments(&u);
        if segments.last().is_some_and(|s| leaf_segment(s, rules)) {
            segments.pop();
        }
        for seg in &segments {
            if let Some(cat) = rules.category_keywords.get(strip_extension(seg)) {
                out.insert(cat.clone());
            }
        }
    }
    if out.is_empty() {
        out.insert(UNCATEGORIZED.to_string());
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Confusion {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: f64,
}

impl Confusion {
    fn add(&mut self, gold: bool, predicted: bool, weight: f64) {
        match (gold, predicted) {
            (true, true) => self.tp += weight,
            (false, true) => self.fp += weight,
            (true, false) => self.fn_ += weight,
            (false, false) => self.tn += weight,
        }
    }

    pub fn total(&self) -> f64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `None` when nothing was predicted positive.
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0.0).then(|| self.tp / d)
    }

    /// `None` when the corpus has no positives.
    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0.0).then(|| self.tp / d)
    }

    pub fn f1(&self) -> f64 {
        let p = self.precision().unwrap_or(0.0);
        let r = self.recall().unwrap_or(0.0);
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
    pub weighted_precision: Option<f64>,
    pub weighted_recall: Option<f64>,
    pub weighted_f1: f64,
    pub confusion: Confusion,
    pub weighted_confusion: Confusion,
    /// Rule tag → (non-article decisions carrying it, of which gold articles).
    pub failures_by_rule: BTreeMap<String, (usize, usize)>,
}

/// Scores the article identifier against gold labels.
///
/// Weighted metrics give each URL a weight proportional to its domain's
/// frequency in `domain_freq`, normalised so weights sum to the corpus size.
/// Without frequencies every URL weighs 1.
pub fn evaluate_identifier(
    labeled: &[(String, bool)],
    domain_freq: Option<&HashMap<String, f64>>,
    domains: &DomainList,
    rules: &UrlRules,
) -> Result<EvalReport> {
    if labeled.is_empty() {
        return Err(Error::Invalid("labeled corpus is empty".into()));
    }
    let raw_weights: Vec<f64> = match domain_freq {
        None => vec![1.0; labeled.len()],
        Some(freq) => labeled
            .iter()
            .map(|(url, _)| freq.get(&domain_of(url)).copied().unwrap_or(0.0))
            .collect(),
    };
    let total: f64 = raw_weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Invalid(
            "domain frequencies give every labeled URL zero weight".into(),
        ));
    }
    let scale = labeled.len() as f64 / total;

    let mut plain = Confusion::default();
    let mut weighted = Confusion::default();
    let mut failures_by_rule: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ((url, gold), w) in labeled.iter().zip(&raw_weights) {
        let decision = identify_article(url, domains, rules);
        plain.add(*gold, decision.is_article, 1.0);
        weighted.add(*gold, decision.is_article, w * scale);
        for reason in &decision.reasons {
            let tag = reason.split(':').next().unwrap_or(reason).to_string();
            let entry = failures_by_rule.entry(tag).or_default();
            entry.0 += 1;
            if *gold {
                entry.1 += 1;
            }
        }
    }
    Ok(EvalReport {
        n: labeled.len(),
        precision: plain.precision(),
        recall: plain.recall(),
        f1: plain.f1(),
        weighted_precision: weighted.precision(),
        weighted_recall: weighted.recall(),
        weighted_f1: weighted.f1(),
        confusion: plain,
        weighted_confusion: weighted,
        failures_by_rule,
    })
}

#[derive(Debug, Deserialize)]
struct LabeledRow {
    url: String,
    is_article: String,
}

/// Parses CSV with header `url,is_article` (`true`/`false` or `1`/`0`).
pub fn read_labeled_corpus<R: Read>(source: R) -> Result<Vec<(String, bool)>> {
    let mut reader = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<LabeledRow>().enumerate() {
        let row = row?;
        let label = match row.is_article.trim().to_lowercase().as_str() {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            other => {
                return Err(Error::Invalid(format!(
                    "row {}: is_article must be boolean, got {other:?}",
                    i + 2
                )))
            }
        };
        out.push((row.url, label));
    }
    Ok(out)
}

/// Parses CSV with header `domain,count`.
pub fn read_domain_freq<R: Read>(source: R) -> Result<HashMap<String, f64>> {
    #[derive(Deserialize)]
    struct Row {
        domain: String,
        count: f64,
    }
    let mut reader = csv::Reader::from_reader(source);
    let mut out = HashMap::new();
    for row in reader.deserialize::<Row>() {
        let row = row?;
        *out.entry(row.domain.to_lowercase()).or_insert(0.0) += row.count;
    }
    Ok(out)
}
