use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLASSIFIER_ERROR: &str = "classifier_error";
pub const CLASSIFIER_ENV: &str = "SCRAPE_AUDIT_CLASSIFIER";

const DEFAULT_KEYWORDS: &str = include_str!("../../data/classifier/baseline_keywords.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub id: String,
    pub category: String,
    pub score: f64,
}

/// Maps texts to `(category, score)`. Implementations return one entry per
/// request in request order; `None` marks a failed call.
pub trait ClassifierAdapter: Send + Sync {
    fn name(&self) -> String;
    fn classify_batch(&self, requests: &[ClassifyRequest]) -> Vec<Option<(String, f64)>>;
}

/// Keyword-frequency classifier.
///
/// The category with the most keyword hits wins (ties broken by name);
/// its score is `best / (total + 2)`. Texts whose best category has fewer
/// than `min_hits` hits fall back to `fallback` with score
/// `0.1 + 0.05 * best`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineKeywordClassifier {
    pub fallback: String,
    pub min_hits: usize,
    pub categories: BTreeMap<String, Vec<String>>,
}

impl Default for BaselineKeywordClassifier {
    fn default() -> Self {
        Self::from_json(DEFAULT_KEYWORDS).expect("embedded keywords are valid")
    }
}

impl BaselineKeywordClassifier {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        if c.categories.is_empty() {
            return Err(Error::Config("classifier needs at least one category".into()));
        }
        Ok(c)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str).chain(std::iter::once(self.fallback.as_str()))
    }

    pub fn classify(&self, text: &str) -> (String, f64) {
        let mut index: HashMap<&str, Vec<&str>> = HashMap::new();
        for (cat, words) in &self.categories {
            for w in words {
                index.entry(w.as_str()).or_default().push(cat.as_str());
            }
        }
        let mut hits: BTreeMap<&str, usize> = BTreeMap::new();
        let lower = text.to_lowercase();
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            if let Some(cats) = index.get(token) {
                for c in cats {
                    *hits.entry(c).or_insert(0) += 1;
                }
            }
        }
        let total: usize = hits.values().sum();
        let mut best: Option<(&str, usize)> = None;
        for (cat, n) in &hits {
            if best.is_none_or(|(_, b)| *n > b) {
                best = Some((cat, *n));
            }
        }
        match best {
            Some((cat, n)) if n >= self.min_hits => (cat.to_string(), n as f64 / (total + 2) as f64),
            other => {
                let n = other.map_or(0, |(_, n)| n);
                (self.fallback.clone(), 0.1 + 0.05 * n as f64)
            }
        }
    }

    /// Answers request lines on `input` with response lines on `output`.
    pub fn serve_lines<R: BufRead, W: Write>(&self, input: R, mut output: W) -> Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let req: ClassifyRequest = serde_json::from_str(&line)?;
            let (category, score) = self.classify(&req.text);
            let resp = ClassifyResponse { id: req.id, category, score };
            writeln!(output, "{}", serde_json::to_string(&resp)?)?;
            output.flush()?;
        }
        Ok(())
    }
}

impl ClassifierAdapter for BaselineKeywordClassifier {
    fn name(&self) -> String {
        "baseline-keywords".into()
    }

    fn classify_batch(&self, requests: &[ClassifyRequest]) -> Vec<Option<(String, f64)>> {
        requests.par_iter().map(|r| Some(self.classify(&r.text))).collect()
    }
}

fn valid_response(resp: &ClassifyResponse) -> bool {
    !resp.category.is_empty() && (0.0..=1.0).contains(&resp.score)
}

/// Talks the line protocol with a child process over its standard streams.
/// Responses may arrive in any order.
#[derive(Debug, Clone)]
pub struct ProcessAdapter {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl ProcessAdapter {
    /// Splits a command line on whitespace.
    pub fn from_command_line(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace().map(String::from);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("classifier command is empty".into()))?;
        Ok(Self { program, args: parts.collect(), timeout: Duration::from_secs(120) })
    }

    fn run(&self, requests: &[ClassifyRequest]) -> Result<HashMap<String, (String, f64)>> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Http(format!("cannot start classifier {}: {e}", self.program)))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let lines: Vec<String> = requests
            .iter()
            .map(|r| serde_json::to_string(r).expect("request serializes"))
            .collect();
        let writer = std::thread::spawn(move || {
            for l in lines {
                if writeln!(stdin, "{l}").is_err() {
                    break;
                }
            }
        });

        let (tx, rx) = mpsc::channel::<String>();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        let wanted: HashSet<&str> = requests.iter().map(|r| r.id.as_str()).collect();
        let mut got = HashMap::new();
        let deadline = Instant::now() + self.timeout;
        while got.len() < wanted.len() {
            let left = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(left) {
                Ok(line) => match serde_json::from_str::<ClassifyResponse>(&line) {
                    Ok(resp) if wanted.contains(resp.id.as_str()) && valid_response(&resp) => {
                        got.insert(resp.id, (resp.category, resp.score));
                    }
                    _ => log::warn!("classifier sent an unusable line: {line}"),
                },
                Err(_) => break,
            }
        }
        let _ = writer.join();
        let _ = child.kill();
        let _ = child.wait();
        Ok(got)
    }
}

impl ClassifierAdapter for ProcessAdapter {
    fn name(&self) -> String {
        format!("process:{}", self.program)
    }

    fn classify_batch(&self, requests: &[ClassifyRequest]) -> Vec<Option<(String, f64)>> {
        match self.run(requests) {
            Ok(mut got) => requests.iter().map(|r| got.remove(&r.id)).collect(),
            Err(e) => {
                log::error!("{e}");
                vec![None; requests.len()]
            }
        }
    }
}

/// POSTs each request as JSON and reads one JSON response.
#[derive(Debug, Clone)]
pub struct HttpAdapter {
    pub url: String,
    pub timeout: Duration,
}

impl HttpAdapter {
    pub fn new(url: &str) -> Self {
        Self { url: url.to_string(), timeout: Duration::from_secs(30) }
    }
}

impl ClassifierAdapter for HttpAdapter {
    fn name(&self) -> String {
        format!("http:{}", self.url)
    }

    fn classify_batch(&self, requests: &[ClassifyRequest]) -> Vec<Option<(String, f64)>> {
        let client = match reqwest::blocking::Client::builder().timeout(self.timeout).no_proxy().build() {
            Ok(c) => c,
            Err(e) => {
                log::error!("classifier client: {e}");
                return vec![None; requests.len()];
            }
        };
        requests
            .iter()
            .map(|r| {
                let resp = client.post(&self.url).json(r).send().ok()?;
                let body: ClassifyResponse = resp.error_for_status().ok()?.json().ok()?;
                (body.id == r.id && valid_response(&body)).then_some((body.category, body.score))
            })
            .collect()
    }
}

/// Adapter selected by a command line or URL; `None` selects the baseline.
pub fn adapter_from_spec(spec: Option<&str>) -> Result<Box<dyn ClassifierAdapter>> {
    match spec.map(str::trim).filter(|s| !s.is_empty()) {
        None => Ok(Box::new(BaselineKeywordClassifier::default())),
        Some(s) if s.starts_with("http://") || s.starts_with("https://") => Ok(Box::new(HttpAdapter::new(s))),
        Some(s) => Ok(Box::new(ProcessAdapter::from_command_line(s)?)),
    }
}
