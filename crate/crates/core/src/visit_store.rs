//! In-situ visit logs: ingestion, validation and the pre-filters applied
//! before any comparison (refresh dedup, scrape-gap exclusion).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::harness::ScrapeResult;

const MS_PER_SEC: i64 = 1000;
const MS_PER_HOUR: i64 = 3_600_000;

/// Where the captured HTML of a visit lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HtmlRef {
    /// Path relative to the directory holding the visit log.
    Path(String),
    Inline(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitRecord {
    pub visit_id: String,
    pub participant_id: String,
    pub url: String,
    pub html: HtmlRef,
    /// Epoch milliseconds.
    pub visit_start: i64,
    /// Epoch milliseconds; the page-leave time.
    pub visit_end: i64,
}

impl VisitRecord {
    /// Loads the captured HTML. `base` is the visit log's directory.
    pub fn load_html(&self, base: &Path) -> Result<Vec<u8>> {
        match &self.html {
            HtmlRef::Inline(s) => Ok(s.as_bytes().to_vec()),
            HtmlRef::Path(rel) => {
                let path = base.join(rel);
                std::fs::read(&path).map_err(|e| Error::io(path, e))
            }
        }
    }

    /// Serializes to one visit-log line (no trailing newline).
    pub fn to_line(&self) -> String {
        let wire = WireVisit {
            visit_id: &self.visit_id,
            participant_id: &self.participant_id,
            url: &self.url,
            html_path: match &self.html {
                HtmlRef::Path(p) => Some(p),
                HtmlRef::Inline(_) => None,
            },
            html: match &self.html {
                HtmlRef::Inline(s) => Some(s),
                HtmlRef::Path(_) => None,
            },
            visit_start_ms: self.visit_start,
            visit_end_ms: self.visit_end,
        };
        serde_json::to_string(&wire).expect("visit record serializes")
    }
}

#[derive(Serialize)]
struct WireVisit<'a> {
    visit_id: &'a str,
    participant_id: &'a str,
    url: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    html_path: Option<&'a String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    html: Option<&'a String>,
    visit_start_ms: i64,
    visit_end_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct IngestOutcome {
    pub records: Vec<VisitRecord>,
    pub rejected: Vec<RejectedLine>,
}

/// Pre-filter settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Seconds, start-to-start.
    pub refresh_window: u64,
    /// Hours.
    pub max_scrape_gap: u64,
    /// Days masked at the start of a series for trend fits.
    pub launch_exclusion: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            refresh_window: 20,
            max_scrape_gap: 12,
            launch_exclusion: 3,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.refresh_window == 0 || self.max_scrape_gap == 0 || self.launch_exclusion == 0 {
            return Err(Error::Config(
                "filter settings must all be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

const KEYS: [&str; 7] = [
    "visit_id",
    "participant_id",
    "url",
    "html_path",
    "html",
    "visit_start_ms",
    "visit_end_ms",
];

fn string_field(obj: &Map<String, Value>, key: &str) -> Result<String, String> {
    match obj.get(key) {
        None => Err(format!("missing field: {key}")),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(format!("field {key} must be a string")),
    }
}

fn int_field(obj: &Map<String, Value>, key: &str) -> Result<i64, String> {
    match obj.get(key) {
        None => Err(format!("missing field: {key}")),
        Some(v) => v
            .as_i64()
            .ok_or_else(|| format!("field {key} must be an integer")),
    }
}

fn parse_line(text: &str) -> Result<VisitRecord, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("invalid json: {e}"))?;
    let obj = value
        .as_object()
        .ok_or_else(|| "line is not a JSON object".to_string())?;
    if let Some(unknown) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(format!("unknown field: {unknown}"));
    }
    let visit_id = string_field(obj, "visit_id")?;
    let participant_id = string_field(obj, "participant_id")?;
    let url = string_field(obj, "url")?;
    // html_path / html are checked after the required scalar fields so that
    // the most common schema slip (a missing url) is what gets reported.
    let html = match (obj.contains_key("html_path"), obj.contains_key("html")) {
        (true, false) => HtmlRef::Path(string_field(obj, "html_path")?),
        (false, true) => HtmlRef::Inline(string_field(obj, "html")?),
        (true, true) => return Err("exactly one of html_path or html must be present".into()),
        (false, false) => return Err("missing field: html_path or html".into()),
    };
    let visit_start = int_field(obj, "visit_start_ms")?;
    let visit_end = int_field(obj, "visit_end_ms")?;
    if visit_id.is_empty() {
        return Err("visit_id must not be empty".into());
    }
    if visit_end < visit_start {
        return Err("visit_end_ms precedes visit_start_ms".into());
    }
    match url::Url::parse(&url) {
        Ok(u) if u.scheme() == "http" || u.scheme() == "https" => {}
        Ok(u) => return Err(format!("unsupported url scheme: {}", u.scheme())),
        Err(e) => return Err(format!("invalid url: {e}")),
    }
    Ok(VisitRecord {
        visit_id,
        participant_id,
        url,
        html,
        visit_start,
        visit_end,
    })
}

/// Reads a JSON Lines visit log.
///
/// Blank lines are ignored. In strict mode the first rejection aborts with
/// [`Error::Rejected`]; otherwise rejected lines are collected and skipped.
pub fn ingest_visit_log<R: BufRead>(source: R, strict: bool) -> Result<IngestOutcome> {
    let mut out = IngestOutcome::default();
    let mut seen = HashSet::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_line(&line).and_then(|rec| {
            if seen.contains(&rec.visit_id) {
                Err(format!("duplicate visit_id: {}", rec.visit_id))
            } else {
                Ok(rec)
            }
        });
        match parsed {
            Ok(rec) => {
                seen.insert(rec.visit_id.clone());
                out.records.push(rec);
            }
            Err(reason) if strict => {
                return Err(Error::Rejected {
                    line: line_no,
                    reason,
                })
            }
            Err(reason) => out.rejected.push(RejectedLine {
                line: line_no,
                reason,
            }),
        }
    }
    Ok(out)
}

pub fn ingest_visit_file(path: &Path, strict: bool) -> Result<IngestOutcome> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_visit_log(std::io::BufReader::new(file), strict)
}

pub fn write_visit_log<W: Write>(mut sink: W, visits: &[VisitRecord]) -> Result<()> {
    for v in visits {
        writeln!(sink, "{}", v.to_line())?;
    }
    Ok(())
}

pub fn write_rejections<W: Write>(mut sink: W, rejected: &[RejectedLine]) -> Result<()> {
    for r in rejected {
        writeln!(sink, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

fn by_start(a: &VisitRecord, b: &VisitRecord) -> std::cmp::Ordering {
    a.visit_start
        .cmp(&b.visit_start)
        .then_with(|| a.visit_id.cmp(&b.visit_id))
}

/// Collapses page refreshes.
///
/// Within each `(participant, url)` group, visits whose consecutive
/// start-to-start gap is at most `window` seconds form a chain; only the
/// chain's last visit survives. Output is ordered by `visit_start`.
pub fn dedup_refreshes(visits: &[VisitRecord], window: u64) -> Vec<VisitRecord> {
    let window_ms = window as i64 * MS_PER_SEC;
    let mut groups: BTreeMap<(&str, &str), Vec<&VisitRecord>> = BTreeMap::new();
    for v in visits {
        groups
            .entry((v.participant_id.as_str(), v.url.as_str()))
            .or_default()
            .push(v);
    }
    let mut survivors = Vec::with_capacity(visits.len());
    for group in groups.values_mut() {
        group.sort_by(|a, b| by_start(a, b));
        for (i, v) in group.iter().enumerate() {
            let continues = group
                .get(i + 1)
                .is_some_and(|next| next.visit_start - v.visit_start <= window_ms);
            if !continues {
                survivors.push((*v).clone());
            }
        }
    }
    survivors.sort_by(by_start);
    survivors
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefreshTuning {
    pub chosen: u64,
    /// `(candidate seconds, mean distance after dedup)` in candidate order.
    pub table: Vec<(u64, f64)>,
}

/// Picks the dedup window minimising the mean distance of surviving visits.
/// Ties go to the smaller window.
pub fn tune_refresh_threshold(
    visits: &[VisitRecord],
    distances_by_visit: &HashMap<String, f64>,
    candidates: &[u64],
) -> Result<RefreshTuning> {
    if candidates.is_empty() {
        return Err(Error::Invalid("no refresh-window candidates given".into()));
    }
    let mut table = Vec::with_capacity(candidates.len());
    for &candidate in candidates {
        let survivors = dedup_refreshes(visits, candidate);
        let mut sum = 0.0;
        for v in &survivors {
            let d = distances_by_visit.get(&v.visit_id).ok_or_else(|| {
                Error::Invalid(format!(
                    "no distance recorded for visit {}; the run used a larger refresh window than {candidate} s",
                    v.visit_id
                ))
            })?;
            sum += d;
        }
        let mean = if survivors.is_empty() {
            0.0
        } else {
            sum / survivors.len() as f64
        };
        table.push((candidate, mean));
    }
    let mut best = table[0];
    for &(c, m) in &table[1..] {
        if m < best.1 || (m == best.1 && c < best.0) {
            best = (c, m);
        }
    }
    Ok(RefreshTuning {
        chosen: best.0,
        table,
    })
}

#[derive(Debug)]
pub struct GapFiltered {
    pub kept: Vec<(VisitRecord, ScrapeResult)>,
    pub removed: usize,
}

/// Drops 0-delay pairs whose fetch happened more than `max_gap` hours away
/// from the page-leave time. Delayed cohorts pass through unchanged.
pub fn filter_scrape_gap(pairs: Vec<(VisitRecord, ScrapeResult)>, max_gap: u64) -> GapFiltered {
    let limit = max_gap as i64 * MS_PER_HOUR;
    let before = pairs.len();
    let kept: Vec<_> = pairs
        .into_iter()
        .filter(|(visit, scrape)| {
            scrape.delay_days != 0 || (scrape.fetch_time - visit.visit_end).abs() <= limit
        })
        .collect();
    GapFiltered {
        removed: before - kept.len(),
        kept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{FetchStatus, ProfileId};

    fn visit(id: &str, participant: &str, url: &str, start_s: i64) -> VisitRecord {
        VisitRecord {
            visit_id: id.into(),
            participant_id: participant.into(),
            url: url.into(),
            html: HtmlRef::Inline(String::new()),
            visit_start: start_s * 1000,
            visit_end: start_s * 1000 + 5000,
        }
    }

    fn line(id: &str) -> String {
        format!(
            r#"{{"visit_id":"{id}","participant_id":"p1","url":"https://example.com/a-b","html":"<p>x</p>","visit_start_ms":1,"visit_end_ms":2}}"#
        )
    }

    #[test]
    fn ingest_valid_log() {
        let log = format!("{}\n{}\n{}\n", line("a"), line("b"), line("c"));
        let out = ingest_visit_log(log.as_bytes(), false).unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(out.rejected.is_empty());
    }

    #[test]
    fn ingest_missing_url() {
        let log = r#"{"visit_id":"a","participant_id":"p","html":"","visit_start_ms":1,"visit_end_ms":2}"#;
        let out = ingest_visit_log(log.as_bytes(), false).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(
            out.rejected,
            vec![RejectedLine {
                line: 1,
                reason: "missing field: url".into()
            }]
        );
    }

    #[test]
    fn ingest_duplicate_ids() {
        let log = format!("{}\n{}\n", line("a"), line("a"));
        let out = ingest_visit_log(log.as_bytes(), false).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].line, 2);

        let err = ingest_visit_log(log.as_bytes(), true).unwrap_err();
        assert!(matches!(err, Error::Rejected { line: 2, .. }));
    }

    #[test]
    fn ingest_schema_errors() {
        let cases = [
            (r#"not json"#, "invalid json"),
            (r#"[1,2]"#, "line is not a JSON object"),
            (
                r#"{"visit_id":"a","participant_id":"p","url":"ftp://x.org/a","html":"","visit_start_ms":1,"visit_end_ms":2}"#,
                "unsupported url scheme: ftp",
            ),
            (
                r#"{"visit_id":"a","participant_id":"p","url":"https://x.org/a","html":"","html_path":"b","visit_start_ms":1,"visit_end_ms":2}"#,
                "exactly one of html_path or html must be present",
            ),
            (
                r#"{"visit_id":"a","participant_id":"p","url":"https://x.org/a","html":"","visit_start_ms":5,"visit_end_ms":2}"#,
                "visit_end_ms precedes visit_start_ms",
            ),
            (
                r#"{"visit_id":"a","participant_id":"p","url":"https://x.org/a","html":"","visit_start_ms":1,"visit_end_ms":2,"extra":1}"#,
                "unknown field: extra",
            ),
        ];
        for (text, expected) in cases {
            let out = ingest_visit_log(text.as_bytes(), false).unwrap();
            assert!(
                out.rejected[0].reason.starts_with(expected),
                "{text}: {}",
                out.rejected[0].reason
            );
        }
    }

    #[test]
    fn ingest_serialize_ingest_is_stable() {
        let log = format!(
            "{}\n{}\n",
            line("a"),
            r#"{"visit_id":"b","participant_id":"p","url":"https://x.org/a","html_path":"blobs/ab.html","visit_start_ms":1,"visit_end_ms":2}"#
        );
        let first = ingest_visit_log(log.as_bytes(), true).unwrap().records;
        let mut buf = Vec::new();
        write_visit_log(&mut buf, &first).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), log);
        let second = ingest_visit_log(buf.as_slice(), true).unwrap().records;
        assert_eq!(first, second);
    }

    #[test]
    fn dedup_collapses_within_window() {
        let v = vec![
            visit("a", "p", "u", 0),
            visit("b", "p", "u", 10),
        ];
        let out = dedup_refreshes(&v, 20);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].visit_id, "b");
    }

    #[test]
    fn dedup_keeps_beyond_window_and_other_participants() {
        let v = vec![visit("a", "p", "u", 0), visit("b", "p", "u", 25)];
        assert_eq!(dedup_refreshes(&v, 20).len(), 2);
        let v = vec![visit("a", "p", "u", 0), visit("b", "q", "u", 5)];
        assert_eq!(dedup_refreshes(&v, 20).len(), 2);
    }

    #[test]
    fn dedup_chains_are_transitive() {
        let v = vec![
            visit("a", "p", "u", 0),
            visit("b", "p", "u", 15),
            visit("c", "p", "u", 30),
            visit("d", "p", "u", 100),
        ];
        let ids: Vec<_> = dedup_refreshes(&v, 20)
            .into_iter()
            .map(|v| v.visit_id)
            .collect();
        assert_eq!(ids, ["c", "d"]);
    }

    #[test]
    fn tune_prefers_smaller_on_ties_and_rejects_empty() {
        let v = vec![visit("a", "p", "u", 0), visit("b", "p", "u", 100)];
        let d: HashMap<_, _> = [("a".to_string(), 0.5), ("b".to_string(), 0.5)].into();
        let t = tune_refresh_threshold(&v, &d, &[30, 10, 20]).unwrap();
        assert_eq!(t.chosen, 10);
        assert_eq!(tune_refresh_threshold(&v, &d, &[7]).unwrap().chosen, 7);
        assert!(tune_refresh_threshold(&v, &d, &[]).is_err());
    }

    #[test]
    fn tune_reports_missing_distance() {
        let v = vec![visit("a", "p", "u", 0)];
        assert!(tune_refresh_threshold(&v, &HashMap::new(), &[10]).is_err());
    }

    fn scrape(delay_days: u32, fetch_time: i64) -> ScrapeResult {
        ScrapeResult {
            visit_id: "a".into(),
            profile: ProfileId::A,
            delay_days,
            fetch_time,
            status: FetchStatus::Http(200),
            final_url: String::new(),
            html: Vec::new(),
        }
    }

    #[test]
    fn gap_filter_boundaries() {
        let v = visit("a", "p", "u", 0);
        let end = v.visit_end;
        let hour = MS_PER_HOUR;
        let minute = 60_000;
        let cases = [
            (end + 12 * hour - minute, 0),
            (end + 12 * hour + minute, 1),
            (end + 12 * hour, 0),
            (end - 12 * hour - minute, 1),
        ];
        for (fetch, removed) in cases {
            let out = filter_scrape_gap(vec![(v.clone(), scrape(0, fetch))], 12);
            assert_eq!(out.removed, removed, "fetch at {fetch}");
        }
        // delayed cohorts are anchored to their schedule, not this gap
        let out = filter_scrape_gap(vec![(v.clone(), scrape(30, end + 40 * 24 * hour))], 12);
        assert_eq!(out.removed, 0);
    }
}
