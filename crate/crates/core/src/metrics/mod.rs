//! Content-divergence metrics and the statistics reported on top of them.

mod levenshtein;
pub mod stats;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use levenshtein::{levenshtein, levenshtein_chars};
pub use stats::{
    chi_square_independence, chi_square_sf, group_stats, holm_adjust, mean_var, pearson, welch_test,
    ChiSquare, Correlation, GroupReport, PairwiseRow, StatsSummary,
};

use crate::error::Result;
use crate::extraction::{extract_bytes, Representation};
use crate::harness::{ProfileId, ScrapeResult};

pub const MS_PER_DAY: i64 = 86_400_000;

/// Edit distance divided by the longer text's length, in `[0, 1]`.
/// Two empty texts are at distance 0.
pub fn normalized_distance(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    normalized_chars(&a, &b)
}

fn normalized_chars(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    levenshtein_chars(a, b) as f64 / longest as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceOptions {
    /// Truncate both texts to this many characters before comparing.
    pub max_chars: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistancePair {
    pub visit_id: String,
    pub representation: Representation,
    pub delay_days: u32,
    pub profile: ProfileId,
    pub distance: f64,
    pub in_len: usize,
    pub ex_len: usize,
    #[serde(skip)]
    pub truncated: bool,
}

/// Compares one visit's captured HTML with one ex-situ fetch. A failed
/// fetch contributes empty text.
pub fn pair_distance(
    visit_id: &str,
    in_situ_html: &[u8],
    scrape: &ScrapeResult,
    representation: Representation,
    options: DistanceOptions,
) -> DistancePair {
    let ex_html: &[u8] = if scrape.status.is_failure() {
        &[]
    } else {
        &scrape.html
    };
    let mut a: Vec<char> = extract_bytes(in_situ_html, representation).chars().collect();
    let mut b: Vec<char> = extract_bytes(ex_html, representation).chars().collect();
    let (in_len, ex_len) = (a.len(), b.len());
    let mut truncated = false;
    if let Some(limit) = options.max_chars {
        if a.len() > limit || b.len() > limit {
            truncated = true;
            a.truncate(limit);
            b.truncate(limit);
        }
    }
    DistancePair {
        visit_id: visit_id.to_string(),
        representation,
        delay_days: scrape.delay_days,
        profile: scrape.profile,
        distance: normalized_chars(&a, &b),
        in_len,
        ex_len,
        truncated,
    }
}

pub fn write_distances_csv<W: Write>(sink: W, pairs: &[DistancePair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "visit_id",
        "representation",
        "delay_days",
        "profile",
        "distance",
        "in_len",
        "ex_len",
    ])?;
    for p in pairs {
        w.write_record([
            p.visit_id.clone(),
            p.representation.to_string(),
            p.delay_days.to_string(),
            p.profile.to_string(),
            format!("{:.6}", p.distance),
            p.in_len.to_string(),
            p.ex_len.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_distances_csv<R: std::io::Read>(source: R) -> Result<Vec<DistancePair>> {
    let mut r = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    for row in r.deserialize::<DistancePair>() {
        out.push(row?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub window_end_ms: i64,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// Trailing-window means evaluated at each day boundary.
///
/// `points` are `(visit time ms, distance)`. The window ending at boundary
/// `b` covers `[b - window, b)`. Boundaries are midnights (epoch-aligned)
/// from the day after the first observation through the day after
/// the last; empty windows are omitted. A single observation yields a
/// degenerate interval.
pub fn rolling_mean(points: &[(i64, f64)], window_days: u32, level: f64) -> Vec<SeriesPoint> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let z = stats::z_value(level);
    let window = window_days as i64 * MS_PER_DAY;
    let first = sorted[0].0.div_euclid(MS_PER_DAY) * MS_PER_DAY + MS_PER_DAY;
    let last = sorted[sorted.len() - 1].0.div_euclid(MS_PER_DAY) * MS_PER_DAY + MS_PER_DAY;
    let mut out = Vec::new();
    let mut boundary = first;
    while boundary <= last {
        let lo = sorted.partition_point(|p| p.0 < boundary - window);
        let hi = sorted.partition_point(|p| p.0 < boundary);
        if hi > lo {
            let values: Vec<f64> = sorted[lo..hi].iter().map(|p| p.1).collect();
            let (mean, var) = stats::mean_var(&values);
            let half = if values.len() >= 2 {
                z * (var / values.len() as f64).sqrt()
            } else {
                0.0
            };
            out.push(SeriesPoint {
                window_end_ms: boundary,
                mean,
                ci_low: mean - half,
                ci_high: mean + half,
                n: values.len(),
            });
        }
        boundary += MS_PER_DAY;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Trend {
    /// Distance change per day.
    pub slope_per_day: f64,
    pub intercept: f64,
    pub n: usize,
}

/// Least-squares line through a series, ignoring points that fall within
/// `exclude_days` of the first window.
pub fn linear_trend(series: &[SeriesPoint], exclude_days: u64) -> Option<Trend> {
    let start = series.first()?.window_end_ms + exclude_days as i64 * MS_PER_DAY;
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|p| p.window_end_ms >= start)
        .map(|p| (p.window_end_ms as f64 / MS_PER_DAY as f64, p.mean))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some(Trend {
        slope_per_day: slope,
        intercept: my - slope * mx,
        n: pts.len(),
    })
}

pub fn write_series_csv<W: Write>(sink: W, series: &[SeriesPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["window_end_ms", "mean", "ci_low", "ci_high", "n"])?;
    for p in series {
        w.write_record([
            p.window_end_ms.to_string(),
            format!("{:.6}", p.mean),
            format!("{:.6}", p.ci_low),
            format!("{:.6}", p.ci_high),
            p.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_csv<R: std::io::Read>(source: R) -> Result<Vec<SeriesPoint>> {
    let mut r = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    for row in r.deserialize::<SeriesPoint>() {
        out.push(row?);
    }
    Ok(out)
}
