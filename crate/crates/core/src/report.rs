//! Figures and tables rendered from a finished audit directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::extraction::Representation;
use crate::harness::ProfileId;
use crate::metrics::{group_stats, read_distances_csv, read_series_csv, DistancePair, SeriesPoint, MS_PER_DAY};

const PALETTE: [&str; 4] = ["#1b6ca8", "#d1495b", "#66a182", "#edae49"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Minimal SVG builder.
struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    fn new(width: f64, height: f64, title: &str) -> Self {
        let mut s = Self { width, height, body: String::new() };
        s.text(width / 2.0, 22.0, title, 15.0, "middle");
        s
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            w.max(0.0),
            h.max(0.0)
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="1"/>"#
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            p.join(" ")
        );
    }

    fn polygon(&mut self, pts: &[(f64, f64)], fill: &str) {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(self.body, r#"<polygon points="{}" fill="{fill}" fill-opacity="0.2"/>"#, p.join(" "));
    }

    fn text(&mut self, x: f64, y: f64, s: &str, size: f64, anchor: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{}</text>"#,
            esc(s)
        );
    }

    fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Plot area with linear axes.
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = (self.xmax - self.xmin).max(f64::EPSILON);
        self.x0 + (x - self.xmin) / span * self.w
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.ymax - self.ymin).max(f64::EPSILON);
        self.y0 + self.h - (y - self.ymin) / span * self.h
    }

    fn axes(&self, svg: &mut Svg, ylabel: &str) {
        svg.line(self.x0, self.y0 + self.h, self.x0 + self.w, self.y0 + self.h, "black");
        svg.line(self.x0, self.y0, self.x0, self.y0 + self.h, "black");
        for i in 0..=4 {
            let v = self.ymin + (self.ymax - self.ymin) * i as f64 / 4.0;
            let y = self.py(v);
            svg.line(self.x0 - 4.0, y, self.x0, y, "black");
            svg.text(self.x0 - 6.0, y + 4.0, &format!("{v:.2}"), 10.0, "end");
        }
        svg.text(self.x0 - 40.0, self.y0 - 8.0, ylabel, 11.0, "start");
    }
}

fn legend(svg: &mut Svg, x: f64, y: f64, entries: &[(String, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let yy = y + i as f64 * 16.0;
        svg.rect(x, yy - 9.0, 10.0, 10.0, color);
        svg.text(x + 14.0, yy, label, 11.0, "start");
    }
}

/// Rolling mean per representation with the confidence band.
pub fn series_svg(series: &[(Representation, Vec<SeriesPoint>)]) -> String {
    let mut svg = Svg::new(760.0, 420.0, "Rolling mean distance (in-situ vs. earliest ex-situ cohort)");
    let all: Vec<&SeriesPoint> = series.iter().flat_map(|(_, s)| s).collect();
    let (xmin, xmax) = all.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
        let d = p.window_end_ms as f64 / MS_PER_DAY as f64;
        (lo.min(d), hi.max(d))
    });
    let f = Frame {
        x0: 70.0,
        y0: 50.0,
        w: 520.0,
        h: 320.0,
        xmin: if all.is_empty() { 0.0 } else { xmin },
        xmax: if all.is_empty() { 1.0 } else { xmax.max(xmin + 1.0) },
        ymin: 0.0,
        ymax: 1.0,
    };
    f.axes(&mut svg, "distance");
    svg.text(f.x0 + f.w / 2.0, f.y0 + f.h + 34.0, "window end (days since epoch)", 11.0, "middle");
    let mut entries = Vec::new();
    for (i, (r, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        entries.push((r.to_string(), color));
        if pts.is_empty() {
            continue;
        }
        let day = |p: &SeriesPoint| p.window_end_ms as f64 / MS_PER_DAY as f64;
        let mut band: Vec<(f64, f64)> = pts.iter().map(|p| (f.px(day(p)), f.py(p.ci_high.min(1.0)))).collect();
        band.extend(pts.iter().rev().map(|p| (f.px(day(p)), f.py(p.ci_low.max(0.0)))));
        svg.polygon(&band, color);
        let line: Vec<(f64, f64)> = pts.iter().map(|p| (f.px(day(p)), f.py(p.mean))).collect();
        svg.polyline(&line, color);
    }
    legend(&mut svg, 610.0, 70.0, &entries);
    svg.finish()
}

pub const HISTOGRAM_BINS: usize = 10;

/// Bin counts over `[0, 1]`; 1.0 falls in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for v in values {
        let i = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
}

/// One distance histogram panel per representation.
pub fn histograms_svg(pairs: &[DistancePair]) -> String {
    let mut svg = Svg::new(900.0, 340.0, "Distance histograms");
    for (k, r) in Representation::ALL.into_iter().enumerate() {
        let values: Vec<f64> = pairs.iter().filter(|p| p.representation == r).map(|p| p.distance).collect();
        let counts = histogram(&values, HISTOGRAM_BINS);
        let total = values.len().max(1) as f64;
        let f = Frame { x0: 60.0 + k as f64 * 290.0, y0: 60.0, w: 230.0, h: 220.0, xmin: 0.0, xmax: 1.0, ymin: 0.0, ymax: 1.0 };
        f.axes(&mut svg, "share");
        svg.text(f.x0 + f.w / 2.0, 48.0, r.as_str(), 12.0, "middle");
        let bw = f.w / HISTOGRAM_BINS as f64;
        for (i, c) in counts.iter().enumerate() {
            let share = *c as f64 / total;
            let y = f.py(share);
            svg.rect(f.x0 + i as f64 * bw + 1.0, y, bw - 2.0, f.y0 + f.h - y, PALETTE[k]);
        }
        for t in [0.0, 0.5, 1.0] {
            svg.text(f.px(t), f.y0 + f.h + 14.0, &format!("{t}"), 10.0, "middle");
        }
    }
    svg.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct CohortKey(u32, ProfileId);

impl std::fmt::Display for CohortKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.0, self.1)
    }
}

impl CohortKey {
    fn parse(s: &str) -> Option<Self> {
        let (c, p) = s.split_once('/')?;
        let profile = match p {
            "A" => ProfileId::A,
            "B" => ProfileId::B,
            _ => return None,
        };
        Some(Self(c.parse().ok()?, profile))
    }
}

/// Mean cleaned-text distance per cohort and profile with CI whiskers.
pub fn cohorts_svg(pairs: &[DistancePair], level: f64) -> String {
    let cleaned = pairs.iter().filter(|p| p.representation == Representation::CleanedText);
    let report = group_stats(cleaned.map(|p| (CohortKey(p.delay_days, p.profile), p.distance)), level);
    let mut groups: BTreeMap<u32, BTreeMap<ProfileId, (f64, Option<f64>, Option<f64>)>> = BTreeMap::new();
    for g in &report.groups {
        let Some(key) = CohortKey::parse(&g.group) else { continue };
        groups.entry(key.0).or_default().insert(key.1, (g.mean, g.ci_low, g.ci_high));
    }
    let mut svg = Svg::new(760.0, 420.0, &format!("Cleaned-text distance by delay cohort ({:.0}% CI)", level * 100.0));
    let f = Frame { x0: 70.0, y0: 50.0, w: 560.0, h: 300.0, xmin: 0.0, xmax: 1.0, ymin: 0.0, ymax: 1.0 };
    f.axes(&mut svg, "distance");
    svg.text(f.x0 + f.w, f.y0 - 8.0, &format!("pairwise tests: {}", report.method), 10.0, "end");
    let slot = f.w / groups.len().max(1) as f64;
    for (gi, (cohort, profiles)) in groups.iter().enumerate() {
        let gx = f.x0 + gi as f64 * slot;
        svg.text(gx + slot / 2.0, f.y0 + f.h + 16.0, &format!("{cohort} d"), 11.0, "middle");
        for (pi, profile) in [ProfileId::A, ProfileId::B].into_iter().enumerate() {
            let Some((mean, lo, hi)) = profiles.get(&profile) else { continue };
            let bw = slot * 0.35;
            let x = gx + slot * 0.12 + pi as f64 * (bw + slot * 0.06);
            let y = f.py(mean.clamp(0.0, 1.0));
            svg.rect(x, y, bw, f.y0 + f.h - y, PALETTE[pi]);
            if let (Some(lo), Some(hi)) = (lo, hi) {
                let cx = x + bw / 2.0;
                let (ylo, yhi) = (f.py(lo.clamp(0.0, 1.0)), f.py(hi.clamp(0.0, 1.0)));
                svg.line(cx, ylo, cx, yhi, "black");
                svg.line(cx - 4.0, ylo, cx + 4.0, ylo, "black");
                svg.line(cx - 4.0, yhi, cx + 4.0, yhi, "black");
            }
        }
    }
    legend(&mut svg, 645.0, 70.0, &[("profile A".into(), PALETTE[0]), ("profile B".into(), PALETTE[1])]);
    svg.finish()
}

#[derive(Debug, Deserialize)]
struct PlanDist {
    counts: BTreeMap<String, usize>,
    shares: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
struct PlanComparison {
    p: f64,
}

#[derive(Debug, Deserialize)]
struct PlanName {
    name: String,
}

#[derive(Debug, Deserialize)]
struct PlanRow {
    plan: PlanName,
    in_situ: PlanDist,
    ex_situ: PlanDist,
    comparison: PlanComparison,
}

#[derive(Debug, Deserialize)]
struct DebiasFile {
    results: Vec<PlanRow>,
}

/// One panel per plan: in-situ and ex-situ category shares side by side.
fn distributions_svg(file: &DebiasFile) -> String {
    let cats: Vec<String> = {
        let mut c: Vec<String> = file
            .results
            .iter()
            .flat_map(|r| r.in_situ.counts.keys().chain(r.ex_situ.counts.keys()).cloned())
            .collect();
        c.sort();
        c.dedup();
        c
    };
    let panel_w = 300.0;
    let row_h = 14.0;
    let panel_h = 60.0 + cats.len() as f64 * row_h;
    let cols = 3usize;
    let rows = file.results.len().div_ceil(cols).max(1);
    let mut svg = Svg::new(60.0 + cols as f64 * panel_w, 40.0 + rows as f64 * panel_h, "Category distributions per debias plan");
    for (k, r) in file.results.iter().enumerate() {
        let x0 = 150.0 + (k % cols) as f64 * panel_w;
        let y0 = 50.0 + (k / cols) as f64 * panel_h;
        svg.text(x0 + 60.0, y0 + 4.0, &format!("{} (p = {:.3})", r.plan.name, r.comparison.p), 11.0, "middle");
        let width = 130.0;
        for (i, c) in cats.iter().enumerate() {
            let y = y0 + 14.0 + i as f64 * row_h;
            svg.text(x0 - 4.0, y + 9.0, c, 9.0, "end");
            let a = r.in_situ.shares.get(c).copied().unwrap_or(0.0);
            let b = r.ex_situ.shares.get(c).copied().unwrap_or(0.0);
            svg.rect(x0, y + 1.0, a * width, 5.0, PALETTE[0]);
            svg.rect(x0, y + 6.0, b * width, 5.0, PALETTE[1]);
        }
    }
    legend(&mut svg, 10.0, 30.0, &[("in-situ".into(), PALETTE[0]), ("ex-situ".into(), PALETTE[1])]);
    svg.finish()
}

#[derive(Debug, Deserialize)]
struct LedgerLine {
    cohort: u32,
    #[serde(rename = "failures_A")]
    failures_a: usize,
    #[serde(rename = "failures_B")]
    failures_b: usize,
    total_failures: usize,
    n: usize,
}

#[derive(Debug, Deserialize)]
struct SummaryHead {
    confidence: f64,
}

fn open(dir: &Path, rel: &str) -> Result<File> {
    let path = dir.join(rel);
    File::open(&path).map_err(|e| Error::io(path, e))
}

/// Renders every figure of a run into `<run>/report` and returns the
/// written paths.
pub fn render_report(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let distances = open(run_dir, "distances.csv")
        .map_err(|e| Error::Invalid(format!("{} is not a finished run: {e}", run_dir.display())))?;
    let pairs = read_distances_csv(distances)?;
    if pairs.is_empty() {
        return Err(Error::Invalid(format!("{}: empty run, no distance pairs", run_dir.display())));
    }
    let summary: SummaryHead = serde_json::from_reader(open(run_dir, "summary.json")?)?;
    let out = run_dir.join("report");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut written = Vec::new();
    let mut save = |name: &str, content: String| -> Result<()> {
        let path = out.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };

    let mut series = Vec::new();
    for r in Representation::ALL {
        let rel = format!("series_{}.csv", r.as_str());
        let pts = match open(run_dir, &rel) {
            Ok(f) => read_series_csv(f)?,
            Err(_) => Vec::new(),
        };
        series.push((r, pts));
    }
    save("series.svg", series_svg(&series))?;
    save("histograms.svg", histograms_svg(&pairs))?;
    save("cohorts.svg", cohorts_svg(&pairs, summary.confidence))?;
    if let Ok(f) = open(run_dir, "bias/debias.json") {
        let file: DebiasFile = serde_json::from_reader(f)?;
        save("distributions.svg", distributions_svg(&file))?;
    }

    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record(["collection", "failures_A", "failures_B", "total_failures", "n"])?;
    let mut ledger = csv::Reader::from_reader(open(run_dir, "error_ledger.csv")?);
    for row in ledger.deserialize::<LedgerLine>() {
        let row = row?;
        table.write_record([
            format!("{}-day post-hoc", row.cohort),
            row.failures_a.to_string(),
            row.failures_b.to_string(),
            row.total_failures.to_string(),
            row.n.to_string(),
        ])?;
    }
    let bytes = table.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    save("table_errors.csv", String::from_utf8(bytes).expect("csv output is utf-8"))?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_edges() {
        assert_eq!(histogram(&[0.0, 0.05, 0.1, 0.95, 1.0], 10), vec![2, 1, 0, 0, 0, 0, 0, 0, 0, 2]);
    }

    #[test]
    fn svg_escapes_text() {
        let mut s = Svg::new(10.0, 10.0, "a < b & c");
        s.text(1.0, 1.0, "\"q\"", 10.0, "start");
        let out = s.finish();
        assert!(out.contains("a &lt; b &amp; c"));
        assert!(out.contains("&quot;q&quot;"));
    }
}
