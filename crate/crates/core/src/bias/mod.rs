//! Category-distribution comparison between in-situ and ex-situ content
//! and the debiasing strategies evaluated on top of it.

mod classifier;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize, Serializer};

pub use classifier::{
    adapter_from_spec, BaselineKeywordClassifier, ClassifierAdapter, ClassifyRequest,
    ClassifyResponse, HttpAdapter, ProcessAdapter, CLASSIFIER_ENV, CLASSIFIER_ERROR,
};

use crate::error::{Error, Result};
use crate::harness::ProfileId;
use crate::metrics::{chi_square_independence, mean_var, DistancePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    InSitu,
    ExSitu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentLabel {
    pub visit_id: String,
    pub side: Side,
    pub domain: String,
    pub category: String,
    pub score: f64,
}

pub struct LabelInput<'a> {
    pub visit_id: &'a str,
    pub domain: &'a str,
    pub text: &'a str,
}

/// Labels every text on one side. Failed calls become `classifier_error`
/// with score 0; empty texts are sent like any other.
pub fn classify_content(inputs: &[LabelInput<'_>], side: Side, adapter: &dyn ClassifierAdapter) -> Vec<ContentLabel> {
    let prefix = match side {
        Side::InSitu => "in",
        Side::ExSitu => "ex",
    };
    let requests: Vec<ClassifyRequest> = inputs
        .iter()
        .map(|i| ClassifyRequest { id: format!("{prefix}:{}", i.visit_id), text: i.text.to_string() })
        .collect();
    let answers = adapter.classify_batch(&requests);
    inputs
        .iter()
        .zip(answers)
        .map(|(i, a)| {
            let (category, score) = a.unwrap_or_else(|| (CLASSIFIER_ERROR.to_string(), 0.0));
            ContentLabel {
                visit_id: i.visit_id.to_string(),
                side,
                domain: i.domain.to_string(),
                category,
                score: score.clamp(0.0, 1.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebiasPlan {
    pub name: String,
    pub score_threshold: f64,
    pub excluded_domains: BTreeSet<String>,
    pub excluded_categories: BTreeSet<String>,
    pub alpha: f64,
}

impl Default for DebiasPlan {
    fn default() -> Self {
        Self {
            name: "none".into(),
            score_threshold: 0.0,
            excluded_domains: BTreeSet::new(),
            excluded_categories: BTreeSet::new(),
            alpha: 0.05,
        }
    }
}

impl DebiasPlan {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::Config(format!("plan {}: score_threshold must lie in [0, 1]", self.name)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("plan {}: alpha must lie in (0, 1)", self.name)));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        let mut parts = vec![format!("score >= {}", self.score_threshold)];
        if !self.excluded_domains.is_empty() {
            parts.push(format!("without domains {:?}", self.excluded_domains));
        }
        if !self.excluded_categories.is_empty() {
            parts.push(format!("without categories {:?}", self.excluded_categories));
        }
        parts.join(", ")
    }
}

/// Labels removed by a plan, per reason.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Exclusions {
    pub classifier_error: usize,
    pub below_threshold: usize,
    pub excluded_domain: usize,
    pub excluded_category: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryDistribution {
    pub side: Option<Side>,
    pub filter: String,
    pub counts: BTreeMap<String, usize>,
    pub shares: BTreeMap<String, f64>,
    pub total: usize,
    /// Set when every label was filtered out.
    pub empty: bool,
    pub exclusions: Exclusions,
}

/// Counts and shares of the labels surviving `plan`. Classifier errors are
/// always set aside.
pub fn distribution(labels: &[ContentLabel], plan: &DebiasPlan) -> CategoryDistribution {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut ex = Exclusions::default();
    for l in labels {
        if l.category == CLASSIFIER_ERROR {
            ex.classifier_error += 1;
        } else if l.score < plan.score_threshold {
            ex.below_threshold += 1;
        } else if plan.excluded_domains.contains(&l.domain) {
            ex.excluded_domain += 1;
        } else if plan.excluded_categories.contains(&l.category) {
            ex.excluded_category += 1;
        } else {
            *counts.entry(l.category.clone()).or_insert(0) += 1;
        }
    }
    let total: usize = counts.values().sum();
    let shares = counts
        .iter()
        .map(|(k, n)| (k.clone(), *n as f64 / total.max(1) as f64))
        .collect();
    CategoryDistribution {
        side: labels.first().map(|l| l.side),
        filter: plan.describe(),
        counts,
        shares,
        total,
        empty: total == 0,
        exclusions: ex,
    }
}

/// `100 * (n_in - n_ex) / n_ex`; infinite when the ex-situ count is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelativeDiff {
    Finite(f64),
    Infinite,
}

impl Serialize for RelativeDiff {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RelativeDiff::Finite(v) => s.serialize_f64(*v),
            RelativeDiff::Infinite => s.serialize_str("∞"),
        }
    }
}

impl std::fmt::Display for RelativeDiff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RelativeDiff::Finite(v) => write!(f, "{v:.3}"),
            RelativeDiff::Infinite => f.write_str("∞"),
        }
    }
}

pub fn relative_diff(n_in: usize, n_ex: usize) -> RelativeDiff {
    if n_ex == 0 {
        RelativeDiff::Infinite
    } else {
        RelativeDiff::Finite(100.0 * (n_in as f64 - n_ex as f64) / n_ex as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryRow {
    pub category: String,
    pub n_in: usize,
    pub n_ex: usize,
    pub share_in: f64,
    pub share_ex: f64,
    pub relative_diff: RelativeDiff,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    /// Categories present on at least one side.
    pub rows: Vec<CategoryRow>,
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
    pub n: usize,
}

/// Side-by-category independence test over the union of categories.
/// Categories absent on both sides are dropped; fewer than two categories
/// (or an empty side) compare as indistinguishable.
pub fn compare_distributions(in_dist: &CategoryDistribution, ex_dist: &CategoryDistribution) -> Comparison {
    let cats: BTreeSet<&String> = in_dist.counts.keys().chain(ex_dist.counts.keys()).collect();
    let rows: Vec<CategoryRow> = cats
        .into_iter()
        .map(|c| {
            let n_in = in_dist.counts.get(c).copied().unwrap_or(0);
            let n_ex = ex_dist.counts.get(c).copied().unwrap_or(0);
            CategoryRow {
                category: c.clone(),
                n_in,
                n_ex,
                share_in: n_in as f64 / in_dist.total.max(1) as f64,
                share_ex: n_ex as f64 / ex_dist.total.max(1) as f64,
                relative_diff: relative_diff(n_in, n_ex),
            }
        })
        .filter(|r| r.n_in + r.n_ex > 0)
        .collect();
    let n = in_dist.total + ex_dist.total;
    let table = vec![
        rows.iter().map(|r| r.n_in as f64).collect::<Vec<_>>(),
        rows.iter().map(|r| r.n_ex as f64).collect::<Vec<_>>(),
    ];
    let (chi2, df, p) = if rows.len() < 2 || in_dist.total == 0 || ex_dist.total == 0 {
        (0.0, 0, 1.0)
    } else {
        let c = chi_square_independence(&table).expect("marginals are non-zero");
        (c.statistic, c.df, c.p)
    };
    Comparison { rows, chi2, df, p, n }
}

/// Two-sided 0.05 critical value for an adjusted residual.
pub const DEFAULT_RESIDUAL_LIMIT: f64 = 1.96;

/// Categories whose adjusted standardized residual in the side × category
/// table exceeds `limit` in magnitude.
pub fn flag_biased_categories(cmp: &Comparison, limit: f64) -> BTreeSet<String> {
    let n_in: usize = cmp.rows.iter().map(|r| r.n_in).sum();
    let n_ex: usize = cmp.rows.iter().map(|r| r.n_ex).sum();
    let n = (n_in + n_ex) as f64;
    if n_in == 0 || n_ex == 0 {
        return BTreeSet::new();
    }
    let row_share = n_in as f64 / n;
    cmp.rows
        .iter()
        .filter(|r| {
            let col = (r.n_in + r.n_ex) as f64;
            let expected = col * row_share;
            let var = expected * (1.0 - row_share) * (1.0 - col / n);
            var > 0.0 && ((r.n_in as f64 - expected) / var.sqrt()).abs() > limit
        })
        .map(|r| r.category.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MigrationCell {
    pub from: String,
    pub to: String,
    pub count: usize,
    pub row_pct: f64,
    pub mean_score: f64,
    pub sd_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MigrationMatrix {
    pub threshold: f64,
    /// In-situ category counts after the threshold.
    pub row_totals: BTreeMap<String, usize>,
    /// Non-empty cells, by `(from, to)`.
    pub cells: Vec<MigrationCell>,
    /// In-situ labels without an ex-situ partner.
    pub unmatched: usize,
}

/// In-situ category × ex-situ category cross-tabulation. The threshold
/// filters in-situ labels only, so every surviving visit lands in some
/// ex-situ column.
pub fn migration_matrix(in_labels: &[ContentLabel], ex_labels: &[ContentLabel], threshold: f64) -> MigrationMatrix {
    let ex: HashMap<&str, &ContentLabel> = ex_labels.iter().map(|l| (l.visit_id.as_str(), l)).collect();
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut row_totals: BTreeMap<String, usize> = BTreeMap::new();
    let mut unmatched = 0;
    for l in in_labels.iter().filter(|l| l.score >= threshold) {
        let Some(e) = ex.get(l.visit_id.as_str()) else {
            unmatched += 1;
            continue;
        };
        *row_totals.entry(l.category.clone()).or_insert(0) += 1;
        groups.entry((l.category.clone(), e.category.clone())).or_default().push(e.score);
    }
    let cells = groups
        .into_iter()
        .map(|((from, to), scores)| {
            let (mean, var) = mean_var(&scores);
            let row = row_totals[&from];
            MigrationCell {
                row_pct: 100.0 * scores.len() as f64 / row as f64,
                count: scores.len(),
                from,
                to,
                mean_score: mean,
                sd_score: if scores.len() > 1 { var.sqrt() } else { 0.0 },
            }
        })
        .collect();
    MigrationMatrix { threshold, row_totals, cells, unmatched }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanResult {
    pub plan: DebiasPlan,
    pub in_situ: CategoryDistribution,
    pub ex_situ: CategoryDistribution,
    pub comparison: Comparison,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Aligned,
    NotAligned,
    /// A side has no labels left after filtering, so nothing was compared.
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DebiasReport {
    pub results: Vec<PlanResult>,
    /// Name of the first plan whose p-value exceeds its alpha.
    pub first_aligned: Option<String>,
}

/// Evaluates every plan in order.
pub fn run_debias_search(in_labels: &[ContentLabel], ex_labels: &[ContentLabel], strategies: &[DebiasPlan]) -> Result<DebiasReport> {
    if strategies.is_empty() {
        return Err(Error::Invalid("at least one debias strategy is required".into()));
    }
    let mut results = Vec::with_capacity(strategies.len());
    for plan in strategies {
        plan.validate()?;
        let in_situ = distribution(in_labels, plan);
        let ex_situ = distribution(ex_labels, plan);
        let comparison = compare_distributions(&in_situ, &ex_situ);
        let verdict = if in_situ.empty || ex_situ.empty {
            Verdict::Undefined
        } else if comparison.p > plan.alpha {
            Verdict::Aligned
        } else {
            Verdict::NotAligned
        };
        results.push(PlanResult { plan: plan.clone(), in_situ, ex_situ, comparison, verdict });
    }
    let first_aligned = results
        .iter()
        .find(|r| r.verdict == Verdict::Aligned)
        .map(|r| r.plan.name.clone());
    Ok(DebiasReport { results, first_aligned })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainRow {
    pub domain: String,
    pub n: usize,
    pub share: f64,
    pub mean: f64,
    pub n_a: usize,
    pub mean_a: Option<f64>,
    pub n_b: usize,
    pub mean_b: Option<f64>,
}

/// Mean distance per domain, overall and per profile, largest domains
/// first. Pairs whose visit has no known domain are grouped under "".
pub fn domain_distance_table(pairs: &[DistancePair], domain_of: &HashMap<String, String>) -> Vec<DomainRow> {
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in pairs {
        let d = domain_of.get(&p.visit_id).map_or("", String::as_str);
        let g = groups.entry(d).or_default();
        match p.profile {
            ProfileId::A => g.0.push(p.distance),
            ProfileId::B => g.1.push(p.distance),
        }
    }
    let total = pairs.len().max(1) as f64;
    let mean = |v: &[f64]| (!v.is_empty()).then(|| mean_var(v).0);
    let mut rows: Vec<DomainRow> = groups
        .into_iter()
        .map(|(domain, (a, b))| {
            let all: Vec<f64> = a.iter().chain(&b).copied().collect();
            DomainRow {
                domain: domain.to_string(),
                n: all.len(),
                share: all.len() as f64 / total,
                mean: mean_var(&all).0,
                n_a: a.len(),
                mean_a: mean(&a),
                n_b: b.len(),
                mean_b: mean(&b),
            }
        })
        .collect();
    rows.sort_by(|x, y| y.n.cmp(&x.n).then_with(|| x.domain.cmp(&y.domain)));
    rows
}

pub fn write_labels_csv<W: Write>(sink: W, labels: &[ContentLabel]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["visit_id", "side", "domain", "category", "score"])?;
    for l in labels {
        let side = match l.side {
            Side::InSitu => "in_situ",
            Side::ExSitu => "ex_situ",
        };
        w.write_record([l.visit_id.as_str(), side, &l.domain, &l.category, &format!("{:.6}", l.score)])?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format distribution table: one row per plan, side and category.
pub fn write_distributions_csv<W: Write>(sink: W, report: &DebiasReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["plan", "side", "category", "count", "share"])?;
    for r in &report.results {
        for (side, d) in [("in_situ", &r.in_situ), ("ex_situ", &r.ex_situ)] {
            for (cat, n) in &d.counts {
                w.write_record([
                    r.plan.name.as_str(),
                    side,
                    cat,
                    &n.to_string(),
                    &format!("{:.6}", d.shares[cat]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_migration_csv<W: Write>(sink: W, m: &MigrationMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["from", "to", "count", "row_pct", "mean_score", "sd_score"])?;
    for c in &m.cells {
        w.write_record([
            c.from.as_str(),
            &c.to,
            &c.count.to_string(),
            &format!("{:.6}", c.row_pct),
            &format!("{:.6}", c.mean_score),
            &format!("{:.6}", c.sd_score),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_domain_csv<W: Write>(sink: W, rows: &[DomainRow]) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["domain", "n", "share", "mean", "n_A", "mean_A", "n_B", "mean_B"])?;
    for r in rows {
        w.write_record([
            r.domain.as_str(),
            &r.n.to_string(),
            &format!("{:.6}", r.share),
            &format!("{:.6}", r.mean),
            &r.n_a.to_string(),
            &opt(r.mean_a),
            &r.n_b.to_string(),
            &opt(r.mean_b),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(id: &str, side: Side, domain: &str, cat: &str, score: f64) -> ContentLabel {
        ContentLabel { visit_id: id.into(), side, domain: domain.into(), category: cat.into(), score }
    }

    #[test]
    fn threshold_and_exclusions() {
        let labels = vec![
            label("1", Side::InSitu, "a.test", "Politics", 0.9),
            label("2", Side::InSitu, "a.test", "Non-thematic", 0.15),
            label("3", Side::InSitu, "b.test", "Sports", 0.8),
            label("4", Side::InSitu, "b.test", CLASSIFIER_ERROR, 0.0),
        ];
        let d = distribution(&labels, &DebiasPlan::default());
        assert_eq!(d.total, 3);
        assert_eq!(d.exclusions.classifier_error, 1);
        let d = distribution(&labels, &DebiasPlan { score_threshold: 0.5, ..Default::default() });
        assert_eq!(d.total, 2);
        assert_eq!(d.exclusions.below_threshold, 1);
        let plan = DebiasPlan {
            excluded_categories: ["Sports".to_string()].into(),
            ..Default::default()
        };
        let d = distribution(&labels, &plan);
        assert!((d.shares.values().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d.counts.get("Sports"), None);
        let none = DebiasPlan { score_threshold: 1.0, ..Default::default() };
        assert!(distribution(&labels, &none).empty);
    }

    #[test]
    fn relative_difference_formula() {
        assert_eq!(relative_diff(178, 100), RelativeDiff::Finite(78.0));
        assert_eq!(relative_diff(3, 0), RelativeDiff::Infinite);
        assert_eq!(serde_json::to_string(&RelativeDiff::Infinite).unwrap(), "\"∞\"");
    }

    #[test]
    fn identical_distributions_compare_equal() {
        let mk = |side| {
            (0..30)
                .map(|i| label(&i.to_string(), side, "a.test", ["X", "Y", "Z"][i % 3], 0.9))
                .collect::<Vec<_>>()
        };
        let plan = DebiasPlan::default();
        let c = compare_distributions(&distribution(&mk(Side::InSitu), &plan), &distribution(&mk(Side::ExSitu), &plan));
        assert!(c.rows.iter().all(|r| r.relative_diff == RelativeDiff::Finite(0.0)));
        assert!((c.p - 1.0).abs() < 1e-12);
        assert_eq!(c.df, 2);
    }

    #[test]
    fn migration_rows_sum_to_hundred() {
        let ins = vec![
            label("1", Side::InSitu, "a", "Commerce", 0.9),
            label("2", Side::InSitu, "a", "Commerce", 0.9),
            label("3", Side::InSitu, "a", "Politics", 0.9),
        ];
        let exs = vec![
            label("1", Side::ExSitu, "a", "Non-thematic", 0.1),
            label("2", Side::ExSitu, "a", "Non-thematic", 0.2),
            label("3", Side::ExSitu, "a", "Politics", 0.9),
        ];
        let m = migration_matrix(&ins, &exs, 0.0);
        let flow = m.cells.iter().find(|c| c.from == "Commerce").unwrap();
        assert_eq!(flow.count, 2);
        assert!((flow.mean_score - 0.15).abs() < 1e-12);
        for (row, n) in &m.row_totals {
            let pct: f64 = m.cells.iter().filter(|c| &c.from == row).map(|c| c.row_pct).sum();
            assert!((pct - 100.0).abs() < 1e-9);
            assert_eq!(*n, m.cells.iter().filter(|c| &c.from == row).map(|c| c.count).sum::<usize>());
        }
    }

    #[test]
    fn debias_search_marks_first_aligned() {
        let ins: Vec<_> = (0..40).map(|i| label(&i.to_string(), Side::InSitu, "a", if i < 20 { "X" } else { "Y" }, 0.9)).collect();
        let exs: Vec<_> = (0..40).map(|i| label(&i.to_string(), Side::ExSitu, "a", if i < 20 { "X" } else { "Z" }, 0.9)).collect();
        let plans = vec![
            DebiasPlan { name: "raw".into(), ..Default::default() },
            DebiasPlan {
                name: "drop".into(),
                excluded_categories: ["Y".to_string(), "Z".to_string()].into(),
                ..Default::default()
            },
        ];
        let r = run_debias_search(&ins, &exs, &plans).unwrap();
        assert_eq!(r.results[0].verdict, Verdict::NotAligned);
        assert_eq!(r.first_aligned.as_deref(), Some("drop"));
        assert!(run_debias_search(&ins, &exs, &[]).is_err());
        let errors: Vec<_> = (0..40).map(|i| label(&i.to_string(), Side::ExSitu, "a", CLASSIFIER_ERROR, 0.0)).collect();
        let r = run_debias_search(&ins, &errors, &plans).unwrap();
        assert!(r.results.iter().all(|p| p.verdict == Verdict::Undefined));
        assert_eq!(r.first_aligned, None);
    }

    #[test]
    fn domain_table_shares() {
        let pair = |id: &str, profile, d| DistancePair {
            visit_id: id.into(),
            representation: crate::extraction::Representation::CleanedText,
            delay_days: 0,
            profile,
            distance: d,
            in_len: 1,
            ex_len: 1,
            truncated: false,
        };
        let pairs = vec![pair("1", ProfileId::A, 1.0), pair("2", ProfileId::B, 0.0), pair("3", ProfileId::A, 0.0)];
        let domains: HashMap<String, String> =
            [("1", "x"), ("2", "x"), ("3", "y")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let rows = domain_distance_table(&pairs, &domains);
        assert_eq!(rows[0].domain, "x");
        assert_eq!(rows[0].mean_a, Some(1.0));
        assert_eq!(rows[0].mean_b, Some(0.0));
        assert!((rows.iter().map(|r| r.share).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(rows[1].mean, 0.0);
    }
}
