//! Group means with confidence intervals, Welch pairwise contrasts with Holm
//! adjustment, Pearson correlation and the chi-square independence test.

use std::collections::BTreeMap;
use std::fmt::Display;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

pub const MULTIPLE_COMPARISON_METHOD: &str = "welch_t_holm";

/// Two-sided normal critical value for a confidence level.
pub fn z_value(level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

pub fn validate_level(level: f64) -> Result<()> {
    if level == 0.95 || level == 0.99 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "confidence level must be 0.95 or 0.99, got {level}"
        )))
    }
}

/// Sample mean and unbiased variance. Sums run over sorted values so the
/// result does not depend on input order.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    if sorted.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = sorted.iter().sum::<f64>() / n;
    let var = if sorted.len() < 2 {
        f64::NAN
    } else {
        sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    (mean, var)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsSummary {
    pub group: String,
    pub n: usize,
    pub mean: f64,
    /// `None` when the group has fewer than two members.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseRow {
    pub group_a: String,
    pub group_b: String,
    /// mean(a) − mean(b)
    pub diff: f64,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    pub adjusted_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub method: &'static str,
    pub level: f64,
    pub groups: Vec<StatsSummary>,
    pub pairwise: Vec<PairwiseRow>,
}

fn summary(label: String, values: &[f64], z: f64, level: f64) -> StatsSummary {
    let (mean, var) = mean_var(values);
    let (ci_low, ci_high) = if values.len() >= 2 {
        let half = z * (var / values.len() as f64).sqrt();
        (Some(mean - half), Some(mean + half))
    } else {
        (None, None)
    };
    StatsSummary {
        group: label,
        n: values.len(),
        mean,
        ci_low,
        ci_high,
        level,
    }
}

/// Welch two-sample t-test. Returns `(t, df, two-sided p)`, or `None` when
/// either group has fewer than two observations.
pub fn welch_test(a: &[f64], b: &[f64]) -> Option<(f64, f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        // Both groups constant.
        let p = if ma == mb { 1.0 } else { 0.0 };
        let t = if ma == mb {
            0.0
        } else {
            f64::INFINITY.copysign(ma - mb)
        };
        return Some((t, na + nb - 2.0, p));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Some((t, df, p))
}

/// Holm step-down adjusted p-values, returned in input order.
pub fn holm_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]).then(i.cmp(&j)));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &idx) in order.iter().enumerate() {
        let candidate = ((m - rank) as f64 * p[idx]).min(1.0);
        running = running.max(candidate);
        adjusted[idx] = running;
    }
    adjusted
}

/// Per-group means and all pairwise Welch contrasts, Holm-adjusted.
pub fn group_stats<K, I>(observations: I, level: f64) -> GroupReport
where
    K: Ord + Display,
    I: IntoIterator<Item = (K, f64)>,
{
    let mut groups: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for (k, v) in observations {
        groups.entry(k).or_default().push(v);
    }
    let z = z_value(level);
    let labelled: Vec<(String, Vec<f64>)> = groups
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let summaries = labelled
        .iter()
        .map(|(label, values)| summary(label.clone(), values, z, level))
        .collect::<Vec<_>>();

    let mut pairwise = Vec::new();
    for i in 0..labelled.len() {
        for j in i + 1..labelled.len() {
            let test = welch_test(&labelled[i].1, &labelled[j].1);
            pairwise.push(PairwiseRow {
                group_a: labelled[i].0.clone(),
                group_b: labelled[j].0.clone(),
                diff: summaries[i].mean - summaries[j].mean,
                t: test.map(|t| t.0),
                df: test.map(|t| t.1),
                p: test.map(|t| t.2),
                adjusted_p: None,
            });
        }
    }
    let defined: Vec<usize> = (0..pairwise.len())
        .filter(|&i| pairwise[i].p.is_some())
        .collect();
    let raw: Vec<f64> = defined.iter().map(|&i| pairwise[i].p.unwrap()).collect();
    for (&i, adj) in defined.iter().zip(holm_adjust(&raw)) {
        pairwise[i].adjusted_p = Some(adj);
    }
    GroupReport {
        method: MULTIPLE_COMPARISON_METHOD,
        level,
        groups: summaries,
        pairwise,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

/// Pearson correlation with a two-sided p from the t transform (n − 2 df).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Invalid("pearson inputs differ in length".into()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Undefined("pearson needs at least 3 pairs".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation { r, p, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
    pub n: f64,
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(statistic: f64, df: usize) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64)
        .expect("positive df")
        .sf(statistic)
}

/// Pearson chi-square test of independence (no continuity correction).
pub fn chi_square_independence(table: &[Vec<f64>]) -> Result<ChiSquare> {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 {
        return Err(Error::Invalid(format!(
            "contingency table must be at least 2x2, got {rows}x{cols}"
        )));
    }
    if table.iter().any(|r| r.len() != cols) {
        return Err(Error::Invalid("ragged contingency table".into()));
    }
    if table.iter().flatten().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(Error::Invalid("counts must be finite and non-negative".into()));
    }
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let zero_rows: Vec<usize> = (0..rows).filter(|&i| row_sums[i] == 0.0).collect();
    let zero_cols: Vec<usize> = (0..cols).filter(|&j| col_sums[j] == 0.0).collect();
    if !zero_rows.is_empty() || !zero_cols.is_empty() {
        return Err(Error::Invalid(format!(
            "zero marginal totals (rows {zero_rows:?}, columns {zero_cols:?}) give zero expected counts"
        )));
    }
    let n: f64 = row_sums.iter().sum();
    let mut statistic = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &observed) in row.iter().enumerate() {
            let expected = row_sums[i] * col_sums[j] / n;
            statistic += (observed - expected).powi(2) / expected;
        }
    }
    let df = (rows - 1) * (cols - 1);
    Ok(ChiSquare {
        statistic,
        df,
        p: chi_square_sf(statistic, df),
        n,
    })
}
