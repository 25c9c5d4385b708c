use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::{ProfileId, ScrapeResult};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LedgerRow {
    pub cohort: u32,
    #[serde(rename = "failures_A")]
    pub failures_a: usize,
    #[serde(rename = "failures_B")]
    pub failures_b: usize,
    pub total_failures: usize,
    pub n: usize,
}

/// Failure counts per delay cohort, ascending by cohort.
pub fn error_ledger(results: &[ScrapeResult]) -> Vec<LedgerRow> {
    let mut rows: BTreeMap<u32, LedgerRow> = BTreeMap::new();
    for r in results {
        let row = rows.entry(r.delay_days).or_insert(LedgerRow {
            cohort: r.delay_days,
            failures_a: 0,
            failures_b: 0,
            total_failures: 0,
            n: 0,
        });
        row.n += 1;
        if r.status.is_failure() {
            row.total_failures += 1;
            match r.profile {
                ProfileId::A => row.failures_a += 1,
                ProfileId::B => row.failures_b += 1,
            }
        }
    }
    rows.into_values().collect()
}

pub fn write_ledger_csv<W: Write>(sink: W, rows: &[LedgerRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["cohort", "failures_A", "failures_B", "total_failures", "n"])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{FetchStatus, TransportError};

    fn result(delay: u32, profile: ProfileId, status: FetchStatus) -> ScrapeResult {
        ScrapeResult {
            visit_id: "v".into(),
            profile,
            delay_days: delay,
            fetch_time: 0,
            status,
            final_url: String::new(),
            html: Vec::new(),
        }
    }

    #[test]
    fn counts_both_failure_kinds() {
        let rs = vec![
            result(0, ProfileId::A, FetchStatus::Http(200)),
            result(0, ProfileId::A, FetchStatus::Http(404)),
            result(0, ProfileId::B, FetchStatus::Transport(TransportError::Timeout)),
            result(30, ProfileId::B, FetchStatus::Http(200)),
        ];
        let rows = error_ledger(&rs);
        assert_eq!(
            rows[0],
            LedgerRow { cohort: 0, failures_a: 1, failures_b: 1, total_failures: 2, n: 3 }
        );
        assert_eq!(rows[1].total_failures, 0);
        assert_eq!(rows[1].n, 1);
        let mut buf = Vec::new();
        write_ledger_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("cohort,failures_A,failures_B,total_failures,n\n0,1,1,2,3\n"));
    }
}
