use serde::{Deserialize, Serialize};

use super::{assign_profile, HarnessConfig, ProfileId};
use crate::error::{Error, Result};
use crate::metrics::MS_PER_DAY;
use crate::visit_store::VisitRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrapeTask {
    pub visit_id: String,
    pub url: String,
    pub delay_days: u32,
    pub profile: ProfileId,
    /// Simulated epoch ms; always `visit_end + delay_days`.
    pub scheduled_time: i64,
    /// Wall-clock milliseconds after the schedule origin.
    pub wall_offset_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    /// Earliest `visit_end` in the input; wall offsets are measured from here.
    pub origin_ms: i64,
    pub tasks: Vec<ScrapeTask>,
    pub warnings: Vec<String>,
}

/// One task per visit and delay cohort, sorted by scheduled time, then
/// delay, then visit id.
pub fn build_schedule(visits: &[VisitRecord], config: &HarnessConfig) -> Result<Schedule> {
    config.validate()?;
    if visits.is_empty() {
        return Err(Error::Invalid("cannot schedule an empty visit set".into()));
    }
    let origin_ms = visits.iter().map(|v| v.visit_end).min().expect("non-empty");
    let latest = visits.iter().map(|v| v.visit_end).max().expect("non-empty");
    let span = latest - origin_ms;

    let mut warnings = Vec::new();
    let spacing = config
        .delay_cohorts
        .windows(2)
        .map(|w| (w[1] - w[0]) as i64 * MS_PER_DAY)
        .min();
    if let Some(spacing) = spacing {
        if span > spacing {
            warnings.push(format!(
                "cohort overlap: visit span {:.2} days exceeds cohort spacing {:.2} days",
                span as f64 / MS_PER_DAY as f64,
                spacing as f64 / MS_PER_DAY as f64
            ));
        }
    }

    let mut tasks = Vec::with_capacity(visits.len() * config.delay_cohorts.len());
    for v in visits {
        let profile = assign_profile(&v.visit_id, config.seed);
        for &delay in &config.delay_cohorts {
            let scheduled_time = v.visit_end + delay as i64 * MS_PER_DAY;
            tasks.push(ScrapeTask {
                visit_id: v.visit_id.clone(),
                url: v.url.clone(),
                delay_days: delay,
                profile,
                scheduled_time,
                wall_offset_ms: (scheduled_time - origin_ms) as f64 / config.compression,
            });
        }
    }
    tasks.sort_by(|a, b| {
        a.scheduled_time
            .cmp(&b.scheduled_time)
            .then(a.delay_days.cmp(&b.delay_days))
            .then_with(|| a.visit_id.cmp(&b.visit_id))
    });
    Ok(Schedule {
        origin_ms,
        tasks,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visit_store::HtmlRef;

    fn visit(id: &str, end: i64) -> VisitRecord {
        VisitRecord {
            visit_id: id.into(),
            participant_id: "p".into(),
            url: format!("http://news.test/{id}-story-title"),
            html: HtmlRef::Inline(String::new()),
            visit_start: end - 1000,
            visit_end: end,
        }
    }

    #[test]
    fn compressed_offsets() {
        let cfg = HarnessConfig {
            compression: 86_400.0,
            delay_cohorts: vec![30],
            ..Default::default()
        };
        let s = build_schedule(&[visit("a", 0)], &cfg).unwrap();
        assert_eq!(s.tasks[0].scheduled_time, 30 * MS_PER_DAY);
        assert!((s.tasks[0].wall_offset_ms - 30_000.0).abs() < 1e-9);
    }

    #[test]
    fn realtime_gaps_preserved() {
        let cfg = HarnessConfig {
            delay_cohorts: vec![0],
            ..Default::default()
        };
        let s = build_schedule(&[visit("a", 0), visit("b", 600_000)], &cfg).unwrap();
        assert_eq!(s.tasks[1].wall_offset_ms - s.tasks[0].wall_offset_ms, 600_000.0);
    }

    #[test]
    fn cohorts_do_not_interleave() {
        let cfg = HarnessConfig {
            delay_cohorts: vec![0, 30],
            ..Default::default()
        };
        let visits = [visit("a", 0), visit("b", 5_000), visit("c", 10_000)];
        let s = build_schedule(&visits, &cfg).unwrap();
        assert_eq!(s.tasks.len(), 6);
        let delays: Vec<u32> = s.tasks.iter().map(|t| t.delay_days).collect();
        assert_eq!(delays, vec![0, 0, 0, 30, 30, 30]);
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn overlap_is_a_warning() {
        let cfg = HarnessConfig {
            delay_cohorts: vec![0, 1],
            ..Default::default()
        };
        let s = build_schedule(&[visit("a", 0), visit("b", 3 * MS_PER_DAY)], &cfg).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert!(build_schedule(&[], &cfg).is_err());
    }
}
