//! Ex-situ fetch harness: profile assignment, delay-cohort scheduling,
//! polite concurrent fetching and HTTP error accounting.

mod fetch;
mod ledger;
mod schedule;

use std::fmt;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use fetch::{fetch_one, run_fetches, FetchRun, Fetcher, RequestTrace};
pub use ledger::{error_ledger, write_ledger_csv, LedgerRow};
pub use schedule::{build_schedule, Schedule, ScrapeTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProfileId {
    A,
    B,
}

impl fmt::Display for ProfileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileId::A => "A",
            ProfileId::B => "B",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserAgentPolicy {
    Fixed(String),
    Randomized(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrapeProfile {
    pub profile_id: ProfileId,
    pub user_agent_policy: UserAgentPolicy,
    pub max_redirects: usize,
    pub timeout_secs: f64,
}

pub const DEFAULT_FIXED_USER_AGENT: &str = "python-requests/2.31.0";

pub fn default_user_agent_pool() -> Vec<String> {
    [
        "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/118.0.0.0 Safari/537.36",
        "Mozilla/5.0 (Windows NT 10.0; Win64; x64; rv:119.0) Gecko/20100101 Firefox/119.0",
        "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/17.0 Safari/605.1.15",
        "Mozilla/5.0 (X11; Linux x86_64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/117.0.0.0 Safari/537.36",
        "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/118.0.0.0 Safari/537.36 Edg/118.0.2088.46",
        "Mozilla/5.0 (X11; Ubuntu; Linux x86_64; rv:118.0) Gecko/20100101 Firefox/118.0",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

impl ScrapeProfile {
    pub fn validate(&self) -> Result<()> {
        if let UserAgentPolicy::Randomized(pool) = &self.user_agent_policy {
            if pool.is_empty() {
                return Err(Error::Config(format!(
                    "profile {} has an empty user-agent pool",
                    self.profile_id
                )));
            }
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Config("profile timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Transport-level failure classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportError {
    Dns,
    Connect,
    Timeout,
    Tls,
    TooManyRedirects,
    Protocol,
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("serializes");
        f.write_str(s.as_str().unwrap_or("protocol"))
    }
}

/// HTTP status code or transport error; serialized as an integer or a
/// string class respectively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FetchStatus {
    Http(u16),
    Transport(TransportError),
}

impl FetchStatus {
    pub fn is_failure(&self) -> bool {
        match self {
            FetchStatus::Http(code) => *code >= 400,
            FetchStatus::Transport(_) => true,
        }
    }
}

impl fmt::Display for FetchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FetchStatus::Http(c) => write!(f, "{c}"),
            FetchStatus::Transport(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScrapeResult {
    pub visit_id: String,
    pub profile: ProfileId,
    pub delay_days: u32,
    /// Simulated epoch milliseconds at request start.
    pub fetch_time: i64,
    pub status: FetchStatus,
    pub final_url: String,
    /// Empty whenever the fetch failed.
    pub html: Vec<u8>,
}

/// One line of the results log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrapeRecord {
    pub visit_id: String,
    pub profile: ProfileId,
    pub delay_days: u32,
    pub fetch_ts_ms: i64,
    pub status: FetchStatus,
    pub final_url: String,
    pub html_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    /// Simulated seconds per wall second (≥ 1).
    pub compression: f64,
    /// Minimum milliseconds between two requests to the same host.
    pub per_host_min_gap: u64,
    pub max_parallel: usize,
    pub delay_cohorts: Vec<u32>,
    pub seed: u64,
    pub timeout_secs: f64,
    pub max_redirects: usize,
    pub fixed_user_agent: String,
    pub user_agent_pool: Vec<String>,
    /// Route every request through this HTTP proxy (e.g. the simulator).
    pub proxy: Option<String>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            compression: 1.0,
            per_host_min_gap: 1000,
            max_parallel: 8,
            delay_cohorts: vec![0, 30, 60, 90],
            seed: 0,
            timeout_secs: 30.0,
            max_redirects: 10,
            fixed_user_agent: DEFAULT_FIXED_USER_AGENT.into(),
            user_agent_pool: default_user_agent_pool(),
            proxy: None,
        }
    }
}

impl HarnessConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.compression >= 1.0) {
            return Err(Error::Config("compression must be at least 1".into()));
        }
        if self.max_parallel == 0 {
            return Err(Error::Config("max_parallel must be positive".into()));
        }
        if self.delay_cohorts.is_empty() {
            return Err(Error::Config("at least one delay cohort is required".into()));
        }
        if self.delay_cohorts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "delay cohorts must be sorted ascending and unique".into(),
            ));
        }
        for p in self.profiles() {
            p.validate()?;
        }
        Ok(())
    }

    pub fn profiles(&self) -> [ScrapeProfile; 2] {
        [
            ScrapeProfile {
                profile_id: ProfileId::A,
                user_agent_policy: UserAgentPolicy::Fixed(self.fixed_user_agent.clone()),
                max_redirects: self.max_redirects,
                timeout_secs: self.timeout_secs,
            },
            ScrapeProfile {
                profile_id: ProfileId::B,
                user_agent_policy: UserAgentPolicy::Randomized(self.user_agent_pool.clone()),
                max_redirects: self.max_redirects,
                timeout_secs: self.timeout_secs,
            },
        ]
    }

    pub fn profile(&self, id: ProfileId) -> ScrapeProfile {
        let [a, b] = self.profiles();
        match id {
            ProfileId::A => a,
            ProfileId::B => b,
        }
    }
}

pub(crate) fn keyed_hash(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Deterministic 50/50 profile split keyed by `(seed, visit_id)`. A visit
/// keeps its profile across every delay cohort.
pub fn assign_profile(visit_id: &str, seed: u64) -> ProfileId {
    if keyed_hash(seed, &[visit_id.as_bytes()]) & 1 == 0 {
        ProfileId::A
    } else {
        ProfileId::B
    }
}

/// Maps simulated epoch milliseconds onto the wall clock.
#[derive(Debug, Clone, Copy)]
pub struct SimClock {
    origin_ms: i64,
    compression: f64,
    anchor: Instant,
}

impl SimClock {
    /// Simulated time starts at `origin_ms` now and advances `compression`
    /// times faster than the wall clock.
    pub fn compressed(origin_ms: i64, compression: f64) -> Self {
        Self {
            origin_ms,
            compression,
            anchor: Instant::now(),
        }
    }

    /// Simulated time equals real epoch time.
    pub fn realtime() -> Self {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0);
        Self::compressed(now, 1.0)
    }

    pub fn origin_ms(&self) -> i64 {
        self.origin_ms
    }

    pub fn compression(&self) -> f64 {
        self.compression
    }

    pub fn sim_now_ms(&self) -> i64 {
        let elapsed = self.anchor.elapsed().as_secs_f64() * 1000.0 * self.compression;
        self.origin_ms + elapsed as i64
    }

    /// Wall instant at which simulated time reaches `sim_ms` (the anchor for
    /// times already past).
    pub fn wall_at(&self, sim_ms: i64) -> Instant {
        let ahead = (sim_ms - self.origin_ms).max(0) as f64 / 1000.0 / self.compression;
        self.anchor + Duration::from_secs_f64(ahead)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_assignment_is_deterministic_and_balanced() {
        assert_eq!(assign_profile("v1", 7), assign_profile("v1", 7));
        let a = (0..10_000)
            .filter(|i| assign_profile(&format!("visit-{i}"), 42) == ProfileId::A)
            .count();
        assert!((4800..=5200).contains(&a), "A got {a}");
    }

    #[test]
    fn status_wire_format() {
        assert_eq!(serde_json::to_string(&FetchStatus::Http(404)).unwrap(), "404");
        assert_eq!(
            serde_json::to_string(&FetchStatus::Transport(TransportError::TooManyRedirects))
                .unwrap(),
            "\"too_many_redirects\""
        );
        let s: FetchStatus = serde_json::from_str("\"timeout\"").unwrap();
        assert_eq!(s, FetchStatus::Transport(TransportError::Timeout));
        assert!(s.is_failure());
        assert!(!FetchStatus::Http(301).is_failure());
        assert!(FetchStatus::Http(400).is_failure());
    }

    #[test]
    fn config_validation() {
        HarnessConfig::default().validate().unwrap();
        let bad = HarnessConfig {
            delay_cohorts: vec![30, 0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = HarnessConfig {
            user_agent_pool: vec![],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = HarnessConfig {
            compression: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let cfg = HarnessConfig::from_json(r#"{"compression": 86400, "seed": 3}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.per_host_min_gap, 1000);
        assert!(HarnessConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn clock_mapping() {
        let c = SimClock::compressed(1_000, 86_400.0);
        let thirty_days = 30 * 86_400_000;
        let wall = c.wall_at(1_000 + thirty_days) - c.wall_at(1_000);
        assert!((wall.as_secs_f64() - 30.0).abs() < 1e-9);
        assert!(c.sim_now_ms() >= 1_000);
    }
}
