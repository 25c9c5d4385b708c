use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use super::{
    keyed_hash, FetchStatus, HarnessConfig, ScrapeProfile, ScrapeResult, ScrapeTask, SimClock,
    TransportError, UserAgentPolicy,
};
use crate::error::{Error, Result};

/// One issued request, for auditing politeness.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestTrace {
    pub host: String,
    pub visit_id: String,
    pub delay_days: u32,
    /// Wall milliseconds since the run started.
    pub wall_ms: f64,
    pub sim_ms: i64,
    pub user_agent: String,
}

#[derive(Debug, Clone, Default)]
pub struct FetchRun {
    /// Sorted by `(visit_id, delay_days)`.
    pub results: Vec<ScrapeResult>,
    /// Sorted by wall time.
    pub trace: Vec<RequestTrace>,
}

/// Shared HTTP client plus the settings every fetch needs.
#[derive(Clone)]
pub struct Fetcher {
    client: reqwest::Client,
    seed: u64,
}

impl Fetcher {
    pub fn new(config: &HarnessConfig) -> Result<Self> {
        let mut builder = reqwest::Client::builder()
            .redirect(reqwest::redirect::Policy::limited(config.max_redirects))
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .no_proxy();
        if let Some(proxy) = &config.proxy {
            let p = reqwest::Proxy::all(proxy)
                .map_err(|e| Error::Config(format!("invalid proxy {proxy}: {e}")))?;
            builder = builder.proxy(p);
        }
        let client = builder
            .build()
            .map_err(|e| Error::Http(format!("client construction failed: {e}")))?;
        Ok(Self {
            client,
            seed: config.seed,
        })
    }

    /// User agent for one request. The randomized draw is keyed by the task
    /// so it does not depend on completion order.
    pub fn user_agent(&self, task: &ScrapeTask, profile: &ScrapeProfile) -> String {
        match &profile.user_agent_policy {
            UserAgentPolicy::Fixed(ua) => ua.clone(),
            UserAgentPolicy::Randomized(pool) => {
                let key = keyed_hash(
                    self.seed,
                    &[task.visit_id.as_bytes(), &task.delay_days.to_le_bytes()],
                );
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                pool.choose(&mut rng).cloned().unwrap_or_default()
            }
        }
    }
}

fn classify(err: &reqwest::Error) -> TransportError {
    if err.is_timeout() {
        return TransportError::Timeout;
    }
    if err.is_redirect() {
        return TransportError::TooManyRedirects;
    }
    let mut chain = String::new();
    let mut source: Option<&dyn StdError> = Some(err);
    while let Some(e) = source {
        chain.push_str(&e.to_string().to_lowercase());
        chain.push(' ');
        source = e.source();
    }
    if chain.contains("dns") || chain.contains("resolve") || chain.contains("lookup") {
        TransportError::Dns
    } else if chain.contains("tls") || chain.contains("certificate") || chain.contains("handshake")
    {
        TransportError::Tls
    } else if err.is_connect() {
        TransportError::Connect
    } else if chain.contains("timed out") {
        TransportError::Timeout
    } else {
        TransportError::Protocol
    }
}

/// Issues exactly one GET. Every failure is reported through `status`.
pub async fn fetch_one(
    fetcher: &Fetcher,
    task: &ScrapeTask,
    profile: &ScrapeProfile,
    user_agent: &str,
    fetch_time: i64,
) -> ScrapeResult {
    let failed = |status: FetchStatus, final_url: String| ScrapeResult {
        visit_id: task.visit_id.clone(),
        profile: task.profile,
        delay_days: task.delay_days,
        fetch_time,
        status,
        final_url,
        html: Vec::new(),
    };
    let request = fetcher
        .client
        .get(&task.url)
        .header(reqwest::header::USER_AGENT, user_agent)
        .timeout(Duration::from_secs_f64(profile.timeout_secs));
    let response = match request.send().await {
        Ok(r) => r,
        Err(e) => return failed(FetchStatus::Transport(classify(&e)), task.url.clone()),
    };
    let code = response.status().as_u16();
    let final_url = response.url().to_string();
    if code >= 400 {
        return failed(FetchStatus::Http(code), final_url);
    }
    match response.bytes().await {
        Ok(body) => ScrapeResult {
            visit_id: task.visit_id.clone(),
            profile: task.profile,
            delay_days: task.delay_days,
            fetch_time,
            status: FetchStatus::Http(code),
            final_url,
            html: body.to_vec(),
        },
        Err(e) => failed(FetchStatus::Transport(classify(&e)), final_url),
    }
}

fn host_key(url: &str) -> String {
    url::Url::parse(url)
        .ok()
        .and_then(|u| u.host_str().map(|h| h.to_ascii_lowercase()))
        .unwrap_or_default()
}

/// Runs a schedule: each host's tasks are fetched one at a time in schedule
/// order, no earlier than their scheduled instant and at least
/// `per_host_min_gap` after the previous request to that host, with at most
/// `max_parallel` requests in flight overall.
pub async fn run_fetches(
    tasks: &[ScrapeTask],
    config: &HarnessConfig,
    clock: SimClock,
) -> Result<FetchRun> {
    config.validate()?;
    let fetcher = Fetcher::new(config)?;
    let profiles = Arc::new(config.profiles());
    let semaphore = Arc::new(Semaphore::new(config.max_parallel));
    let gap = Duration::from_millis(config.per_host_min_gap);
    let run_start = Instant::now();

    let mut by_host: BTreeMap<String, Vec<ScrapeTask>> = BTreeMap::new();
    for t in tasks {
        by_host.entry(host_key(&t.url)).or_default().push(t.clone());
    }

    let mut workers = JoinSet::new();
    for (host, queue) in by_host {
        let fetcher = fetcher.clone();
        let profiles = Arc::clone(&profiles);
        let semaphore = Arc::clone(&semaphore);
        workers.spawn(async move {
            let mut results = Vec::with_capacity(queue.len());
            let mut trace = Vec::with_capacity(queue.len());
            let mut last: Option<Instant> = None;
            for task in queue {
                tokio::time::sleep_until(clock.wall_at(task.scheduled_time).into()).await;
                if let Some(prev) = last {
                    tokio::time::sleep_until((prev + gap).into()).await;
                }
                let permit = semaphore.acquire().await.expect("semaphore never closed");
                let started = Instant::now();
                last = Some(started);
                let profile = match task.profile {
                    super::ProfileId::A => &profiles[0],
                    super::ProfileId::B => &profiles[1],
                };
                let ua = fetcher.user_agent(&task, profile);
                let sim_ms = clock.sim_now_ms().max(task.scheduled_time);
                trace.push(RequestTrace {
                    host: host.clone(),
                    visit_id: task.visit_id.clone(),
                    delay_days: task.delay_days,
                    wall_ms: (started - run_start).as_secs_f64() * 1000.0,
                    sim_ms,
                    user_agent: ua.clone(),
                });
                let result = fetch_one(&fetcher, &task, profile, &ua, sim_ms).await;
                drop(permit);
                log::debug!("{} {} -> {}", task.visit_id, task.delay_days, result.status);
                results.push(result);
            }
            (results, trace)
        });
    }

    let mut run = FetchRun::default();
    while let Some(joined) = workers.join_next().await {
        let (results, trace) =
            joined.map_err(|e| Error::Http(format!("fetch worker failed: {e}")))?;
        run.results.extend(results);
        run.trace.extend(trace);
    }
    run.results
        .sort_by(|a, b| a.visit_id.cmp(&b.visit_id).then(a.delay_days.cmp(&b.delay_days)));
    run.trace.sort_by(|a, b| a.wall_ms.total_cmp(&b.wall_ms));
    Ok(run)
}
