//! Deterministic news-site generator: privileged renders for in-situ
//! captures and a forward-proxy HTTP server for ex-situ fetching.

pub mod presets;
mod server;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::keyed_hash;
use crate::visit_store::{HtmlRef, VisitRecord};

pub use server::{serve, ServerHandle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    Paywall {
        teaser_fraction: f64,
    },
    LoginWall {
        #[serde(default = "default_teaser")]
        teaser_fraction: f64,
    },
    UaBlock {
        blocked_ua_substring: String,
        after_n_requests: u64,
    },
    DeleteAt {
        sim_time: i64,
    },
    Edit {
        sim_time: i64,
        new_body: String,
    },
    AdChurn {
        n_slots: usize,
        token_len: usize,
    },
    JsWall,
    /// Delays the response by `delay_ms` wall milliseconds.
    Stall {
        delay_ms: u64,
    },
}

fn default_teaser() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub host: String,
    pub path: String,
    pub title: String,
    /// Paragraphs separated by blank lines.
    pub body: String,
    pub category_hint: String,
    #[serde(default)]
    pub behaviors: Vec<Behavior>,
}

impl RouteSpec {
    pub fn url(&self) -> String {
        format!("http://{}{}", self.host, self.path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub sim_epoch: i64,
    pub routes: Vec<RouteSpec>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.routes {
            if !r.path.starts_with('/') {
                return Err(Error::Invalid(format!("route path {:?} must start with '/'", r.path)));
            }
            if !seen.insert((r.host.to_ascii_lowercase(), r.path.as_str())) {
                return Err(Error::Invalid(format!("duplicate route {}{}", r.host, r.path)));
            }
            for b in &r.behaviors {
                match b {
                    Behavior::Paywall { teaser_fraction } | Behavior::LoginWall { teaser_fraction }
                        if !(*teaser_fraction > 0.0 && *teaser_fraction < 1.0) =>
                    {
                        return Err(Error::Invalid(format!(
                            "teaser_fraction on {}{} must lie in (0, 1)",
                            r.host, r.path
                        )));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientContext {
    pub user_agent: String,
    /// Models the logged-in participant of the in-situ capture.
    pub privileged: bool,
    pub sim_time: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub status: u16,
    pub html: String,
}

const PAYWALL_TEXT: &str = "This article is exclusive to subscribers. Continue reading with a \
subscription: the first month costs one euro, payment by credit card or invoice, cancel at any \
time. Already a subscriber? Choose your subscription offer and complete the payment.";

const LOGIN_TEXT: &str = "Please log in to continue reading. Enter your username and password \
or create a free account. Login with your email address or through our app; forgot your \
password? Reset your account login online.";

const JS_TEXT: &str = "Please activate JavaScript in your browser settings to view this page.";

const NAV_SECTIONS: [&str; 6] = ["Home", "Politics", "Economy", "Sports", "Culture", "Science"];

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// Body after every edit due at `sim_time`, latest edit winning.
pub fn current_body(route: &RouteSpec, sim_time: i64) -> &str {
    let mut body = route.body.as_str();
    let mut applied = i64::MIN;
    for b in &route.behaviors {
        if let Behavior::Edit { sim_time: t, new_body } = b {
            if *t <= sim_time && *t >= applied {
                body = new_body;
                applied = *t;
            }
        }
    }
    body
}

/// Leading `fraction` of `body`, cut back to a word boundary.
pub fn teaser_split(body: &str, fraction: f64) -> (&str, &str) {
    let target = (body.chars().count() as f64 * fraction).floor() as usize;
    let byte_at = body.char_indices().nth(target).map_or(body.len(), |(i, _)| i);
    let cut = body[..byte_at].rfind(char::is_whitespace).unwrap_or(0);
    let (lede, rest) = body.split_at(cut);
    (lede.trim_end(), rest.trim_start())
}

fn paragraphs(out: &mut String, text: &str) {
    for para in text.split("\n\n").map(str::trim).filter(|p| !p.is_empty()) {
        let _ = write!(out, "<p>{}</p>\n", escape(para));
    }
}

fn churn_rng(seed: u64, route: &RouteSpec, counter: u64, privileged: bool) -> ChaCha8Rng {
    let key = keyed_hash(
        seed,
        &[
            route.host.as_bytes(),
            route.path.as_bytes(),
            &counter.to_le_bytes(),
            &[privileged as u8],
        ],
    );
    ChaCha8Rng::seed_from_u64(key)
}

fn hex_token(rng: &mut ChaCha8Rng, len: usize) -> String {
    const HEX: &[u8] = b"0123456789abcdef";
    (0..len).map(|_| HEX[rng.gen_range(0..16)] as char).collect()
}

fn word_token(rng: &mut ChaCha8Rng, len: usize) -> String {
    const CONSONANTS: &[u8] = b"bcdfghklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let mut s = String::with_capacity(len);
    while s.len() < len {
        if !s.is_empty() && rng.gen_ratio(1, 6) {
            s.push(' ');
        }
        s.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        if s.len() < len {
            s.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
        }
    }
    s.truncate(len);
    s.trim_end().to_string()
}

/// Renders one route for one client.
///
/// `request_counter` keys ad churn; `blocked` is the outcome of the
/// user-agent block check, which needs shared counters and is decided by
/// the caller.
pub fn render(
    scenario: &ScenarioConfig,
    route: &RouteSpec,
    ctx: &ClientContext,
    request_counter: u64,
    blocked: bool,
) -> Rendered {
    let unprivileged = !ctx.privileged;
    if unprivileged {
        let deleted = route.behaviors.iter().any(|b| matches!(b, Behavior::DeleteAt { sim_time } if ctx.sim_time >= *sim_time));
        if deleted {
            return Rendered { status: 404, html: String::new() };
        }
        if blocked {
            return Rendered {
                status: 403,
                html: "<!DOCTYPE html><html><head><title>Access denied</title></head><body><h1>Access denied</h1></body></html>".into(),
            };
        }
    }

    let mut churn = churn_rng(scenario.seed, route, request_counter, ctx.privileged);
    let ad = route.behaviors.iter().find_map(|b| match b {
        Behavior::AdChurn { n_slots, token_len } => Some((*n_slots, *token_len)),
        _ => None,
    });

    let mut html = String::with_capacity(route.body.len() * 2 + 1024);
    let _ = write!(
        html,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head><meta charset=\"utf-8\"><title>{}</title>",
        escape(&route.title)
    );
    if ad.is_some() {
        let _ = write!(html, "<script>window.pv=\"{}\";</script>", hex_token(&mut churn, 32));
    }
    html.push_str("</head>\n<body>\n");

    if unprivileged && route.behaviors.iter().any(|b| matches!(b, Behavior::JsWall)) {
        let _ = write!(
            html,
            "<div id=\"app\"><p>{}</p></div>\n<noscript>JavaScript required.</noscript>\n</body>\n</html>\n",
            JS_TEXT
        );
        return Rendered { status: 200, html };
    }

    html.push_str("<header class=\"site\"><nav>");
    for s in NAV_SECTIONS {
        let _ = write!(html, "<a href=\"/{}/\">{}</a> ", s.to_lowercase(), s);
    }
    html.push_str("</nav></header>\n<main>\n<article>\n");

    let body = current_body(route, ctx.sim_time);
    let wall = route.behaviors.iter().find_map(|b| match b {
        Behavior::Paywall { teaser_fraction } => Some((*teaser_fraction, PAYWALL_TEXT, "paywall")),
        Behavior::LoginWall { teaser_fraction } => Some((*teaser_fraction, LOGIN_TEXT, "login")),
        _ => None,
    });
    match wall {
        Some((fraction, text, class)) => {
            let (lede, rest) = teaser_split(body, fraction);
            let _ = write!(
                html,
                "<header><h1>{}</h1><p class=\"lead\">{}</p></header>\n",
                escape(&route.title),
                escape(lede)
            );
            if unprivileged {
                let _ = write!(
                    html,
                    "<div class=\"{class}\"><p>{text}</p></div>\n<form class=\"{class}-form\"><input name=\"email\"><button>Continue</button></form>\n"
                );
            } else {
                paragraphs(&mut html, rest);
            }
        }
        None => {
            let _ = write!(html, "<header><h1>{}</h1></header>\n", escape(&route.title));
            paragraphs(&mut html, body);
        }
    }
    html.push_str("</article>\n");

    if let Some((n_slots, token_len)) = ad {
        for slot in 0..n_slots {
            let visible = word_token(&mut churn, token_len);
            let nonce = hex_token(&mut churn, token_len * 2);
            let cb = hex_token(&mut churn, 16);
            let _ = write!(
                html,
                "<aside class=\"ad\" data-slot=\"{slot}\"><p>Sponsored: {visible}</p><script>adq.push({{slot:{slot},id:\"{nonce}\"}});</script><img src=\"/ads/{slot}.gif?cb={cb}\" alt=\"\"></aside>\n"
            );
        }
    }
    let _ = write!(
        html,
        "</main>\n<footer><p>Copyright {} newsroom. All rights reserved.</p></footer>\n</body>\n</html>\n",
        escape(&route.host)
    );
    Rendered { status: 200, html }
}

fn route_key(host: &str, path: &str) -> (String, String) {
    let host = host.split(':').next().unwrap_or(host).to_ascii_lowercase();
    (host, path.to_string())
}

/// A scenario plus the mutable request counters of a running site.
#[derive(Debug)]
pub struct Site {
    scenario: ScenarioConfig,
    index: HashMap<(String, String), usize>,
    requests: Vec<AtomicU64>,
    /// One counter per `(route, ua_block behavior)`.
    ua_hits: HashMap<(usize, usize), AtomicU64>,
}

impl Site {
    pub fn new(scenario: ScenarioConfig) -> Result<Self> {
        scenario.validate()?;
        let mut index = HashMap::new();
        let mut ua_hits = HashMap::new();
        for (i, r) in scenario.routes.iter().enumerate() {
            index.insert(route_key(&r.host, &r.path), i);
            for (j, b) in r.behaviors.iter().enumerate() {
                if matches!(b, Behavior::UaBlock { .. }) {
                    ua_hits.insert((i, j), AtomicU64::new(0));
                }
            }
        }
        let requests = scenario.routes.iter().map(|_| AtomicU64::new(0)).collect();
        Ok(Self { scenario, index, requests, ua_hits })
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn route(&self, host: &str, path: &str) -> Option<(usize, &RouteSpec)> {
        let i = *self.index.get(&route_key(host, path))?;
        Some((i, &self.scenario.routes[i]))
    }

    /// Wall-clock stall configured for a route, if any.
    pub fn stall_ms(&self, host: &str, path: &str) -> Option<u64> {
        self.route(host, path)?.1.behaviors.iter().find_map(|b| match b {
            Behavior::Stall { delay_ms } => Some(*delay_ms),
            _ => None,
        })
    }

    /// Serves one request, advancing the route's counters atomically.
    pub fn handle(&self, host: &str, path: &str, ctx: &ClientContext) -> Rendered {
        let Some((i, route)) = self.route(host, path) else {
            return Rendered { status: 404, html: String::new() };
        };
        let counter = self.requests[i].fetch_add(1, Ordering::SeqCst);
        let mut blocked = false;
        if !ctx.privileged {
            let ua = ctx.user_agent.to_ascii_lowercase();
            for (j, b) in route.behaviors.iter().enumerate() {
                if let Behavior::UaBlock { blocked_ua_substring, after_n_requests } = b {
                    if ua.contains(&blocked_ua_substring.to_ascii_lowercase()) {
                        let prior = self.ua_hits[&(i, j)].fetch_add(1, Ordering::SeqCst);
                        blocked |= prior >= *after_n_requests;
                    }
                }
            }
        }
        render(&self.scenario, route, ctx, counter, blocked)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannedVisit {
    pub participant_id: String,
    pub url: String,
    /// Simulated epoch ms.
    pub time: i64,
    #[serde(default = "default_dwell")]
    pub dwell_ms: i64,
}

fn default_dwell() -> i64 {
    45_000
}

/// Ground-truth in-situ corpus: every planned visit rendered privileged at
/// its own time. Visit ids are `v` plus the plan index.
pub fn synthesize_visit_log(scenario: &ScenarioConfig, plan: &[PlannedVisit]) -> Result<Vec<VisitRecord>> {
    let site = Site::new(scenario.clone())?;
    let mut out = Vec::with_capacity(plan.len());
    for (n, visit) in plan.iter().enumerate() {
        let url = url::Url::parse(&visit.url)
            .map_err(|e| Error::Invalid(format!("planned url {}: {e}", visit.url)))?;
        let host = url.host_str().unwrap_or_default();
        let Some((_, route)) = site.route(host, url.path()) else {
            return Err(Error::Invalid(format!("planned url {} has no route", visit.url)));
        };
        let ctx = ClientContext {
            user_agent: "participant-browser".into(),
            privileged: true,
            sim_time: visit.time,
        };
        let rendered = render(scenario, route, &ctx, n as u64, false);
        out.push(VisitRecord {
            visit_id: format!("v{n:06}"),
            participant_id: visit.participant_id.clone(),
            url: visit.url.clone(),
            html: HtmlRef::Inline(rendered.html),
            visit_start: visit.time,
            visit_end: visit.time + visit.dwell_ms,
        });
    }
    Ok(out)
}
