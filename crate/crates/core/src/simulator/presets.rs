//! Seeded scenario builders used by the acceptance suite and the demo.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{synthesize_visit_log, Behavior, PlannedVisit, RouteSpec, ScenarioConfig};
use crate::error::Result;
use crate::metrics::MS_PER_DAY;
use crate::url_taxonomy::{DomainList, OutletType};
use crate::visit_store::VisitRecord;

/// 2024-01-01T00:00:00Z.
pub const DEFAULT_EPOCH: i64 = 1_704_067_200_000;

const FILLER: &[&str] = &[
    "the", "a", "of", "and", "to", "in", "on", "with", "after", "before", "their", "new", "week",
    "year", "people", "city", "group", "plan", "many", "several", "while", "also", "said",
    "according", "change", "number", "recent", "first", "last", "time", "part", "issue",
    "statement", "decision", "result", "question", "situation", "month", "today", "later",
    "early", "large", "small", "between", "under", "over", "because", "although", "despite",
    "meanwhile", "region", "family", "members", "announced", "expected", "reported", "weeks",
    "days", "morning", "evening", "process", "changes", "plans", "north", "south", "river",
    "street", "bridge", "village", "neighbours", "friends", "visitors",
];

type Topic = (&'static str, &'static str, &'static [&'static str]);

/// `(category, url section, vocabulary)`; every vocabulary word is a
/// baseline-classifier keyword of its category.
pub const TOPICS: &[Topic] = &[
    ("Politics", "politics", &[
        "parliament", "election", "minister", "government", "coalition", "chancellor", "vote",
        "voters", "party", "senate", "policy", "opposition", "campaign", "cabinet",
    ]),
    ("Domestic Commerce", "economy", &[
        "retail", "retailer", "shop", "store", "customers", "consumer", "prices", "sales",
        "merchant", "discount", "purchase", "brand", "shoppers", "supermarket",
    ]),
    ("Technology", "digital", &[
        "software", "internet", "computer", "smartphone", "network", "server", "chip",
        "algorithm", "developer", "platform", "cyber", "devices", "data", "online",
    ]),
    ("Sports", "sports", &[
        "football", "match", "league", "coach", "goal", "championship", "tournament", "season",
        "team", "players", "stadium", "referee", "striker", "victory",
    ]),
    ("Culture", "culture", &[
        "museum", "exhibition", "theatre", "concert", "novel", "artist", "festival", "opera",
        "painting", "orchestra", "poetry", "sculpture", "stage", "literature",
    ]),
    ("Science", "science", &[
        "research", "researchers", "study", "laboratory", "climate", "physics", "biology",
        "scientists", "experiment", "university", "telescope", "species", "genome", "fossil",
    ]),
    ("Health", "health", &[
        "hospital", "doctors", "patients", "vaccine", "clinic", "disease", "therapy", "nurses",
        "medicine", "treatment", "infection", "surgery", "symptoms", "pharmacy",
    ]),
];

pub fn topic(name: &str) -> Option<&'static Topic> {
    TOPICS.iter().find(|t| t.0 == name)
}

/// Deterministic article text.
pub struct TextGen {
    rng: ChaCha8Rng,
    next_id: u64,
}

pub struct Article {
    pub title: String,
    pub path: String,
    pub body: String,
}

fn capitalize(w: &str) -> String {
    w[..1].to_uppercase() + &w[1..]
}

impl TextGen {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), next_id: 100_000 }
    }

    fn sentence(&mut self, words: &[&str], topical: f64) -> String {
        let n = self.rng.gen_range(9..=13);
        let mut out: Vec<String> = (0..n)
            .map(|_| {
                let pool = if self.rng.gen_bool(topical) { words } else { FILLER };
                pool.choose(&mut self.rng).expect("non-empty pool").to_string()
            })
            .collect();
        out[0] = capitalize(&out[0]);
        out.join(" ") + "."
    }

    /// Paragraphs of five sentences, a quarter of the words topical.
    pub fn body(&mut self, topic_name: &str, paragraphs: usize) -> String {
        let words = topic(topic_name).map_or(FILLER, |t| t.2);
        (0..paragraphs)
            .map(|_| (0..5).map(|_| self.sentence(words, 0.25)).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// A leaf-page URL path `/<section>/<slug>-<id>.html` plus title and body.
    pub fn article(&mut self, topic_name: &str, paragraphs: usize) -> Article {
        let (words, section) = topic(topic_name).map_or((FILLER, "news"), |t| (t.2, t.1));
        let long_filler: Vec<&str> = FILLER.iter().copied().filter(|w| w.len() >= 4).collect();
        let mut slug = vec![*words.choose(&mut self.rng).expect("topic words")];
        for _ in 0..3 {
            slug.push(long_filler.choose(&mut self.rng).expect("filler"));
        }
        let title = slug.iter().map(|w| capitalize(w)).collect::<Vec<_>>().join(" ");
        self.next_id += self.rng.gen_range(1..1000);
        let path = format!("/{section}/{}-{}.html", slug.join("-"), self.next_id);
        Article { title, path, body: self.body(topic_name, paragraphs) }
    }
}

/// A scenario, its visit plan and the domain list covering its hosts.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub scenario: ScenarioConfig,
    pub plan: Vec<PlannedVisit>,
    pub domains: Vec<(String, OutletType)>,
}

impl Fixture {
    pub fn domain_list(&self) -> DomainList {
        DomainList::new(self.domains.clone()).expect("preset domains are valid")
    }

    pub fn visits(&self) -> Result<Vec<VisitRecord>> {
        synthesize_visit_log(&self.scenario, &self.plan)
    }

    pub fn route(&self, url: &str) -> Option<&RouteSpec> {
        self.scenario.routes.iter().find(|r| r.url() == url)
    }
}

const OUTLETS: [OutletType; 5] = [
    OutletType::LegacyPress,
    OutletType::Tabloid,
    OutletType::PublicBroadcasting,
    OutletType::DigitalBorn,
    OutletType::PortalNews,
];

pub fn host(i: usize) -> String {
    format!("outlet{i}.test")
}

fn domains(n: usize) -> Vec<(String, OutletType)> {
    (0..n).map(|i| (host(i), OUTLETS[i % OUTLETS.len()])).collect()
}

pub const VISIT_SPACING_MS: i64 = 60_000;

/// Visits every route `per_route` times, interleaved, one visit per minute
/// starting at `start`.
fn plan_round_robin(routes: &[RouteSpec], per_route: usize, participants: usize, start: i64) -> Vec<PlannedVisit> {
    let mut plan = Vec::with_capacity(routes.len() * per_route);
    for round in 0..per_route {
        for r in routes {
            let n = plan.len();
            plan.push(PlannedVisit {
                participant_id: format!("p{:03}", n % participants),
                url: r.url(),
                time: start + n as i64 * VISIT_SPACING_MS,
                dwell_ms: 30_000 + (round as i64 % 7) * 5_000,
            });
        }
    }
    plan
}

/// Open routes cycling through the topics, host `offset + i % hosts`.
fn open_routes(gen: &mut TextGen, n: usize, hosts: usize, offset: usize, paragraphs: usize) -> Vec<RouteSpec> {
    (0..n)
        .map(|i| {
            let topic = TOPICS[i % TOPICS.len()].0;
            let a = gen.article(topic, paragraphs);
            RouteSpec {
                host: host(offset + i % hosts),
                path: a.path,
                title: a.title,
                body: a.body,
                category_hint: topic.into(),
                behaviors: Vec::new(),
            }
        })
        .collect()
}

fn fixture(seed: u64, routes: Vec<RouteSpec>, plan: Vec<PlannedVisit>, hosts: usize) -> Fixture {
    Fixture {
        scenario: ScenarioConfig { seed, sim_epoch: DEFAULT_EPOCH, routes },
        plan,
        domains: domains(hosts),
    }
}

/// `paywalled_per_ten` of every ten routes carry a paywall.
pub fn paywall(seed: u64, n_routes: usize, paywalled_per_ten: usize, teaser_fraction: f64) -> Fixture {
    let mut gen = TextGen::new(seed);
    let mut routes = open_routes(&mut gen, n_routes, 5, 0, 12);
    for (i, r) in routes.iter_mut().enumerate() {
        if i % 10 < paywalled_per_ten {
            r.behaviors.push(Behavior::Paywall { teaser_fraction });
        }
    }
    let plan = plan_round_robin(&routes, 1, 40, DEFAULT_EPOCH);
    fixture(seed, routes, plan, 5)
}

/// Every route carries rotating ad slots around the site furniture.
pub fn ad_churn(seed: u64, n_routes: usize, n_slots: usize, token_len: usize) -> Fixture {
    let mut gen = TextGen::new(seed);
    let mut routes = open_routes(&mut gen, n_routes, 5, 0, 6);
    for r in &mut routes {
        r.behaviors.push(Behavior::AdChurn { n_slots, token_len });
    }
    let plan = plan_round_robin(&routes, 2, 40, DEFAULT_EPOCH);
    fixture(seed, routes, plan, 5)
}

/// `deleted_per_ten` of every ten routes disappear `delete_day` days after
/// the epoch; each route is visited `per_route` times.
pub fn deletion(seed: u64, n_routes: usize, deleted_per_ten: usize, delete_day: i64, per_route: usize) -> Fixture {
    let mut gen = TextGen::new(seed);
    let mut routes = open_routes(&mut gen, n_routes, 5, 0, 8);
    for (i, r) in routes.iter_mut().enumerate() {
        if i % 10 < deleted_per_ten {
            r.behaviors.push(Behavior::DeleteAt { sim_time: DEFAULT_EPOCH + delete_day * MS_PER_DAY });
        }
    }
    let plan = plan_round_robin(&routes, per_route, 60, DEFAULT_EPOCH);
    fixture(seed, routes, plan, 5)
}

/// Host 0 blocks user agents containing `blocked_ua` after `after_n`
/// matching requests per route; hosts 1..=3 are open.
pub fn ua_block(
    seed: u64,
    blocked_ua: &str,
    after_n: u64,
    blocked_routes: usize,
    visits_per_blocked_route: usize,
    other_routes: usize,
    visits_per_other_route: usize,
) -> Fixture {
    let mut gen = TextGen::new(seed);
    let mut routes = open_routes(&mut gen, blocked_routes, 1, 0, 6);
    for r in &mut routes {
        r.behaviors.push(Behavior::UaBlock {
            blocked_ua_substring: blocked_ua.into(),
            after_n_requests: after_n,
        });
    }
    let others = open_routes(&mut gen, other_routes, 3, 1, 6);
    let mut plan = plan_round_robin(&routes, visits_per_blocked_route, 100, DEFAULT_EPOCH);
    let start = DEFAULT_EPOCH + plan.len() as i64 * VISIT_SPACING_MS;
    plan.extend(plan_round_robin(&others, visits_per_other_route, 100, start));
    routes.extend(others);
    fixture(seed, routes, plan, 4)
}

/// Commerce coverage hidden behind walls spread over all hosts: paywalls
/// (commerce wall text), login walls (technology wall text) and script
/// walls. Every other topic is open.
pub fn bias(seed: u64) -> Fixture {
    let mut gen = TextGen::new(seed);
    let hosts = 5;
    let open_mix: [(&str, usize); 6] = [
        ("Politics", 40),
        ("Sports", 30),
        ("Culture", 30),
        ("Science", 25),
        ("Health", 20),
        ("Technology", 10),
    ];
    let mut specs: Vec<(&str, Article, Vec<Behavior>)> = Vec::new();
    for (topic, n) in open_mix {
        for _ in 0..n {
            specs.push((topic, gen.article(topic, 8), Vec::new()));
        }
    }
    for i in 0..40 {
        let wall = match i % 8 {
            0..=2 => Behavior::Paywall { teaser_fraction: 0.1 },
            3..=5 => Behavior::LoginWall { teaser_fraction: 0.1 },
            _ => Behavior::JsWall,
        };
        specs.push(("Domestic Commerce", gen.article("Domestic Commerce", 8), vec![wall]));
    }
    let routes: Vec<RouteSpec> = specs
        .into_iter()
        .enumerate()
        .map(|(i, (topic, a, behaviors))| RouteSpec {
            host: host(i % hosts),
            path: a.path,
            title: a.title,
            body: a.body,
            category_hint: topic.into(),
            behaviors,
        })
        .collect();
    let plan = plan_round_robin(&routes, 1, 50, DEFAULT_EPOCH);
    fixture(seed, routes, plan, hosts)
}

/// `ok` open routes, then `missing` routes that always answer 404, then
/// `stalled` routes that hang for `stall_ms` before answering.
pub fn errors(seed: u64, ok: usize, missing: usize, stalled: usize, stall_ms: u64) -> Fixture {
    let mut gen = TextGen::new(seed);
    let mut routes = open_routes(&mut gen, ok + missing + stalled, 4, 0, 4);
    for (i, r) in routes.iter_mut().enumerate() {
        if i >= ok + missing {
            r.behaviors.push(Behavior::Stall { delay_ms: stall_ms });
        } else if i >= ok {
            r.behaviors.push(Behavior::DeleteAt { sim_time: DEFAULT_EPOCH });
        }
    }
    let plan = plan_round_robin(&routes, 1, 20, DEFAULT_EPOCH);
    fixture(seed, routes, plan, 4)
}

/// Small mixed scenario: ads on every page, some paywalls and login walls,
/// deletions, a late edit and one host blocking the fixed scraper
/// signature.
pub fn demo(seed: u64) -> Fixture {
    let mut gen = TextGen::new(seed);
    let hosts = 4;
    let mut routes = open_routes(&mut gen, 56, hosts, 0, 6);
    for (i, r) in routes.iter_mut().enumerate() {
        r.behaviors.push(Behavior::AdChurn { n_slots: 3, token_len: 40 });
        match i % 10 {
            1 => r.behaviors.push(Behavior::Paywall { teaser_fraction: 0.1 }),
            3 => r.behaviors.push(Behavior::LoginWall { teaser_fraction: 0.1 }),
            5 => r.behaviors.push(Behavior::DeleteAt { sim_time: DEFAULT_EPOCH + 15 * MS_PER_DAY }),
            7 => r.behaviors.push(Behavior::Edit {
                sim_time: DEFAULT_EPOCH + 20 * MS_PER_DAY,
                new_body: format!("{}\n\nUpdate: the story was revised after publication.", r.body),
            }),
            _ => {}
        }
        if r.host == host(0) {
            r.behaviors.push(Behavior::UaBlock {
                blocked_ua_substring: "python-requests".into(),
                after_n_requests: 3,
            });
        }
    }
    let plan = plan_round_robin(&routes, 2, 30, DEFAULT_EPOCH);
    fixture(seed, routes, plan, hosts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::url_taxonomy::{identify_article, UrlRules};

    #[test]
    fn preset_urls_are_articles() {
        let rules = UrlRules::default();
        for f in [paywall(1, 30, 3, 0.1), bias(2), demo(3), ua_block(4, "python", 20, 2, 3, 6, 2)] {
            let domains = f.domain_list();
            for r in &f.scenario.routes {
                let d = identify_article(&r.url(), &domains, &rules);
                assert!(d.is_article, "{} {:?}", r.url(), d.reasons);
            }
            f.scenario.validate().unwrap();
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(paywall(9, 20, 3, 0.1).scenario, paywall(9, 20, 3, 0.1).scenario);
        assert_ne!(paywall(9, 20, 3, 0.1).scenario, paywall(10, 20, 3, 0.1).scenario);
    }

    #[test]
    fn ua_block_hosts() {
        let f = ua_block(4, "python", 20, 2, 3, 6, 2);
        let blocked = f.scenario.routes.iter().filter(|r| r.host == host(0)).count();
        assert_eq!(blocked, 2);
        assert_eq!(f.plan.len(), 2 * 3 + 6 * 2);
    }
}
