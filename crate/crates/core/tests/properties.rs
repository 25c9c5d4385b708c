use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use scrape_audit::bias::{compare_distributions, distribution, migration_matrix, ContentLabel, DebiasPlan, RelativeDiff, Side};
use scrape_audit::extraction::{cleaned_text, raw_text};
use scrape_audit::harness::{assign_profile, build_schedule, HarnessConfig};
use scrape_audit::metrics::{chi_square_sf, levenshtein, normalized_distance, rolling_mean};
use scrape_audit::simulator::presets::TextGen;
use scrape_audit::simulator::{render, Behavior, ClientContext, RouteSpec, ScenarioConfig};
use scrape_audit::url_taxonomy::{categorize_by_path, identify_article, is_homepage, is_leaf_page, DomainList, OutletType, UrlRules};
use scrape_audit::visit_store::{dedup_refreshes, ingest_visit_log, write_visit_log, HtmlRef, VisitRecord};

const DAY_MS: i64 = 86_400_000;

fn visit(id: usize, participant: u8, url: u8, start: i64, dwell: i64) -> VisitRecord {
    VisitRecord {
        visit_id: format!("v{id:04}"),
        participant_id: format!("p{participant}"),
        url: format!("https://news{url}.test/politics/story-about-things-{url}"),
        html: HtmlRef::Inline(format!("<html><body><p>visit {id}</p></body></html>")),
        visit_start: start,
        visit_end: start + dwell,
    }
}

/// Visits over few participants and URLs so refresh chains are common.
fn visits() -> impl Strategy<Value = Vec<VisitRecord>> {
    prop::collection::vec((0u8..3, 0u8..3, 0i64..200_000, 0i64..30_000), 0..40).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (p, u, start, dwell))| visit(i, p, u, 1_700_000_000_000 + start, dwell))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dedup_is_idempotent_and_selects_a_subset(v in visits(), window in 0u64..60) {
        let once = dedup_refreshes(&v, window);
        prop_assert!(once.len() <= v.len());
        for s in &once {
            prop_assert!(v.contains(s));
        }
        prop_assert_eq!(dedup_refreshes(&once, window), once);
    }

    #[test]
    fn dedup_with_zero_window_keeps_distinct_starts(v in visits()) {
        let mut starts = BTreeSet::new();
        let distinct: Vec<VisitRecord> = v.into_iter().filter(|r| starts.insert(r.visit_start)).collect();
        let mut kept = dedup_refreshes(&distinct, 0);
        let mut expected = distinct.clone();
        kept.sort_by(|a, b| a.visit_id.cmp(&b.visit_id));
        expected.sort_by(|a, b| a.visit_id.cmp(&b.visit_id));
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn visit_log_round_trips(v in visits()) {
        let mut first = Vec::new();
        write_visit_log(&mut first, &v).unwrap();
        let back = ingest_visit_log(first.as_slice(), true).unwrap();
        prop_assert!(back.rejected.is_empty());
        prop_assert_eq!(&back.records, &v);
        let mut second = Vec::new();
        write_visit_log(&mut second, &back.records).unwrap();
        prop_assert_eq!(first, second);
    }
}

fn url_strategy() -> impl Strategy<Value = String> {
    let segment = prop_oneof![
        Just("politik".to_string()),
        Just("sport".to_string()),
        Just("wirtschaft".to_string()),
        Just("impressum".to_string()),
        Just("index.html".to_string()),
        "[a-z]{2,9}(-[a-z]{2,9}){0,6}",
        "[a-z]{0,6}-?[0-9]{1,9}(\\.html)?",
    ];
    (
        prop_oneof![Just("www.zeitung.test"), Just("sub.zeitung.test"), Just("example.com"), Just("zeitung.test")],
        prop::collection::vec(segment, 0..5),
        prop::option::of("[a-z]{1,5}=[0-9]{1,3}"),
    )
        .prop_map(|(host, segs, query)| {
            let mut u = format!("https://{host}/{}", segs.join("/"));
            if let Some(q) = query {
                u.push('?');
                u.push_str(&q);
            }
            u
        })
}

fn domains() -> DomainList {
    DomainList::new([("zeitung.test".to_string(), OutletType::LegacyPress)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn article_decisions_are_deterministic(url in url_strategy()) {
        let (d, rules) = (domains(), UrlRules::default());
        prop_assert_eq!(identify_article(&url, &d, &rules), identify_article(&url, &d, &rules));
    }

    #[test]
    fn homepage_and_leaf_are_exclusive(url in url_strategy()) {
        let rules = UrlRules::default();
        prop_assert!(!(is_homepage(&url, &rules) && is_leaf_page(&url, &rules)));
    }

    #[test]
    fn path_categories_come_from_the_declared_set(url in url_strategy()) {
        let rules = UrlRules::default();
        let declared = rules.categories();
        for c in categorize_by_path(&url, &rules) {
            prop_assert!(c == "uncategorized" || declared.contains(c.as_str()), "{c}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_is_reproducible_and_monotone(v in visits().prop_filter("non-empty", |v| !v.is_empty()), seed in any::<u64>()) {
        let cfg = HarnessConfig { seed, delay_cohorts: vec![0, 7, 30, 90], ..Default::default() };
        let a = build_schedule(&v, &cfg).unwrap();
        let b = build_schedule(&v, &cfg).unwrap();
        prop_assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        prop_assert_eq!(a.tasks.len(), v.len() * cfg.delay_cohorts.len());
        let mut tasks = a.tasks.clone();
        tasks.sort_by_key(|t| t.scheduled_time);
        let mut last: BTreeMap<&str, u32> = BTreeMap::new();
        for t in &tasks {
            if let Some(prev) = last.insert(t.visit_id.as_str(), t.delay_days) {
                prop_assert!(prev < t.delay_days);
            }
            let anchor = v.iter().find(|r| r.visit_id == t.visit_id).unwrap().visit_end;
            prop_assert_eq!(t.scheduled_time, anchor + i64::from(t.delay_days) * DAY_MS);
            prop_assert_eq!(t.profile, assign_profile(&t.visit_id, seed));
        }
    }
}

#[test]
fn empty_visit_set_is_not_scheduled() {
    assert!(build_schedule(&[], &HarnessConfig::default()).is_err());
}

fn plain_route(body: String, behaviors: Vec<Behavior>) -> RouteSpec {
    RouteSpec {
        host: "news.test".into(),
        path: "/politics/council-meets-again-12345".into(),
        title: "Council meets again".into(),
        body,
        category_hint: "Politics".into(),
        behaviors,
    }
}

fn scenario(seed: u64, route: &RouteSpec) -> ScenarioConfig {
    ScenarioConfig { seed, sim_epoch: 1_700_000_000_000, routes: vec![route.clone()] }
}

fn ctx(privileged: bool, sim_time: i64) -> ClientContext {
    ClientContext { user_agent: "Mozilla/5.0 test".into(), privileged, sim_time }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn render_is_deterministic(seed in any::<u64>(), counter in 0u64..50, t in 0i64..100 * DAY_MS, privileged in any::<bool>()) {
        let route = plain_route(TextGen::new(seed).body("Politics", 4), vec![Behavior::AdChurn { n_slots: 3, token_len: 40 }]);
        let s = scenario(seed, &route);
        let c = ctx(privileged, s.sim_epoch + t);
        let a = render(&s, &route, &c, counter, false);
        let b = render(&s, &route, &c, counter, false);
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(a.html, b.html);
    }

    #[test]
    fn privileged_render_without_edits_ignores_time(seed in any::<u64>(), t1 in 0i64..365 * DAY_MS, t2 in 0i64..365 * DAY_MS) {
        let route = plain_route(TextGen::new(seed).body("Sports", 4), vec![Behavior::Paywall { teaser_fraction: 0.2 }]);
        let s = scenario(seed, &route);
        let a = render(&s, &route, &ctx(true, s.sim_epoch + t1), 0, false);
        let b = render(&s, &route, &ctx(true, s.sim_epoch + t2), 0, false);
        prop_assert_eq!(a.html, b.html);
    }

    #[test]
    fn paywall_hides_all_but_the_teaser(seed in any::<u64>(), teaser in 0.0f64..0.5) {
        // Article length of the shipped paywall fixtures; the title and wall
        // text are shared by both renders, so much shorter bodies sit closer.
        let route = plain_route(TextGen::new(seed).body("Economy", 12), vec![Behavior::Paywall { teaser_fraction: teaser }]);
        let s = scenario(seed, &route);
        let full = render(&s, &route, &ctx(true, s.sim_epoch), 0, false);
        let walled = render(&s, &route, &ctx(false, s.sim_epoch), 0, false);
        let d = normalized_distance(&cleaned_text(&full.html), &cleaned_text(&walled.html));
        prop_assert!(d >= 1.0 - teaser - 0.1, "distance {d} teaser {teaser}");
    }
}

fn html_strategy() -> impl Strategy<Value = String> {
    let block = prop_oneof![
        "[A-Za-z]{1,10}( [A-Za-z]{1,10}){3,30}\\.".prop_map(|t| format!("<p>{t}</p>")),
        "[A-Za-z]{1,8}( [A-Za-z]{1,8}){0,3}".prop_map(|t| format!("<nav><a href=\"/x\">{t}</a></nav>")),
        "[A-Za-z]{1,8}( [A-Za-z]{1,8}){0,5}".prop_map(|t| format!("<div class=\"ad\">{t}</div>")),
        "[A-Za-z]{1,8}( [A-Za-z]{1,8}){0,5}".prop_map(|t| format!("<h2>{t}</h2>")),
        "[a-z]{1,8}".prop_map(|t| format!("<script>var {t} = 1;</script>")),
    ];
    prop::collection::vec(block, 0..12)
        .prop_map(|blocks| format!("<html><head><title>t</title></head><body><article>{}</article></body></html>", blocks.concat()))
}

fn wrap(text: &str) -> String {
    let escaped = text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    format!("<body>{escaped}</body>")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn extraction_is_stable_under_rewrapping(html in html_strategy()) {
        let raw = raw_text(&html);
        prop_assert_eq!(raw_text(&wrap(&raw)), raw.clone());
        let cleaned = cleaned_text(&html);
        prop_assert_eq!(raw_text(&wrap(&cleaned)), cleaned);
    }

    #[test]
    fn cleaning_only_deletes_tokens(html in html_strategy()) {
        let raw: BTreeSet<String> = raw_text(&html).split_whitespace().map(str::to_string).collect();
        for t in cleaned_text(&html).split_whitespace() {
            prop_assert!(raw.contains(t), "{t}");
        }
    }

    #[test]
    fn extraction_is_deterministic(html in html_strategy()) {
        prop_assert_eq!(raw_text(&html), raw_text(&html));
        prop_assert_eq!(cleaned_text(&html), cleaned_text(&html));
    }

    #[test]
    fn ad_churn_pages_shrink_with_each_representation(seed in any::<u64>(), counter in 0u64..20, slots in 1usize..8) {
        let route = plain_route(TextGen::new(seed).body("Culture", 5), vec![Behavior::AdChurn { n_slots: slots, token_len: 80 }]);
        let s = scenario(seed, &route);
        let html = render(&s, &route, &ctx(false, s.sim_epoch), counter, false).html;
        let (raw, cleaned) = (raw_text(&html), cleaned_text(&html));
        prop_assert!(cleaned.chars().count() <= raw.chars().count());
        prop_assert!(raw.chars().count() <= html.chars().count());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn levenshtein_is_a_bounded_symmetric_distance(a in "[a-c ]{0,80}", b in "[a-c ]{0,80}") {
        let d = levenshtein(&a, &b);
        prop_assert_eq!(d, levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(d <= a.chars().count().max(b.chars().count()));
    }

    #[test]
    fn normalized_distance_hits_one_exactly_at_the_extremes(a in "[ab]{0,12}", b in "[ab]{0,12}") {
        let n = normalized_distance(&a, &b);
        prop_assert!((0.0..=1.0).contains(&n));
        let longer = a.chars().count().max(b.chars().count());
        let one_empty = a.is_empty() != b.is_empty();
        let extreme = longer > 0 && levenshtein(&a, &b) == longer;
        prop_assert_eq!(n == 1.0, one_empty || extreme);
    }

    #[test]
    fn chi_square_survival_decreases(x in 0.0f64..200.0, dx in 0.001f64..50.0, df in 1usize..40) {
        prop_assert!(chi_square_sf(x + dx, df) <= chi_square_sf(x, df));
    }
}

fn points() -> impl Strategy<Value = Vec<(i64, f64)>> {
    prop::collection::vec((0i64..60 * DAY_MS, 0.0f64..1.0), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rolling_mean_ignores_input_order((p, shuffled) in points().prop_flat_map(|p| (Just(p.clone()), Just(p).prop_shuffle())), window in 1u32..14) {
        let a = rolling_mean(&p, window, 0.95);
        let b = rolling_mean(&shuffled, window, 0.95);
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.window_end_ms, y.window_end_ms);
            prop_assert_eq!(x.n, y.n);
            prop_assert!((x.mean - y.mean).abs() < 1e-9);
            prop_assert!((x.ci_low - y.ci_low).abs() < 1e-9);
            prop_assert!((x.ci_high - y.ci_high).abs() < 1e-9);
        }
    }
}

const CATEGORIES: [&str; 5] = ["Politics", "Sports", "Economy", "Culture", "Technology"];
const DOMAINS: [&str; 3] = ["a.test", "b.test", "c.test"];

/// Paired in- and ex-situ labels sharing visit ids.
fn label_pairs() -> impl Strategy<Value = (Vec<ContentLabel>, Vec<ContentLabel>)> {
    prop::collection::vec((0usize..3, 0usize..5, 0.0f64..1.0, 0usize..5, 0.0f64..1.0), 0..80).prop_map(|rows| {
        let mut ins = Vec::new();
        let mut exs = Vec::new();
        for (i, (d, ci, si, ce, se)) in rows.into_iter().enumerate() {
            let mk = |side, c: usize, score| ContentLabel {
                visit_id: format!("v{i}"),
                side,
                domain: DOMAINS[d].into(),
                category: CATEGORIES[c].into(),
                score,
            };
            ins.push(mk(Side::InSitu, ci, si));
            exs.push(mk(Side::ExSitu, ce, se));
        }
        (ins, exs)
    })
}

fn sign(r: &RelativeDiff) -> i8 {
    match r {
        RelativeDiff::Infinite => 1,
        RelativeDiff::Finite(x) if *x > 1e-12 => 1,
        RelativeDiff::Finite(x) if *x < -1e-12 => -1,
        RelativeDiff::Finite(_) => 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn untouched_distribution_is_the_raw_count((ins, _) in label_pairs()) {
        let d = distribution(&ins, &DebiasPlan::default());
        let mut raw: BTreeMap<String, usize> = BTreeMap::new();
        for l in &ins {
            *raw.entry(l.category.clone()).or_insert(0) += 1;
        }
        prop_assert_eq!(d.total, ins.len());
        prop_assert_eq!(d.counts, raw);
    }

    #[test]
    fn exclusion_filters_commute((ins, _) in label_pairs(), dom in 0usize..3, cat in 0usize..5, tau in 0.0f64..0.9) {
        let by_domain = |l: &&ContentLabel| l.domain != DOMAINS[dom];
        let by_category = |l: &&ContentLabel| l.category != CATEGORIES[cat];
        let domain_first: Vec<ContentLabel> = ins.iter().filter(by_domain).filter(by_category).cloned().collect();
        let category_first: Vec<ContentLabel> = ins.iter().filter(by_category).filter(by_domain).cloned().collect();
        let threshold = DebiasPlan { score_threshold: tau, ..Default::default() };
        let combined = DebiasPlan {
            score_threshold: tau,
            excluded_domains: [DOMAINS[dom].to_string()].into(),
            excluded_categories: [CATEGORIES[cat].to_string()].into(),
            ..Default::default()
        };
        let a = distribution(&domain_first, &threshold).counts;
        prop_assert_eq!(&a, &distribution(&category_first, &threshold).counts);
        prop_assert_eq!(&a, &distribution(&ins, &combined).counts);
    }

    #[test]
    fn swapping_sides_flips_relative_differences((ins, exs) in label_pairs()) {
        let plan = DebiasPlan::default();
        let (di, de) = (distribution(&ins, &plan), distribution(&exs, &plan));
        let forward = compare_distributions(&di, &de);
        let backward = compare_distributions(&de, &di);
        prop_assert_eq!(forward.rows.len(), backward.rows.len());
        for (f, b) in forward.rows.iter().zip(&backward.rows) {
            prop_assert_eq!(&f.category, &b.category);
            prop_assert_eq!(sign(&f.relative_diff), -sign(&b.relative_diff));
        }
    }

    #[test]
    fn migration_rows_match_in_situ_counts((ins, exs) in label_pairs(), tau in 0.0f64..1.0) {
        let m = migration_matrix(&ins, &exs, tau);
        let counts = distribution(&ins, &DebiasPlan { score_threshold: tau, ..Default::default() }).counts;
        prop_assert_eq!(&m.row_totals, &counts);
        for (row, n) in &m.row_totals {
            let sum: usize = m.cells.iter().filter(|c| &c.from == row).map(|c| c.count).sum();
            prop_assert_eq!(sum, *n);
        }
        prop_assert_eq!(m.unmatched, 0);
    }
}
