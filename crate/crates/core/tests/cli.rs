use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_scrape-audit");
const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/fixtures");

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(name: &str) -> String {
    format!("{FIXTURES}/{name}")
}

fn bundle(dir: &Path, preset: &str) -> PathBuf {
    let o = run(&["--seed", "3", "simulate", "--preset", preset, "--write", "bundle"], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    dir.join("bundle/manifest.json")
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    std::fs::write(dir.join("m.json"), r#"{"visit_log":"v.jsonl","output_dir":"out"}"#).unwrap();
    let o = run(&["audit", "m.json"], dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("domain_list"), "{}", stderr(&o));

    std::fs::write(dir.join("empty.csv"), "").unwrap();
    let o = run(&["evaluate-urls", "empty.csv", "--domains", &fixture("labeled_domains.csv")], dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty"));

    std::fs::create_dir(dir.join("run")).unwrap();
    assert_eq!(run(&["report", "run"], dir).status.code(), Some(2));
    assert_eq!(run(&["--confidence", "90", "report", "run"], dir).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"], dir).status.code(), Some(2));
    assert_eq!(run(&["simulate"], dir).status.code(), Some(2));
    assert_eq!(run(&["--help"], dir).status.code(), Some(0));
}

#[test]
fn evaluate_urls_prints_scores() {
    let o = run(
        &["evaluate-urls", &fixture("labeled_urls.csv"), "--domains", &fixture("labeled_domains.csv"), "--json"],
        Path::new(FIXTURES),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let f1 = v["f1"].as_f64().expect("f1");
    assert!(f1 >= 0.90, "{f1}");
}

#[test]
fn audit_outputs_are_referenced_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let manifest = bundle(dir, "paywall");
    let manifest = manifest.to_str().unwrap();

    let o = run(&["--out", "first", "audit", manifest], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.join("first");
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    let files: BTreeMap<String, String> = serde_json::from_value(summary["files"].clone()).unwrap();
    for rel in files.values() {
        assert!(out.join(rel).exists(), "summary names missing {rel}");
    }
    for entry in std::fs::read_dir(&out).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        let referenced = files.values().any(|rel| rel == &name || rel.starts_with(&format!("{name}/")));
        assert!(referenced, "orphan output {name}");
    }

    let o = run(&["--out", "second", "audit", manifest], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["distances.csv", "summary.json", "error_ledger.csv"] {
        let a = std::fs::read(dir.join("first").join(f)).unwrap();
        let b = std::fs::read(dir.join("second").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }

    let o = run(&["report", "first"], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = out.join("report");
    for svg in ["series.svg", "histograms.svg", "cohorts.svg", "distributions.svg"] {
        let text = std::fs::read_to_string(report.join(svg)).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{svg}: {e}"));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }
    let table = std::fs::read_to_string(report.join("table_errors.csv")).unwrap();
    assert!(table.starts_with("collection,failures_A,failures_B,total_failures,n"));
}

#[test]
fn failing_stage_exits_1_with_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let manifest = bundle(dir, "paywall");
    let html = dir.join("bundle/html");
    let victim = std::fs::read_dir(&html).unwrap().next().unwrap().unwrap().path();
    std::fs::remove_file(victim).unwrap();

    let o = run(&["--out", "out", "audit", manifest.to_str().unwrap()], dir);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("failed"));
    let marker: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("out/stage.json")).unwrap()).unwrap();
    assert_eq!(marker["status"], "failed");
    assert!(marker["error"].as_str().is_some_and(|e| !e.is_empty()));
}

#[test]
fn tune_refresh_picks_the_window_that_drops_stale_refreshes() {
    let tmp = tempfile::tempdir().unwrap();
    let survivors: Vec<String> = std::fs::read_to_string(fixture("refresh_burst_survivors.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.trim().to_string())
        .collect();
    // Refreshes superseded within 20 s are scored as badly matching; chain
    // ends match well, so the 20 s window scores lowest.
    let mut csv = String::from("visit_id,representation,delay_days,profile,distance,in_len,ex_len\n");
    for i in 1..=13 {
        let id = format!("b{i:02}");
        let d = if survivors.contains(&id) { 0.1 } else { 0.9 };
        csv.push_str(&format!("{id},cleaned_text,0,A,{d},100,100\n{id},raw_text,0,A,0.5,100,100\n"));
    }
    std::fs::write(tmp.path().join("d.csv"), csv).unwrap();
    let o = run(
        &["tune-refresh", &fixture("refresh_burst.jsonl"), "--distances", "d.csv", "--candidates", "1,20"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("20,0.100000"), "{out}");
    assert!(out.contains("best window: 20 s"), "{out}");
}
