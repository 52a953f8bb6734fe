use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use got4rec::graph::Branch;
use got4rec::strategies::RunRecord;
use serde_json::Value;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy_reviews.jsonl")
}

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = format!(
            "[data]\nreviews = {:?}\nwork_dir = \"work\"\n\n[sample]\nsize = 5\n\n[embedding]\nstub_dim = 16\n\n[llm]\nworkers = 3\n{extra}",
            fixture().display().to_string()
        );
        fs::write(dir.path().join("got4rec.toml"), cfg).unwrap();
        Self { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn cli(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_got4rec"))
            .current_dir(self.dir.path())
            .args(args)
            .env_remove("GOT4REC_LLM_TOKEN")
            .env_remove("OPENAI_API_KEY")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.cli(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn prepared(extra: &str) -> Self {
        let s = Self::new(extra);
        s.ok(&["ingest"]);
        s.ok(&["embed"]);
        s
    }
}

fn records(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir.join("records"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn ingest_prints_stats_and_is_idempotent() {
    let s = Sandbox::new("");
    assert_eq!(s.ok(&["ingest"]).trim(), "users=12 items=9 actions=97");
    let first = fs::read(s.path("work/split.jsonl")).unwrap();
    s.ok(&["ingest"]);
    assert_eq!(fs::read(s.path("work/split.jsonl")).unwrap(), first);
}

#[test]
fn missing_review_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("got4rec.toml"), "[data]\nreviews = \"nowhere.jsonl\"\nwork_dir = \"w\"\n[embedding]\nstub_dim = 16\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_got4rec")).current_dir(dir.path()).arg("ingest").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.jsonl"));
}

#[test]
fn missing_referenced_file_fails_at_load() {
    let s = Sandbox::new("backend = \"cassette\"\n\n[llm.cassette]\npath = \"gone.jsonl\"\nmode = \"strict\"\n");
    let out = s.cli(&["ingest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gone.jsonl"));
    assert!(!s.path("work").exists());
}

#[test]
fn usage_errors_exit_one() {
    let s = Sandbox::new("");
    assert_eq!(s.cli(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(s.cli(&["run"]).status.code(), Some(1));
    assert_eq!(s.cli(&["run", "--out", "r", "--disable", "final"]).status.code(), Some(1));
    let two = Sandbox::new("[embedding]\nservice_url = \"http://x\"\n");
    // a second [embedding] table is itself a TOML error; both are usage errors
    assert_eq!(two.cli(&["ingest"]).status.code(), Some(1));
    fs::write(s.path("bad.toml"), format!("[data]\nreviews = {:?}\nwork_dir = \"w\"\n[embedding]\nstub_dim = 16\nvector_file = \"v.g4rv\"\n", fixture().display().to_string())).unwrap();
    let out = s.cli(&["--config", "bad.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exactly one"));
}

#[test]
fn embed_is_reproducible_and_guards_dimension() {
    let s = Sandbox::new("");
    s.ok(&["ingest"]);
    assert_eq!(s.ok(&["embed"]).trim(), "items=9 sequences=12 dim=16");
    let first = fs::read(s.path("work/items.g4rv")).unwrap();
    s.ok(&["embed"]);
    assert_eq!(fs::read(s.path("work/items.g4rv")).unwrap(), first);

    let cfg = fs::read_to_string(s.path("got4rec.toml")).unwrap().replace("stub_dim = 16", "stub_dim = 32");
    fs::write(s.path("got4rec.toml"), cfg).unwrap();
    let out = s.cli(&["embed"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    assert_eq!(fs::read(s.path("work/items.g4rv")).unwrap(), first);
    s.ok(&["embed", "--force"]);
    assert_ne!(fs::read(s.path("work/items.g4rv")).unwrap(), first);
}

#[test]
fn mock_run_writes_one_deterministic_record_per_user() {
    let s = Sandbox::prepared("");
    assert!(s.ok(&["run", "--out", "a"]).starts_with("written=5 skipped=0 failed=0"));
    s.ok(&["run", "--out", "b"]);
    let a = records(&s.path("a"));
    assert_eq!(a.len(), 5);
    assert_eq!(a, records(&s.path("b")));
    for (_, bytes) in &a {
        let r: RunRecord = serde_json::from_slice(bytes).unwrap();
        assert!(r.is_completed());
        assert_eq!(r.graph.len(), 34);
    }
    assert_eq!(fs::read_to_string(s.path("a/failures.jsonl")).unwrap(), "");
    assert_eq!(fs::read_to_string(s.path("a/timings.jsonl")).unwrap().lines().count(), 5);
}

#[test]
fn resume_runs_only_the_missing_users() {
    let s = Sandbox::prepared("");
    s.ok(&["run", "--out", "full"]);
    assert!(s.ok(&["run", "--out", "part", "--limit", "3"]).starts_with("written=3 skipped=0"));
    let before = records(&s.path("part"));
    assert_eq!(before.len(), 3);
    let mtimes: Vec<_> = before.iter().map(|(n, _)| fs::metadata(s.path("part/records").join(n)).unwrap().modified().unwrap()).collect();
    assert!(s.ok(&["run", "--out", "part"]).starts_with("written=2 skipped=3"));
    let after = records(&s.path("part"));
    for ((name, bytes), mtime) in before.iter().zip(mtimes) {
        assert_eq!(&after.iter().find(|(n, _)| n == name).unwrap().1, bytes);
        assert_eq!(fs::metadata(s.path("part/records").join(name)).unwrap().modified().unwrap(), mtime);
    }
    assert_eq!(after, records(&s.path("full")));
    assert!(s.ok(&["run", "--out", "part"]).starts_with("written=0 skipped=5"));
    // a different configuration cannot reuse the directory
    assert_eq!(s.cli(&["run", "--out", "part", "--disable", "collab"]).status.code(), Some(1));
}

#[test]
fn disabling_collab_removes_its_vertices() {
    let s = Sandbox::prepared("");
    s.ok(&["run", "--out", "ablate", "--disable", "collab"]);
    for (_, bytes) in records(&s.path("ablate")) {
        let r: RunRecord = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(r.graph.count_branch(Branch::Collab), 0);
        assert_eq!(r.graph.len(), 30);
        assert!(r.branch_sets.iter().all(|b| b.branch != Branch::Collab));
    }
}

#[test]
fn eval_averages_seed_presets_and_is_byte_stable() {
    let s = Sandbox::prepared("");
    for p in 0..3 {
        s.ok(&["run", "--out", &format!("p{p}"), "--preset", &p.to_string()]);
    }
    let out = s.ok(&["eval", "p0", "p1", "p2", "--report", "avg.json", "--popularity", "pop.tsv"]);
    assert!(out.starts_with("strategy"), "{out}");
    assert!(out.contains("tail_coverage="));
    let avg: Value = serde_json::from_slice(&fs::read(s.path("avg.json")).unwrap()).unwrap();
    assert_eq!(avg["runs"], 3);
    assert_eq!(avg["users"], 15);
    let per_run: Vec<Value> = (0..3).map(|p| serde_json::from_slice(&fs::read(s.path(&format!("p{p}/metrics.json"))).unwrap()).unwrap()).collect();
    for k in ["@5", "@10", "@20"] {
        let mean = per_run.iter().map(|r| r["hr"][k].as_f64().unwrap()).sum::<f64>() / 3.0;
        assert!((avg["hr"][k].as_f64().unwrap() - mean).abs() < 1e-12);
    }
    assert!(fs::read_to_string(s.path("pop.tsv")).unwrap().starts_with("item\ttrain_count\trec_count\n"));

    let first = fs::read(s.path("p0/metrics.json")).unwrap();
    s.ok(&["eval", "p0"]);
    assert_eq!(fs::read(s.path("p0/metrics.json")).unwrap(), first);
}

#[test]
fn eval_of_empty_run_dir_fails() {
    let s = Sandbox::prepared("");
    fs::create_dir(s.path("empty")).unwrap();
    assert_eq!(s.cli(&["eval", "empty"]).status.code(), Some(2));
}

#[test]
fn partial_run_reports_coverage() {
    let s = Sandbox::prepared("");
    s.ok(&["run", "--out", "part", "--limit", "2"]);
    s.ok(&["eval", "part", "--report", "r.json"]);
    let r: Value = serde_json::from_slice(&fs::read(s.path("r.json")).unwrap()).unwrap();
    assert!((r["coverage"].as_f64().unwrap() - 0.4).abs() < 1e-12);
}

#[test]
fn backend_failures_exit_three_with_ledger() {
    let s = Sandbox::new("backend = \"cassette\"\n\n[llm.cassette]\npath = \"empty.jsonl\"\nmode = \"strict\"\n");
    fs::write(s.path("empty.jsonl"), "").unwrap();
    s.ok(&["ingest"]);
    s.ok(&["embed"]);
    let out = s.cli(&["run", "--out", "r"]);
    assert_eq!(out.status.code(), Some(3));
    let ledger = fs::read_to_string(s.path("r/failures.jsonl")).unwrap();
    assert_eq!(ledger.lines().count(), 5);
    let first: Value = serde_json::from_str(ledger.lines().next().unwrap()).unwrap();
    assert_eq!(first["kind"], "backend");
    // failed records are retried on the next pass
    assert!(String::from_utf8_lossy(&s.cli(&["run", "--out", "r"]).stdout).starts_with("written=5 skipped=0"));
}

#[test]
fn cassette_recorded_from_mock_replays_identically() {
    let rec = Sandbox::prepared("backend = \"cassette\"\n\n[llm.cassette]\npath = \"session.jsonl\"\nmode = \"record\"\nrecord_from = \"mock\"\n");
    rec.ok(&["run", "--out", "live"]);
    let cfg = fs::read_to_string(rec.path("got4rec.toml")).unwrap().replace("mode = \"record\"", "mode = \"strict\"");
    fs::write(rec.path("got4rec.toml"), cfg).unwrap();
    rec.ok(&["run", "--out", "replay"]);
    assert_eq!(records(&rec.path("live")), records(&rec.path("replay")));
}
