//! The `claimlink` binary: pipeline runs and individual subcommands.

mod common;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::Stub;

fn claimlink(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_claimlink"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn claimlink")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 40 posts in two languages, one claim each, vectors on a circle.
/// `skip_vector` leaves one claim without a precomputed vector.
fn write_fixture(dir: &Path, skip_vector: Option<usize>) {
    let (mut posts, mut claims, mut pairs, mut vectors) = (String::new(), String::new(), String::new(), String::new());
    for i in 0..40 {
        let lang = if i % 2 == 0 { "en" } else { "de" };
        let a = i as f64 * 0.15;
        writeln!(posts, r#"{{"id":"p{i}","text":"post about topic {i}","language":"{lang}"}}"#).unwrap();
        writeln!(claims, r#"{{"id":"c{i}","claim":"claim on topic {i}","language":"en"}}"#).unwrap();
        writeln!(pairs, r#"{{"post_id":"p{i}","claim_id":"c{i}","relationship":"claim_review"}}"#).unwrap();
        writeln!(vectors, r#"{{"id":"p{i}","vector":[{},{}]}}"#, (a + 0.02).cos(), (a + 0.02).sin()).unwrap();
        if skip_vector != Some(i) {
            writeln!(vectors, r#"{{"id":"c{i}","vector":[{},{}]}}"#, a.cos(), a.sin()).unwrap();
        }
    }
    for (name, body) in [("posts.jsonl", posts), ("claims.jsonl", claims), ("pairs.jsonl", pairs), ("vectors.jsonl", vectors)] {
        fs::write(dir.join(name), body).unwrap();
    }
}

fn write_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        r#"
output_dir = "out"

[corpus]
posts = "posts.jsonl"
claims = "claims.jsonl"
pairs = "pairs.jsonl"
min_posts = 5

[split]
seed = 11

[embed.posts]
kind = "precomputed_file"
location = "vectors.jsonl"

[embed.claims]
kind = "precomputed_file"
location = "vectors.jsonl"

[retrieval]
scope = "full"
k = 20
{extra}"#
    );
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn dry_run_prints_plan_and_touches_nothing() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), None);
    let cfg = write_config(dir.path(), "");
    let out = claimlink(&["run", "--config", &cfg, "--dry-run"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for (i, stage) in ["ingest", "langid", "split", "embed", "retrieve", "eval"].iter().enumerate() {
        assert!(text.contains(&format!("{}. {stage}", i + 1)), "{text}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn second_run_reports_every_stage_cached() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), None);
    let cfg = write_config(dir.path(), "\n[negatives]\nstrategy = \"random\"\nk = 2\n");
    let first = claimlink(&["run", "--config", &cfg], &[]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert_eq!(stdout(&first).matches(" ran").count(), 7);
    let second = claimlink(&["run", "--config", &cfg], &[]);
    assert!(second.status.success());
    let lines: Vec<String> = stdout(&second).lines().map(String::from).collect();
    assert_eq!(lines.len(), 7);
    assert!(lines.iter().all(|l| l.ends_with("cached")), "{lines:?}");

    // touching an input re-runs from the stage that reads it
    let pairs = dir.path().join("pairs.jsonl");
    let mut text = fs::read_to_string(&pairs).unwrap();
    text.push_str("\n");
    fs::write(&pairs, text).unwrap();
    let third = claimlink(&["run", "--config", &cfg], &[]);
    assert!(stdout(&third).starts_with("ingest     ran\nlangid     cached"), "{}", stdout(&third));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        write_fixture(d.path(), None);
        let cfg = write_config(d.path(), "\n[negatives]\nstrategy = \"topic\"\nk = 3\nclusters = 4\n");
        assert!(claimlink(&["run", "--config", &cfg], &[]).status.success());
    }
    for rel in [
        "corpus/ingested.json",
        "langid/corpus.json",
        "split/manifest.json",
        "embed/posts.clnk",
        "embed/claims.clnk",
        "runs/retrieved.jsonl",
        "eval/report.json",
        "negatives/negatives.jsonl",
        "negatives/clusters.json",
    ] {
        assert_eq!(
            fs::read(a.path().join("out").join(rel)).unwrap(),
            fs::read(b.path().join("out").join(rel)).unwrap(),
            "{rel}"
        );
    }
}

#[test]
fn llm_mode_without_endpoint_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), None);
    let cfg = write_config(dir.path(), "\n[rerank]\nmode = \"llm\"\n");
    let out = claimlink(&["run", "--config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("rerank.endpoint"), "{}", stderr(&out));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn stage_failure_names_stage_and_keeps_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), Some(7));
    let cfg = write_config(dir.path(), "");
    let out = claimlink(&["run", "--config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.contains("stage `embed`") && err.contains("posts.clnk"), "{err}");
    assert!(dir.path().join("out/split/manifest.json").is_file());
}

#[test]
fn environment_overrides_config_values() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), None);
    let cfg = write_config(dir.path(), "");
    let out = claimlink(&["run", "--config", &cfg], &[("CLAIMLINK__RETRIEVAL__K", "5")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let run = claimlink::retrieval::read_run(dir.path().join("out/runs/retrieved.jsonl")).unwrap();
    assert!(run.iter().all(|l| l.entries.len() == 5 && l.k == 5));
}

#[test]
fn pipeline_rerank_stage_uses_the_endpoint() {
    let stub = Stub::start(|body| {
        let req: serde_json::Value = serde_json::from_str(body).unwrap();
        let n = req["pairs"].as_array().unwrap().len();
        let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
        (200, serde_json::json!({ "scores": scores }).to_string())
    });
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), None);
    let cfg = write_config(dir.path(), &format!("\n[rerank]\nmode = \"ce\"\ntop_n = 3\nendpoint = \"{}\"\n", stub.url));
    let out = claimlink(&["run", "--config", &cfg], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let before = claimlink::retrieval::read_run(dir.path().join("out/runs/retrieved.jsonl")).unwrap();
    let after = claimlink::retrieval::read_run(dir.path().join("out/runs/reranked.jsonl")).unwrap();
    for (b, a) in before.iter().zip(&after) {
        // the stub scores later passages higher, so the head comes back reversed
        let head: Vec<&str> = b.ids().take(3).collect();
        let rev: Vec<&str> = a.ids().take(3).collect();
        assert_eq!(rev, head.iter().rev().copied().collect::<Vec<_>>());
        assert_eq!(a.entries[3..], b.entries[3..]);
    }
    assert!(dir.path().join("out/runs/rerank_log.jsonl").is_file());
}

#[test]
fn subcommands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_fixture(d, None);
    let p = |name: &str| d.join(name).to_string_lossy().into_owned();
    let ok = |o: Output| {
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };

    ok(claimlink(
        &["ingest", "--posts", &p("posts.jsonl"), "--claims", &p("claims.jsonl"), "--pairs", &p("pairs.jsonl"), "--min-posts", "5", "--out", &p("work")],
        &[],
    ));
    let text = ok(claimlink(
        &["split", "--corpus", &p("work/corpus.json"), "--ratios", "0.5,0.25,0.25", "--seed", "4", "--stratify", "post_language", "--out", &p("work/splits.json")],
        &[],
    ));
    assert!(text.contains("test"));

    // the item files only need ids and texts; the precomputed provider looks up vectors by id
    let mut post_items = String::new();
    let mut claim_items = String::new();
    for i in 0..40 {
        writeln!(post_items, r#"{{"id":"p{i}","text":"t"}}"#).unwrap();
        writeln!(claim_items, r#"{{"id":"c{i}","text":"t"}}"#).unwrap();
    }
    fs::write(d.join("post_items.jsonl"), post_items).unwrap();
    fs::write(d.join("claim_items.jsonl"), claim_items).unwrap();
    for (items, role, out) in [("post_items.jsonl", "query", "work/posts.clnk"), ("claim_items.jsonl", "passage", "work/claims.clnk")] {
        ok(claimlink(&["embed", "--items", &p(items), "--role", role, "--provider", &p("vectors.jsonl"), "--out", &p(out)], &[]));
    }
    let again = ok(claimlink(
        &["embed", "--items", &p("claim_items.jsonl"), "--role", "passage", "--provider", &p("vectors.jsonl"), "--out", &p("work/claims.clnk")],
        &[],
    ));
    assert!(again.contains("40 skipped") && again.contains("0 provider calls"), "{again}");

    ok(claimlink(
        &[
            "retrieve", "--posts-store", &p("work/posts.clnk"), "--claims-store", &p("work/claims.clnk"),
            "--corpus", &p("work/corpus.json"), "--manifest", &p("work/splits.json"),
            "--pool", "full", "--setting", "multi", "--k", "10", "--out", &p("work/run.jsonl"),
        ],
        &[],
    ));
    let text = ok(claimlink(
        &[
            "eval", "--run", &p("work/run.jsonl"), "--corpus", &p("work/corpus.json"), "--manifest", &p("work/splits.json"),
            "--setting", "multi", "--scope", "full", "--k", "10", "--out", &p("work/report.json"),
        ],
        &[],
    ));
    assert!(text.contains("S@10 1.0000"), "{text}");

    let stub = Stub::start(|_| (200, r#"{"text":"[3] > [1] > [2]"}"#.into()));
    ok(claimlink(
        &[
            "rerank", "--run", &p("work/run.jsonl"), "--corpus", &p("work/corpus.json"), "--mode", "llm",
            "--top-n", "3", "--window-size", "3", "--stride", "1", "--endpoint", &stub.url, "--out", &p("work/reranked.jsonl"),
        ],
        &[],
    ));
    assert!(d.join("work/reranked.jsonl.log.jsonl").is_file());
    ok(claimlink(
        &[
            "eval", "--run", &p("work/reranked.jsonl"), "--corpus", &p("work/corpus.json"), "--manifest", &p("work/splits.json"),
            "--scope", "full", "--out", &p("work/report_rr.json"),
        ],
        &[],
    ));
    let text = ok(claimlink(&["report", "--runs", &format!("{},{}", p("work/report.json"), p("work/report_rr.json")), "--format", "csv"], &[]));
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3, "{text}");
    // the stub moves the gold claim from rank 1 to rank 2
    assert!(rows[2].ends_with("+0.0000,-0.5000"), "{text}");

    ok(claimlink(
        &[
            "negatives", "--strategy", "similarity", "--k", "3", "--seed", "1",
            "--corpus", &p("work/corpus.json"), "--manifest", &p("work/splits.json"),
            "--posts-store", &p("work/posts.clnk"), "--claims-store", &p("work/claims.clnk"), "--out", &p("work/neg.jsonl"),
        ],
        &[],
    ));
    let (header, records) = claimlink::negatives::load_negatives(d.join("work/neg.jsonl")).unwrap();
    assert_eq!(header.k, 3);
    assert_eq!(header.records, records.len());
    assert!(records.iter().all(|r| r.negatives.len() == 3));
}

#[test]
fn langid_fuses_precomputed_votes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("votes.jsonl");
    fs::write(
        &input,
        concat!(
            r#"{"id":"a","votes":[{"detector":"x","language":"en","raw_score":0.9},{"detector":"y","language":"en","raw_score":0.8}]}"#,
            "\n",
            r#"{"id":"b","votes":[{"detector":"x","language":"en","raw_score":0.9},{"detector":"y","language":"de","raw_score":0.8}]}"#,
            "\n"
        ),
    )
    .unwrap();
    let out_path = dir.path().join("langs.jsonl");
    let out = claimlink(
        &["langid", "--input", input.to_str().unwrap(), "--min-avg", "0.5", "--out", out_path.to_str().unwrap()],
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(out_path).unwrap();
    assert_eq!(text, "{\"id\":\"a\",\"language\":\"en\"}\n{\"id\":\"b\",\"language\":\"und\"}\n");
}

#[test]
fn bad_arguments_exit_with_2() {
    let out = claimlink(&["split", "--corpus", "x.json", "--out", "y.json", "--ratios", "0.5,0.5,0.5"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = claimlink(&["retrieve", "--pool", "everything"], &[]);
    assert_eq!(out.status.code(), Some(2));
}
