//! Drive the whole pipeline from a TOML config over a generated corpus, then
//! run it again to see every stage come back cached.

use std::fmt::Write as _;
use std::fs;

use claimlink::eval::MetricsReport;
use claimlink::pipeline::{run_pipeline, ExperimentConfig, RunOptions, StageStatus};

const CONFIG: &str = r#"
output_dir = "out"

[corpus]
posts = "posts.jsonl"
claims = "claims.jsonl"
pairs = "pairs.jsonl"
min_posts = 20

[split]
ratios = [0.6, 0.2, 0.2]
seed = 3

[embed.posts]
kind = "precomputed_file"
location = "vectors.jsonl"

[embed.claims]
kind = "precomputed_file"
location = "vectors.jsonl"

[retrieval]
setting = "multilingual"
scope = "full"
k = 20

[negatives]
strategy = "similarity"
k = 3
"#;

pub fn run_example() -> claimlink::Result<MetricsReport> {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    let (mut posts, mut claims, mut pairs, mut vectors) = (String::new(), String::new(), String::new(), String::new());
    let n = 100;
    for i in 0..n {
        let lang = if i % 2 == 0 { "en" } else { "fr" };
        // post i sits next to claim i on the unit circle
        let a = i as f64 * std::f64::consts::TAU / n as f64;
        let b = a + 0.01;
        writeln!(posts, r#"{{"id":"p{i}","text":"post {i}","language":"{lang}"}}"#).unwrap();
        writeln!(claims, r#"{{"id":"c{i}","claim":"claim {i}","language":"en"}}"#).unwrap();
        writeln!(pairs, r#"{{"post_id":"p{i}","claim_id":"c{i}","relationship":"claim_review"}}"#).unwrap();
        writeln!(vectors, r#"{{"id":"p{i}","vector":[{},{}]}}"#, b.cos(), b.sin()).unwrap();
        writeln!(vectors, r#"{{"id":"c{i}","vector":[{},{}]}}"#, a.cos(), a.sin()).unwrap();
    }
    for (name, body) in [("posts.jsonl", posts), ("claims.jsonl", claims), ("pairs.jsonl", pairs), ("vectors.jsonl", vectors)] {
        fs::write(root.join(name), body).unwrap();
    }

    let cfg = ExperimentConfig::parse(CONFIG, root, Vec::new())?;
    let fail = |e: claimlink::pipeline::PipelineError| claimlink::Error::Config(e.to_string());
    let first = run_pipeline(&cfg, RunOptions::default()).map_err(fail)?;
    let second = run_pipeline(&cfg, RunOptions::default()).map_err(fail)?;
    for (a, b) in first.iter().zip(&second) {
        println!("{:<10} {:?} then {:?}", a.name.as_str(), a.status, b.status);
    }
    assert!(second.iter().all(|o| o.status == StageStatus::Cached));

    let report: MetricsReport = claimlink::io::read_json(cfg.layout().report())?;
    println!("S@10 {:.3}  MRR@10 {:.3} over {} pairs", report.s_at_k, report.mrr_at_k, report.n_pairs);
    Ok(report)
}

fn main() -> claimlink::Result<()> {
    run_example().map(|_| ())
}
