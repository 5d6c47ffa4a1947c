//! Ingest a small corpus from JSON lines and split it into train/dev/test
//! without letting a claim cross splits.

use std::fs;

use claimlink::corpus::{build_splits, filter_language_threshold, ingest_files, Split, SplitManifest, SplitRatios};

pub fn run_example() -> claimlink::Result<SplitManifest> {
    let dir = tempfile::tempdir().expect("tempdir");
    let (mut posts, mut claims, mut pairs) = (String::new(), String::new(), String::new());
    for i in 0..60 {
        let lang = ["en", "es", "de"][i % 3];
        posts.push_str(&format!("{{\"id\":\"p{i}\",\"text\":\"post {i}\",\"language\":\"{lang}\"}}\n"));
        // posts 6n and 6n+1 share a claim
        let c = i - i % 2 * usize::from(i % 3 == 1);
        claims.push_str(&format!("{{\"id\":\"c{i}\",\"claim\":\"claim {i}\",\"language\":\"en\"}}\n"));
        pairs.push_str(&format!(
            "{{\"post_id\":\"p{i}\",\"claim_id\":\"c{c}\",\"relationship\":\"claim_review\"}}\n"
        ));
    }
    // an unsupported relationship is dropped and reported
    pairs.push_str("{\"post_id\":\"p0\",\"claim_id\":\"c1\",\"relationship\":\"mention\"}\n");
    fs::write(dir.path().join("posts.jsonl"), posts).unwrap();
    fs::write(dir.path().join("claims.jsonl"), claims).unwrap();
    fs::write(dir.path().join("pairs.jsonl"), pairs).unwrap();

    let (corpus, report) = ingest_files(
        dir.path().join("posts.jsonl"),
        dir.path().join("claims.jsonl"),
        dir.path().join("pairs.jsonl"),
    )?;
    println!("kept {} pairs, dropped {:?}", report.pairs_kept, report.dropped);

    let (corpus, threshold) = filter_language_threshold(&corpus, 10);
    println!("languages removed: {:?}", threshold.removed_languages);

    let manifest = build_splits(&corpus, SplitRatios::default(), 13)?;
    let counts = manifest.counts(&corpus);
    for split in Split::ASSIGNABLE {
        let (p, c, pr) = counts.get(split);
        println!("{split}: {p} posts, {c} claims, {pr} pairs");
    }
    assert!(manifest.violations(&corpus).is_empty());
    Ok(manifest)
}

fn main() -> claimlink::Result<()> {
    run_example().map(|_| ())
}
