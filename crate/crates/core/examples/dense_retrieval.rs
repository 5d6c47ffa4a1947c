//! Exact top-k retrieval of claims for a batch of posts.

use claimlink::embedstore::EmbeddingStore;
use claimlink::retrieval::{batch_retrieve, CandidatePool, PoolPolicy, RankedList};

pub fn run_example() -> claimlink::Result<Vec<RankedList>> {
    let claims = EmbeddingStore::from_rows(
        2,
        "toy",
        (0..8).map(|i| {
            let a = i as f32 * 0.4;
            (format!("c{i}"), vec![a.cos(), a.sin()])
        }),
    )?;
    let posts = EmbeddingStore::from_rows(2, "toy", [("p1", vec![1.0, 0.1]), ("p2", vec![-1.0, 0.5])])?;
    let pool = CandidatePool::new(claims.ids().to_vec(), PoolPolicy::FullCorpus)?;
    let queries = vec!["p1".to_string(), "p2".to_string(), "missing".to_string()];
    let out = batch_retrieve(&queries, &posts, &claims, &pool, 3)?;
    for list in &out.lists {
        let top: Vec<String> = list.entries.iter().map(|(id, s)| format!("{id}:{s:.3}")).collect();
        println!("{} -> {}", list.post_id, top.join(" "));
    }
    for e in &out.soft_errors {
        println!("skipped {}: {}", e.post_id, e.message);
    }
    Ok(out.lists)
}

fn main() -> claimlink::Result<()> {
    run_example().map(|_| ())
}
