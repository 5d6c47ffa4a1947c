//! Re-score the head of a retrieved list with a cross-encoder. The scorer here
//! is word overlap; in practice it is [`HttpScorer`](claimlink::rerank::HttpScorer).

use std::collections::HashSet;

use claimlink::corpus::{Corpus, FactCheck, Post, Split};
use claimlink::rerank::{rerank_cross_encoder, RerankConfig};
use claimlink::retrieval::RankedList;

fn overlap(a: &str, b: &str) -> f64 {
    let a: HashSet<&str> = a.split_whitespace().collect();
    b.split_whitespace().filter(|w| a.contains(w)).count() as f64
}

pub fn toy_corpus() -> Corpus {
    let mut corpus = Corpus::default();
    corpus.posts.insert(
        "p".into(),
        Post {
            id: "p".into(),
            text: "vaccine causes magnetism in arms".into(),
            language: "en".into(),
            split: Split::Test,
        },
    );
    for (id, text) in [
        ("c1", "election ballots were not burned"),
        ("c2", "the moon landing footage is real"),
        ("c3", "no vaccine causes magnetism in arms"),
    ] {
        corpus.claims.insert(
            id.into(),
            FactCheck {
                id: id.into(),
                claim_text: text.into(),
                language: "en".into(),
                split: Split::Test,
            },
        );
    }
    corpus
}

pub fn run_example() -> claimlink::Result<RankedList> {
    let corpus = toy_corpus();
    let list = RankedList::retrieved("p", 3, vec![("c1".into(), 0.71), ("c2".into(), 0.70), ("c3".into(), 0.69)]);
    let scorer = |pairs: &[(String, String)]| Ok(pairs.iter().map(|(q, p)| overlap(q, p)).collect());
    let cfg = RerankConfig { top_n: 3, ..RerankConfig::default() };
    let (out, log) = rerank_cross_encoder(&list, &cfg, &scorer, &corpus)?;
    println!("{:?} -> {:?} ({} call)", list.ids().collect::<Vec<_>>(), out.ids().collect::<Vec<_>>(), log.calls);
    Ok(out)
}

fn main() -> claimlink::Result<()> {
    run_example().map(|_| ())
}
