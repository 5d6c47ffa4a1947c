//! Score runs with Success@10 and MRR@10 and compare them against a baseline.

use claimlink::eval::{compare_runs, evaluate_run, EvalOptions, EvalPair, MetricsReport};
use claimlink::retrieval::RankedList;

/// A run where `post` has its gold claim at 1-based `rank` (or not at all).
fn run_with_gold_at(post: &str, rank: Option<usize>) -> RankedList {
    let entries = (1..=20)
        .map(|r| {
            let id = if Some(r) == rank { format!("gold-{post}") } else { format!("{post}-x{r}") };
            (id, 1.0 - r as f64 / 100.0)
        })
        .collect();
    RankedList::retrieved(post, 20, entries)
}

fn pair(post: &str, lang: &str) -> EvalPair {
    EvalPair {
        post_id: post.into(),
        claim_id: format!("gold-{post}"),
        post_language: lang.into(),
        claim_language: "en".into(),
    }
}

pub fn run_example() -> claimlink::Result<Vec<(String, MetricsReport)>> {
    let pairs = vec![pair("a", "en"), pair("b", "en"), pair("c", "es"), pair("d", "es")];
    let opts = EvalOptions::default();

    let baseline = vec![
        run_with_gold_at("a", Some(1)),
        run_with_gold_at("b", Some(5)),
        run_with_gold_at("c", Some(12)),
        run_with_gold_at("d", None),
    ];
    let improved = vec![
        run_with_gold_at("a", Some(1)),
        run_with_gold_at("b", Some(2)),
        run_with_gold_at("c", Some(7)),
        run_with_gold_at("d", None),
    ];
    let reports = vec![
        ("baseline".to_string(), evaluate_run(&baseline, &pairs, &opts, None)?),
        ("improved".to_string(), evaluate_run(&improved, &pairs, &opts, None)?),
    ];
    assert_eq!((reports[0].1.s_at_k, reports[0].1.mrr_at_k), (0.5, 0.3));
    for lp in &reports[1].1.by_language_pair {
        println!("{}->{}: S@10 {:.3}", lp.post_language, lp.claim_language, lp.s_at_k);
    }
    print!("{}", compare_runs(&reports)?.to_text());
    Ok(reports)
}

fn main() -> claimlink::Result<()> {
    run_example().map(|_| ())
}
