//! Every example must keep running against the current API.

#[allow(dead_code)]
#[path = "../examples/ingest_and_split.rs"]
mod ingest_and_split;

#[allow(dead_code)]
#[path = "../examples/langid_fusion.rs"]
mod langid_fusion;

#[allow(dead_code)]
#[path = "../examples/embed_store.rs"]
mod embed_store;

#[allow(dead_code)]
#[path = "../examples/dense_retrieval.rs"]
mod dense_retrieval;

#[allow(dead_code)]
#[path = "../examples/cross_encoder_rerank.rs"]
mod cross_encoder_rerank;

#[allow(dead_code)]
#[path = "../examples/llm_listwise_rerank.rs"]
mod llm_listwise_rerank;

#[allow(dead_code)]
#[path = "../examples/mine_negatives.rs"]
mod mine_negatives;

#[allow(dead_code)]
#[path = "../examples/evaluate_run.rs"]
mod evaluate_run;

#[allow(dead_code)]
#[path = "../examples/synthetic_pipeline.rs"]
mod synthetic_pipeline;

#[test]
fn ingest_and_split_is_leak_free() {
    let m = ingest_and_split::run_example().unwrap();
    assert_eq!(m.seed, 13);
}

#[test]
fn langid_fusion_rule_cases() {
    let out = langid_fusion::run_example().unwrap();
    assert_eq!(out, [Some("en".into()), Some("es".into()), None, Some("en".into())]);
}

#[test]
fn embed_store_round_trips() {
    let s = embed_store::run_example().unwrap();
    assert_eq!(s.len(), 3);
    assert!(s.is_normalized());
}

#[test]
fn dense_retrieval_ranks_nearest_first() {
    let lists = dense_retrieval::run_example().unwrap();
    assert_eq!(lists.len(), 2);
    assert_eq!(lists[0].entries[0].0, "c0");
    assert_eq!(lists[1].entries[0].0, "c7");
}

#[test]
fn cross_encoder_promotes_matching_claim() {
    let out = cross_encoder_rerank::run_example().unwrap();
    assert_eq!(out.entries[0].0, "c3");
}

#[test]
fn llm_rerank_bubbles_match_to_top() {
    let out = llm_listwise_rerank::run_example().unwrap();
    assert_eq!(out.entries[0].0, "c6");
    assert_eq!(out.entries.len(), 8);
}

#[test]
fn mine_negatives_all_strategies() {
    let records = mine_negatives::run_example().unwrap();
    assert_eq!(records.len(), 6);
}

#[test]
fn evaluate_run_worked_example() {
    let reports = evaluate_run::run_example().unwrap();
    assert_eq!(reports[0].1.s_at_k, 0.5);
    assert!((reports[1].1.mrr_at_k - (1.0 + 0.5 + 1.0 / 7.0) / 4.0).abs() < 1e-12);
}

#[test]
fn synthetic_pipeline_is_cached_on_rerun() {
    let report = synthetic_pipeline::run_example().unwrap();
    assert_eq!(report.s_at_k, 1.0);
}
