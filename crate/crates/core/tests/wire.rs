//! Wire contracts of the HTTP clients, exercised against local stub servers.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use claimlink::embedstore::{embed_corpus, EmbedItem, EmbeddingProvider, ProviderSpec, RemoteService, Role};
use claimlink::rerank::{ChatGenerator, HttpGenerator, HttpScorer, PairScorer, TextGenerator};
use common::{embed_service, hash_vector, Stub};

fn items(n: usize, role: Role) -> Vec<EmbedItem> {
    (0..n)
        .map(|i| EmbedItem {
            id: format!("x{i}"),
            text: format!("text number {i}"),
            role,
        })
        .collect()
}

#[test]
fn store_dim_is_read_from_the_provider() {
    let stub = embed_service(1024);
    let direct = RemoteService::new(&stub.url)
        .embed(&["a".into()], &["probe".into()], Role::Query)
        .unwrap();
    let spec = ProviderSpec::remote(&stub.url);
    let out = embed_corpus(&items(5, Role::Passage), &RemoteService::new(&stub.url), &spec, None).unwrap();
    assert_eq!(out.store.dim(), direct.dim);
    assert_eq!(out.store.dim(), 1024);
    assert!(out.store.is_normalized());
}

#[test]
fn request_carries_rendered_texts_and_role() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let stub = Stub::start(move |body| {
        let req: serde_json::Value = serde_json::from_str(body).unwrap();
        log.lock().unwrap().push(req.clone());
        let n = req["texts"].as_array().unwrap().len();
        (200, serde_json::json!({ "dim": 2, "vectors": vec![[3.0, 4.0]; n] }).to_string())
    });
    let mut spec = ProviderSpec::remote(&stub.url);
    spec.query_template = "query: {text}".into();
    let out = embed_corpus(&items(1, Role::Query), &RemoteService::new(&stub.url), &spec, None).unwrap();
    let req = seen.lock().unwrap()[0].clone();
    assert_eq!(req["role"], "query");
    assert_eq!(req["texts"][0], "query: text number 0");
    assert_eq!(out.store.get("x0").unwrap(), &[0.6, 0.8]);
}

#[test]
fn rerun_with_existing_store_makes_no_calls() {
    let stub = embed_service(8);
    let spec = ProviderSpec::remote(&stub.url);
    let provider = RemoteService::new(&stub.url);
    let first = embed_corpus(&items(10, Role::Passage), &provider, &spec, None).unwrap();
    let before = stub.hits();
    let again = embed_corpus(&items(10, Role::Passage), &provider, &spec, Some(first.store.clone())).unwrap();
    assert_eq!(stub.hits(), before);
    assert_eq!(again.provider_calls, 0);
    assert_eq!(again.skipped, 10);
    assert_eq!(again.store, first.store);
}

#[test]
fn persistent_server_errors_mark_items_failed() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let stub = Stub::start(move |body| {
        c.fetch_add(1, Ordering::SeqCst);
        let req: serde_json::Value = serde_json::from_str(body).unwrap();
        let texts = req["texts"].as_array().unwrap();
        if texts.iter().any(|t| t.as_str().unwrap().ends_with(" 3")) {
            return (500, "{}".into());
        }
        let vectors: Vec<Vec<f32>> = texts.iter().map(|t| hash_vector(t.as_str().unwrap(), 4)).collect();
        (200, serde_json::json!({ "dim": 4, "vectors": vectors }).to_string())
    });
    let mut spec = ProviderSpec::remote(&stub.url);
    spec.batch_size = 2;
    spec.max_retries = 1;
    let out = embed_corpus(&items(6, Role::Passage), &RemoteService::new(&stub.url), &spec, None).unwrap();
    let failed: Vec<&str> = out.failed.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(failed, ["x2", "x3"]);
    assert_eq!(out.store.len(), 4);
    assert_eq!(out.provider_calls, 3 + 1);
    assert_eq!(calls.load(Ordering::SeqCst), 4);
}

#[test]
fn dimension_drift_fails_fast() {
    let stub = Stub::start(move |body| {
        let req: serde_json::Value = serde_json::from_str(body).unwrap();
        let texts = req["texts"].as_array().unwrap();
        let dim = if texts[0].as_str().unwrap().ends_with(" 0") { 3 } else { 5 };
        let vectors = vec![vec![1.0f32; dim]; texts.len()];
        (200, serde_json::json!({ "dim": dim, "vectors": vectors }).to_string())
    });
    let mut spec = ProviderSpec::remote(&stub.url);
    spec.batch_size = 1;
    spec.max_parallel_requests = 1;
    let err = embed_corpus(&items(3, Role::Passage), &RemoteService::new(&stub.url), &spec, None).unwrap_err();
    assert!(matches!(err, claimlink::Error::DimMismatch { expected: 3, actual: 5 }), "{err}");
}

#[test]
fn scorer_sends_pairs_and_reads_scores() {
    let stub = Stub::start(|body| {
        let req: serde_json::Value = serde_json::from_str(body).unwrap();
        let scores: Vec<f64> = req["pairs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p[1].as_str().unwrap().len() as f64)
            .collect();
        (200, serde_json::json!({ "scores": scores }).to_string())
    });
    let pairs = vec![("q".to_string(), "ab".to_string()), ("q".to_string(), "abcd".to_string())];
    assert_eq!(HttpScorer::new(&stub.url).score(&pairs).unwrap(), [2.0, 4.0]);
}

#[test]
fn scorer_error_status_is_a_provider_error() {
    let stub = Stub::start(|_| (503, "{}".into()));
    let err = HttpScorer::new(&stub.url).score(&[("q".into(), "p".into())]).unwrap_err();
    assert!(matches!(err, claimlink::Error::Provider(_)));
}

#[test]
fn completion_generator_round_trip() {
    let stub = Stub::start(|body| {
        let req: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(req["max_tokens"], 256);
        (200, serde_json::json!({ "text": format!("echo {}", req["prompt"].as_str().unwrap()) }).to_string())
    });
    assert_eq!(HttpGenerator::new(&stub.url).generate("hi", 256).unwrap(), "echo hi");
}

#[test]
fn chat_generator_reads_choices() {
    let stub = Stub::start(|body| {
        let req: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(req["model"], "m");
        assert_eq!(req["messages"][0]["role"], "system");
        assert_eq!(req["messages"][1]["content"], "rank these");
        (200, r#"{"choices":[{"message":{"role":"assistant","content":"[2] > [1]"}}]}"#.into())
    });
    let g = ChatGenerator::new(&stub.url, Some("m".into()), Some("be brief".into()));
    assert_eq!(g.generate("rank these", 16).unwrap(), "[2] > [1]");
}
