//! Listwise re-ranking with sliding windows. The "model" below reads the
//! numbered passages back out of the prompt and orders them by word overlap
//! with the post, answering in the usual `[2] > [1]` form.

use std::collections::HashSet;

use claimlink::corpus::{Corpus, FactCheck, Post, Split};
use claimlink::rerank::{rerank_llm, window_plan, PromptTemplate, RerankConfig};
use claimlink::retrieval::RankedList;

fn fake_llm(prompt: &str, _max_tokens: usize) -> claimlink::Result<String> {
    let query: HashSet<&str> = prompt
        .lines()
        .find_map(|l| l.strip_prefix("Post: "))
        .unwrap_or_default()
        .split_whitespace()
        .collect();
    let mut passages: Vec<(usize, usize)> = prompt
        .lines()
        .filter_map(|l| {
            let rest = l.strip_prefix('[')?;
            let (num, text) = rest.split_once("] ")?;
            let score = text.split_whitespace().filter(|w| query.contains(w)).count();
            Some((num.parse().ok()?, score))
        })
        .collect();
    passages.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(passages.iter().map(|(n, _)| format!("[{n}]")).collect::<Vec<_>>().join(" > "))
}

struct Llm;

impl claimlink::rerank::TextGenerator for Llm {
    fn generate(&self, prompt: &str, max_tokens: usize) -> claimlink::Result<String> {
        fake_llm(prompt, max_tokens)
    }
}

pub fn run_example() -> claimlink::Result<RankedList> {
    let mut corpus = Corpus::default();
    corpus.posts.insert(
        "p".into(),
        Post {
            id: "p".into(),
            text: "photo shows flooded airport runway".into(),
            language: "en".into(),
            split: Split::Test,
        },
    );
    let mut entries = Vec::new();
    for i in 0..8 {
        let text = if i == 6 { "old photo of a flooded airport runway".to_string() } else { format!("unrelated claim {i}") };
        let id = format!("c{i}");
        corpus.claims.insert(
            id.clone(),
            FactCheck {
                id: id.clone(),
                claim_text: text,
                language: "en".into(),
                split: Split::Test,
            },
        );
        entries.push((id, 0.9 - i as f64 * 0.01));
    }
    let list = RankedList::retrieved("p", 8, entries);
    let cfg = RerankConfig::llm(8, 4, 2);
    println!("windows: {:?}", window_plan(8, 4, 2));
    let (out, log) = rerank_llm(&list, &cfg, &Llm, &PromptTemplate::default(), &corpus)?;
    println!("top after re-ranking: {} ({} windows)", out.entries[0].0, log.windows);
    Ok(out)
}

fn main() -> claimlink::Result<()> {
    run_example().map(|_| ())
}
