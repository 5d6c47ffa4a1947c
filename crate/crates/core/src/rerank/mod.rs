//! Re-ranking of the head of a retrieved list.
//!
//! Both re-rankers only reorder the first `top_n` entries: the set of ids in
//! that head is preserved and everything after it is left untouched, so
//! Success@top_n is the same before and after.

mod client;
mod permutation;
mod prompt;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use client::{ChatGenerator, HttpGenerator, HttpScorer, PairScorer, TextGenerator};
pub use permutation::{is_permutation, parse_permutation};
pub use prompt::PromptTemplate;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::retrieval::{ranking_cmp, RankedList, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankMode {
    #[serde(alias = "ce")]
    CrossEncoder,
    #[serde(alias = "llm")]
    LlmListwise,
}

impl std::str::FromStr for RerankMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" | "cross_encoder" => Ok(RerankMode::CrossEncoder),
            "llm" | "llm_listwise" => Ok(RerankMode::LlmListwise),
            other => Err(Error::Config(format!("unknown re-rank mode `{other}`"))),
        }
    }
}

/// Head sizes worth sweeping when tuning `top_n`.
pub const TOP_N_GRID: [usize; 4] = [20, 30, 50, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankConfig {
    pub top_n: usize,
    pub mode: RerankMode,
    pub window_size: usize,
    pub window_stride: usize,
    pub max_retries: usize,
    pub max_tokens: usize,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            top_n: 30,
            mode: RerankMode::CrossEncoder,
            window_size: 20,
            window_stride: 10,
            max_retries: 2,
            max_tokens: 256,
        }
    }
}

impl RerankConfig {
    pub fn llm(top_n: usize, window_size: usize, window_stride: usize) -> Self {
        RerankConfig {
            top_n,
            mode: RerankMode::LlmListwise,
            window_size,
            window_stride,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::Config("rerank.top_n must be at least 1".into()));
        }
        if self.mode == RerankMode::LlmListwise
            && !(1 <= self.window_stride && self.window_stride <= self.window_size && self.window_size <= self.top_n)
        {
            return Err(Error::Config(format!(
                "need 1 <= window_stride ({}) <= window_size ({}) <= top_n ({})",
                self.window_stride, self.window_size, self.top_n
            )));
        }
        Ok(())
    }
}

/// Where re-rankers look up post and claim texts.
pub trait TextSource: Sync {
    fn post_text(&self, id: &str) -> Option<&str>;
    fn claim_text(&self, id: &str) -> Option<&str>;
}

impl TextSource for Corpus {
    fn post_text(&self, id: &str) -> Option<&str> {
        Corpus::post_text(self, id)
    }

    fn claim_text(&self, id: &str) -> Option<&str> {
        Corpus::claim_text(self, id)
    }
}

/// Per-query cost and latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankLog {
    pub post_id: String,
    pub mode: RerankMode,
    pub calls: usize,
    pub failures: usize,
    pub windows: usize,
    pub prompt_chars: usize,
    pub latency_ms: u128,
}

fn check_input(list: &RankedList, cfg: &RerankConfig) -> Result<()> {
    cfg.validate()?;
    if list.stage != Stage::Retrieved {
        return Err(Error::Config(format!(
            "post `{}`: only retrieved lists can be re-ranked, got {:?}",
            list.post_id, list.stage
        )));
    }
    if list.entries.is_empty() {
        return Err(Error::Config(format!("post `{}`: empty list", list.post_id)));
    }
    Ok(())
}

fn texts<'t>(list: &RankedList, head: usize, source: &'t dyn TextSource) -> Result<(&'t str, Vec<&'t str>)> {
    let query = source.post_text(&list.post_id).ok_or_else(|| Error::UnknownId {
        kind: "post",
        id: list.post_id.clone(),
    })?;
    let passages = list.entries[..head]
        .iter()
        .map(|(id, _)| {
            source.claim_text(id).ok_or_else(|| Error::UnknownId {
                kind: "claim",
                id: id.clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok((query, passages))
}

/// Re-scores the head with a cross-encoder and sorts it by the new scores.
///
/// If the scorer still fails after `max_retries` retries, the list comes back
/// unchanged (stage `retrieved`) with an annotation.
pub fn rerank_cross_encoder(
    list: &RankedList,
    cfg: &RerankConfig,
    scorer: &dyn PairScorer,
    source: &dyn TextSource,
) -> Result<(RankedList, RerankLog)> {
    check_input(list, cfg)?;
    let started = Instant::now();
    let head = cfg.top_n.min(list.entries.len());
    let (query, passages) = texts(list, head, source)?;
    let pairs: Vec<(String, String)> = passages.iter().map(|p| (query.to_string(), p.to_string())).collect();

    let mut log = RerankLog {
        post_id: list.post_id.clone(),
        mode: RerankMode::CrossEncoder,
        calls: 0,
        failures: 0,
        windows: 1,
        prompt_chars: pairs.iter().map(|(q, p)| q.len() + p.len()).sum(),
        latency_ms: 0,
    };

    let mut last_err = String::new();
    let mut scores = None;
    for _ in 0..=cfg.max_retries {
        log.calls += 1;
        match scorer.score(&pairs) {
            Ok(s) if s.len() == head && s.iter().all(|x| x.is_finite()) => {
                scores = Some(s);
                break;
            }
            Ok(s) => last_err = format!("scorer returned {} scores for {head} pairs or a non-finite score", s.len()),
            Err(e) => last_err = e.to_string(),
        }
        log.failures += 1;
    }

    let mut out = list.clone();
    match scores {
        None => {
            out.annotations.push(format!(
                "cross-encoder failed after {} attempt(s): {last_err}",
                log.calls
            ));
        }
        Some(scores) => {
            let mut rescored: Vec<(String, f64)> =
                list.entries[..head].iter().map(|(id, _)| id.clone()).zip(scores).collect();
            rescored.sort_by(|a, b| ranking_cmp((&a.0, a.1), (&b.0, b.1)));
            out.retrieval_scores = list.entries[..head].iter().cloned().collect();
            out.entries = rescored;
            out.entries.extend_from_slice(&list.entries[head..]);
            out.stage = Stage::CeReranked;
        }
    }
    log.latency_ms = started.elapsed().as_millis();
    Ok((out, log))
}

/// Windows over `0..n` (half-open, 0-based) visited from the bottom of the
/// list upwards. The last window always starts at 0.
pub fn window_plan(n: usize, window_size: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut plan = Vec::new();
    if n == 0 || window_size == 0 || stride == 0 {
        return plan;
    }
    let mut end = n;
    loop {
        let start = end.saturating_sub(window_size);
        plan.push((start, end));
        if start == 0 {
            break;
        }
        end -= stride;
    }
    plan
}

/// Listwise re-ranking: the model sees a window of numbered candidates and
/// answers with a permutation. Windows slide from the bottom of the head to the
/// top so strong candidates can bubble up. A window whose generation keeps
/// failing keeps its incoming order.
pub fn rerank_llm(
    list: &RankedList,
    cfg: &RerankConfig,
    llm: &dyn TextGenerator,
    prompt: &PromptTemplate,
    source: &dyn TextSource,
) -> Result<(RankedList, RerankLog)> {
    check_input(list, cfg)?;
    let started = Instant::now();
    let head = cfg.top_n.min(list.entries.len());
    let (query, _) = texts(list, head, source)?;

    let mut order: Vec<usize> = (0..head).collect();
    let mut out = list.clone();
    let mut log = RerankLog {
        post_id: list.post_id.clone(),
        mode: RerankMode::LlmListwise,
        calls: 0,
        failures: 0,
        windows: 0,
        prompt_chars: 0,
        latency_ms: 0,
    };

    for (start, end) in window_plan(head, cfg.window_size, cfg.window_stride) {
        log.windows += 1;
        let passages: Vec<&str> = order[start..end]
            .iter()
            .map(|&i| source.claim_text(&list.entries[i].0).unwrap_or_default())
            .collect();
        let rendered = prompt.render(query, &passages);

        let mut reply = None;
        let mut last_err = String::new();
        for _ in 0..=cfg.max_retries {
            log.calls += 1;
            log.prompt_chars += rendered.len();
            match llm.generate(&rendered, cfg.max_tokens) {
                Ok(text) => {
                    reply = Some(text);
                    break;
                }
                Err(e) => {
                    log.failures += 1;
                    last_err = e.to_string();
                }
            }
        }
        let Some(reply) = reply else {
            out.annotations.push(format!(
                "window {}..{} kept its order: {last_err}",
                start + 1,
                end
            ));
            continue;
        };
        let perm = parse_permutation(&reply, end - start);
        let window: Vec<usize> = perm.iter().map(|&p| order[start + p - 1]).collect();
        order[start..end].copy_from_slice(&window);
    }

    out.retrieval_scores = list.entries[..head].iter().cloned().collect();
    out.entries = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| (list.entries[i].0.clone(), (head - pos) as f64))
        .collect();
    out.entries.extend_from_slice(&list.entries[head..]);
    out.stage = Stage::LlmReranked;
    log.latency_ms = started.elapsed().as_millis();
    Ok((out, log))
}

/// Either re-ranker, ready to apply to many lists.
pub enum Reranker<'a> {
    CrossEncoder(&'a dyn PairScorer),
    Llm {
        generator: &'a dyn TextGenerator,
        prompt: &'a PromptTemplate,
    },
}

/// Re-ranks every list, up to `max_concurrent` queries at a time. Output is in
/// input order.
pub fn rerank_run(
    lists: &[RankedList],
    cfg: &RerankConfig,
    reranker: &Reranker<'_>,
    source: &dyn TextSource,
    max_concurrent: usize,
) -> Result<(Vec<RankedList>, Vec<RerankLog>)> {
    use rayon::prelude::*;

    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_concurrent.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<(RankedList, RerankLog)>> = pool.install(|| {
        lists
            .par_iter()
            .map(|list| match reranker {
                Reranker::CrossEncoder(scorer) => rerank_cross_encoder(list, cfg, *scorer, source),
                Reranker::Llm { generator, prompt } => rerank_llm(list, cfg, *generator, prompt, source),
            })
            .collect()
    });
    let mut out = Vec::with_capacity(lists.len());
    let mut logs = Vec::with_capacity(lists.len());
    for r in results {
        let (l, log) = r?;
        out.push(l);
        logs.push(log);
    }
    Ok((out, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::sync::Mutex;

    struct Texts(HashMap<String, String>);

    impl TextSource for Texts {
        fn post_text(&self, id: &str) -> Option<&str> {
            self.0.get(id).map(String::as_str)
        }
        fn claim_text(&self, id: &str) -> Option<&str> {
            self.0.get(id).map(String::as_str)
        }
    }

    fn source(ids: &[&str]) -> Texts {
        let mut m: HashMap<String, String> = ids.iter().map(|id| (id.to_string(), format!("text:{id}"))).collect();
        m.insert("q".into(), "the post".into());
        Texts(m)
    }

    fn retrieved(ids: &[&str]) -> RankedList {
        RankedList::retrieved(
            "q",
            ids.len(),
            ids.iter().enumerate().map(|(i, id)| (id.to_string(), 1.0 - i as f64 / 100.0)).collect(),
        )
    }

    fn by_text(map: &'static [(&'static str, f64)]) -> impl Fn(&[(String, String)]) -> Result<Vec<f64>> + Send + Sync {
        move |pairs: &[(String, String)]| {
            Ok(pairs
                .iter()
                .map(|(_, p)| map.iter().find(|(id, _)| p == &format!("text:{id}")).map_or(0.0, |x| x.1))
                .collect())
        }
    }

    #[test]
    fn cross_encoder_sorts_head_by_new_scores() {
        let list = retrieved(&["a", "b", "c"]);
        let scorer = by_text(&[("a", 0.1), ("b", 0.9), ("c", 0.5)]);
        let cfg = RerankConfig { top_n: 3, ..Default::default() };
        let (out, log) = rerank_cross_encoder(&list, &cfg, &scorer, &source(&["a", "b", "c"])).unwrap();
        assert_eq!(out.ids().collect::<Vec<_>>(), ["b", "c", "a"]);
        assert_eq!(out.stage, Stage::CeReranked);
        assert_eq!(out.retrieval_scores["a"], 1.0);
        assert_eq!(log.calls, 1);
    }

    #[test]
    fn top_one_is_identity() {
        let list = retrieved(&["a", "b", "c"]);
        let scorer = by_text(&[("a", 0.1), ("b", 0.9), ("c", 0.5)]);
        let cfg = RerankConfig { top_n: 1, ..Default::default() };
        let (out, _) = rerank_cross_encoder(&list, &cfg, &scorer, &source(&["a", "b", "c"])).unwrap();
        assert_eq!(out.ids().collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn tail_beyond_top_n_is_untouched() {
        let names: Vec<String> = (0..100).map(|i| format!("c{i:03}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let list = retrieved(&refs);
        let scorer = |pairs: &[(String, String)]| Ok((0..pairs.len()).map(|i| i as f64).collect());
        let (out, _) = rerank_cross_encoder(&list, &RerankConfig::default(), &scorer, &source(&refs)).unwrap();
        assert_eq!(&out.entries[30..], &list.entries[30..]);
        assert_eq!(out.entries[0].0, "c029");
    }

    #[test]
    fn failing_scorer_degrades_gracefully() {
        let list = retrieved(&["a", "b"]);
        let scorer = |_: &[(String, String)]| -> Result<Vec<f64>> { Err(Error::Provider("down".into())) };
        let cfg = RerankConfig { max_retries: 2, ..Default::default() };
        let (out, log) = rerank_cross_encoder(&list, &cfg, &scorer, &source(&["a", "b"])).unwrap();
        assert_eq!(out.entries, list.entries);
        assert_eq!(out.stage, Stage::Retrieved);
        assert_eq!(out.annotations.len(), 1);
        assert_eq!((log.calls, log.failures), (3, 3));
    }

    #[test]
    fn window_plan_bottom_up() {
        assert_eq!(window_plan(6, 4, 2), vec![(2, 6), (0, 4)]);
        assert_eq!(window_plan(5, 4, 2), vec![(1, 5), (0, 3)]);
        assert_eq!(window_plan(3, 20, 10), vec![(0, 3)]);
        assert_eq!(window_plan(30, 20, 10), vec![(10, 30), (0, 20)]);
    }

    #[test]
    fn llm_single_window_applies_reply() {
        let list = retrieved(&["c1", "c2", "c3"]);
        let llm = |_: &str, _: usize| Ok("[2] > [3] > [1]".to_string());
        let cfg = RerankConfig::llm(3, 3, 1);
        let (out, log) =
            rerank_llm(&list, &cfg, &llm, &PromptTemplate::default(), &source(&["c1", "c2", "c3"])).unwrap();
        assert_eq!(out.ids().collect::<Vec<_>>(), ["c2", "c3", "c1"]);
        assert_eq!(out.stage, Stage::LlmReranked);
        assert_eq!(log.windows, 1);
    }

    #[test]
    fn llm_two_windows_compose() {
        // reply reverses each window. window [3..6] = (c3,c4,c5,c6) -> (c6,c5,c4,c3),
        // list becomes c1 c2 c6 c5 c4 c3; window [1..4] = (c1,c2,c6,c5) -> (c5,c6,c2,c1)
        let ids = ["c1", "c2", "c3", "c4", "c5", "c6"];
        let list = retrieved(&ids);
        let prompts = Mutex::new(Vec::new());
        let llm = |p: &str, _: usize| {
            prompts.lock().unwrap().push(p.to_string());
            Ok("[4] > [3] > [2] > [1]".to_string())
        };
        let cfg = RerankConfig::llm(6, 4, 2);
        let (out, _) = rerank_llm(&list, &cfg, &llm, &PromptTemplate::default(), &source(&ids)).unwrap();
        assert_eq!(out.ids().collect::<Vec<_>>(), ["c5", "c6", "c2", "c1", "c4", "c3"]);
        let prompts = prompts.into_inner().unwrap();
        assert!(prompts[0].contains("[1] text:c3") && prompts[0].contains("[4] text:c6"));
        assert!(prompts[1].contains("[1] text:c1") && prompts[1].contains("[3] text:c6"));
    }

    #[test]
    fn identity_reply_keeps_order() {
        let ids = ["a", "b", "c", "d", "e"];
        let list = retrieved(&ids);
        let llm = |_: &str, _: usize| Ok(String::new());
        let (out, _) =
            rerank_llm(&list, &RerankConfig::llm(5, 2, 1), &llm, &PromptTemplate::default(), &source(&ids)).unwrap();
        assert_eq!(out.ids().collect::<Vec<_>>(), ids);
    }

    #[test]
    fn failed_window_keeps_incoming_order() {
        let ids = ["a", "b", "c"];
        let list = retrieved(&ids);
        let llm = |_: &str, _: usize| -> Result<String> { Err(Error::Provider("rate limited".into())) };
        let (out, log) =
            rerank_llm(&list, &RerankConfig::llm(3, 3, 3), &llm, &PromptTemplate::default(), &source(&ids)).unwrap();
        assert_eq!(out.ids().collect::<Vec<_>>(), ids);
        assert_eq!(out.annotations.len(), 1);
        assert_eq!(log.failures, 3);
    }

    #[test]
    fn config_validation() {
        assert!(RerankConfig { top_n: 0, ..Default::default() }.validate().is_err());
        assert!(RerankConfig::llm(10, 20, 10).validate().is_err());
        assert!(RerankConfig::llm(30, 20, 0).validate().is_err());
        assert!(RerankConfig::llm(30, 20, 10).validate().is_ok());
        let mut reranked = retrieved(&["a"]);
        reranked.stage = Stage::CeReranked;
        let scorer = |_: &[(String, String)]| Ok(vec![1.0]);
        assert!(rerank_cross_encoder(&reranked, &RerankConfig::default(), &scorer, &source(&["a"])).is_err());
    }
}
