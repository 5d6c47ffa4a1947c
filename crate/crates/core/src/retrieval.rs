//! Exact dense top-k over a candidate pool of fact-checks.
//!
//! Scores are dot products of unit rows, i.e. cosines. Rankings are total:
//! higher score first, equal scores by ascending claim id, so a ranking never
//! depends on the order the pool is visited in.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{crosslingual_view, Corpus, Split, SplitManifest};
use crate::embedstore::{dot, EmbeddingStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    #[serde(alias = "multi")]
    Multilingual,
    #[serde(alias = "cross")]
    Crosslingual,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi" | "multilingual" => Ok(Setting::Multilingual),
            "cross" | "crosslingual" => Ok(Setting::Crosslingual),
            other => Err(Error::Config(format!("unknown setting `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Test,
    Full,
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(Scope::Test),
            "full" => Ok(Scope::Full),
            other => Err(Error::Config(format!("unknown scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolPolicy {
    TestSplit,
    FullCorpus,
    CrosslingualTest,
    CrosslingualFull,
}

impl PoolPolicy {
    pub fn of(setting: Setting, scope: Scope) -> Self {
        match (setting, scope) {
            (Setting::Multilingual, Scope::Test) => PoolPolicy::TestSplit,
            (Setting::Multilingual, Scope::Full) => PoolPolicy::FullCorpus,
            (Setting::Crosslingual, Scope::Test) => PoolPolicy::CrosslingualTest,
            (Setting::Crosslingual, Scope::Full) => PoolPolicy::CrosslingualFull,
        }
    }
}

/// Claims a query is ranked against. Ids are kept sorted and unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    claim_ids: Vec<String>,
    policy: PoolPolicy,
}

impl CandidatePool {
    pub fn new(claim_ids: impl IntoIterator<Item = String>, policy: PoolPolicy) -> Result<Self> {
        let mut claim_ids: Vec<String> = claim_ids.into_iter().collect();
        claim_ids.sort();
        claim_ids.dedup();
        if claim_ids.is_empty() {
            return Err(Error::EmptyPool);
        }
        Ok(CandidatePool { claim_ids, policy })
    }

    pub fn claim_ids(&self) -> &[String] {
        &self.claim_ids
    }

    pub fn policy(&self) -> PoolPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.claim_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claim_ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.claim_ids.binary_search_by(|c| c.as_str().cmp(id)).is_ok()
    }
}

/// The corpus a setting evaluates on: everything, or the crosslingual view.
pub fn setting_view(corpus: &Corpus, setting: Setting) -> std::borrow::Cow<'_, Corpus> {
    match setting {
        Setting::Multilingual => std::borrow::Cow::Borrowed(corpus),
        Setting::Crosslingual => std::borrow::Cow::Owned(crosslingual_view(corpus)),
    }
}

/// Candidate claims for a setting and scope. `test` keeps claims assigned to
/// the test split, `full` keeps every claim of the setting's corpus.
pub fn make_pool(
    corpus: &Corpus,
    manifest: &SplitManifest,
    setting: Setting,
    scope: Scope,
) -> Result<CandidatePool> {
    let view = setting_view(corpus, setting);
    let ids = view
        .claims
        .keys()
        .filter(|id| match scope {
            Scope::Full => true,
            Scope::Test => manifest.split_of_claim.get(*id) == Some(&Split::Test),
        })
        .cloned();
    CandidatePool::new(ids, PoolPolicy::of(setting, scope))
}

/// Test-split posts of the setting's corpus, in id order.
pub fn query_posts(corpus: &Corpus, manifest: &SplitManifest, setting: Setting) -> Vec<String> {
    setting_view(corpus, setting)
        .posts
        .keys()
        .filter(|id| manifest.split_of_post.get(*id) == Some(&Split::Test))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieved,
    CeReranked,
    LlmReranked,
}

/// Ranking of claims for one post. One line of a run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub post_id: String,
    pub stage: Stage,
    pub k: usize,
    pub entries: Vec<(String, f64)>,
    /// Retrieval scores of re-scored entries, kept after re-ranking.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub retrieval_scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<String>,
}

impl RankedList {
    pub fn retrieved(post_id: impl Into<String>, k: usize, entries: Vec<(String, f64)>) -> Self {
        RankedList {
            post_id: post_id.into(),
            stage: Stage::Retrieved,
            k,
            entries,
            retrieval_scores: BTreeMap::new(),
            annotations: Vec::new(),
        }
    }

    /// 1-based rank of `claim_id`, if present.
    pub fn rank_of(&self, claim_id: &str) -> Option<usize> {
        self.entries.iter().position(|(id, _)| id == claim_id).map(|i| i + 1)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }
}

/// Score descending, then claim id ascending.
pub fn ranking_cmp(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Pool rows gathered into one contiguous matrix.
pub struct PreparedPool<'a> {
    ids: Vec<&'a str>,
    matrix: Vec<f32>,
    dim: usize,
}

/// Rows scored against one tile of queries at a time.
const CLAIM_BLOCK: usize = 256;
const QUERY_TILE: usize = 16;

impl<'a> PreparedPool<'a> {
    pub fn new(claim_store: &EmbeddingStore, pool: &'a CandidatePool) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        if !claim_store.is_normalized() {
            return Err(Error::Config("claim store is not normalized".into()));
        }
        let dim = claim_store.dim();
        let mut matrix = Vec::with_capacity(pool.len() * dim);
        let mut ids = Vec::with_capacity(pool.len());
        for id in pool.claim_ids() {
            let row = claim_store.get(id).ok_or_else(|| Error::UnknownId {
                kind: "pool claim",
                id: id.clone(),
            })?;
            matrix.extend_from_slice(row);
            ids.push(id.as_str());
        }
        Ok(PreparedPool { ids, matrix, dim })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, row: usize) -> &'a str {
        self.ids[row]
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// Scores of every pool row against each query, blocked over pool rows.
    pub fn score_tile(&self, queries: &[&[f32]]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.len()]; queries.len()];
        for start in (0..self.len()).step_by(CLAIM_BLOCK) {
            let end = (start + CLAIM_BLOCK).min(self.len());
            for (q, scores) in queries.iter().zip(out.iter_mut()) {
                for (r, slot) in (start..end).zip(&mut scores[start..end]) {
                    *slot = dot(q, self.row(r));
                }
            }
        }
        out
    }

    /// Top `k` of precomputed `scores`, skipping rows for which `exclude` holds.
    pub fn top_k_of(&self, scores: &[f64], k: usize, exclude: impl Fn(&str) -> bool) -> Vec<(String, f64)> {
        let mut cands: Vec<(&str, f64)> = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| !exclude(self.ids[*i]))
            .map(|(i, &s)| (self.ids[i], s))
            .collect();
        let cmp = |a: &(&str, f64), b: &(&str, f64)| ranking_cmp(*a, *b);
        if k < cands.len() {
            cands.select_nth_unstable_by(k, cmp);
            cands.truncate(k);
        }
        cands.sort_unstable_by(cmp);
        cands.into_iter().map(|(id, s)| (id.to_string(), s)).collect()
    }

    pub fn top_k(&self, query: &[f32], k: usize, exclude: impl Fn(&str) -> bool) -> Vec<(String, f64)> {
        let scores = self.score_tile(&[query]).pop().unwrap_or_default();
        self.top_k_of(&scores, k, exclude)
    }
}

fn check_inputs(post_store: &EmbeddingStore, claim_store: &EmbeddingStore, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if post_store.dim() != claim_store.dim() {
        return Err(Error::DimMismatch {
            expected: claim_store.dim(),
            actual: post_store.dim(),
        });
    }
    if !post_store.is_normalized() {
        return Err(Error::Config("post store is not normalized".into()));
    }
    Ok(())
}

/// Exact top-`k` claims of `pool` for one post.
pub fn retrieve_topk(
    post_id: &str,
    post_store: &EmbeddingStore,
    claim_store: &EmbeddingStore,
    pool: &CandidatePool,
    k: usize,
) -> Result<RankedList> {
    check_inputs(post_store, claim_store, k)?;
    let prepared = PreparedPool::new(claim_store, pool)?;
    let query = post_store.get(post_id).ok_or_else(|| Error::UnknownId {
        kind: "post",
        id: post_id.to_string(),
    })?;
    Ok(RankedList::retrieved(post_id, k, prepared.top_k(query, k, |_| false)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftError {
    pub index: usize,
    pub post_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRetrieval {
    /// Input order, posts with soft errors omitted.
    pub lists: Vec<RankedList>,
    pub soft_errors: Vec<SoftError>,
}

/// [`retrieve_topk`] over many posts, sharded across threads in tiles. Unknown
/// post ids are soft errors; store/pool problems abort the batch.
pub fn batch_retrieve(
    post_ids: &[String],
    post_store: &EmbeddingStore,
    claim_store: &EmbeddingStore,
    pool: &CandidatePool,
    k: usize,
) -> Result<BatchRetrieval> {
    check_inputs(post_store, claim_store, k)?;
    let prepared = PreparedPool::new(claim_store, pool)?;

    let tiles: Vec<Vec<std::result::Result<RankedList, SoftError>>> = post_ids
        .par_chunks(QUERY_TILE)
        .enumerate()
        .map(|(t, chunk)| {
            let mut found = Vec::new();
            let mut slots: Vec<std::result::Result<usize, SoftError>> = Vec::new();
            for (j, id) in chunk.iter().enumerate() {
                match post_store.get(id) {
                    Some(row) => {
                        slots.push(Ok(found.len()));
                        found.push(row);
                    }
                    None => slots.push(Err(SoftError {
                        index: t * QUERY_TILE + j,
                        post_id: id.clone(),
                        message: format!("unknown post id `{id}`"),
                    })),
                }
            }
            let scores = prepared.score_tile(&found);
            chunk
                .iter()
                .zip(slots)
                .map(|(id, slot)| {
                    slot.map(|i| RankedList::retrieved(id.clone(), k, prepared.top_k_of(&scores[i], k, |_| false)))
                })
                .collect()
        })
        .collect();

    let mut out = BatchRetrieval {
        lists: Vec::with_capacity(post_ids.len()),
        soft_errors: Vec::new(),
    };
    for r in tiles.into_iter().flatten() {
        match r {
            Ok(list) => out.lists.push(list),
            Err(e) => out.soft_errors.push(e),
        }
    }
    Ok(out)
}

/// One JSON object per post: `{post_id, stage, k, entries: [[claim_id, score]], ...}`.
pub fn write_run(path: impl AsRef<Path>, lists: &[RankedList]) -> Result<()> {
    crate::io::write_jsonl(path, lists)
}

pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    crate::io::read_jsonl(path)
}
