//! Negative (post, fact-check) pairs for contrastive fine-tuning.
//!
//! Three strategies, all mined offline from the train split and never
//! returning a gold claim of the post:
//!
//! - `random`: uniform draws from the pool.
//! - `similarity`: the most similar non-gold claims, most similar first.
//! - `topic`: draws from the post's topic cluster, topped up from the
//!   `uncategorized` bucket when the cluster runs short.
//!
//! Each post gets its own RNG stream derived from `(seed, post_id)`.

mod cluster;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cluster::{cluster_claims, cluster_joint, ClusterLabel, ClusterMap, ClusterParams, SphericalKMeans};

use crate::corpus::{Corpus, Split, SplitManifest};
use crate::embedstore::EmbeddingStore;
use crate::error::{Error, Result};
use crate::retrieval::{CandidatePool, PoolPolicy, PreparedPool};
use crate::rng::stream_rng;

/// Values of k worth sweeping.
pub const K_GRID: [usize; 6] = [1, 2, 3, 4, 5, 10];

pub const FORMAT_TAG: &str = "claimlink-negatives/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Similarity,
    Topic,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "similarity" => Ok(Strategy::Similarity),
            "topic" => Ok(Strategy::Topic),
            other => Err(Error::Config(format!("unknown negative strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeConfig {
    pub strategy: Strategy,
    pub k: usize,
    pub seed: u64,
    #[serde(default = "train")]
    pub split: Split,
}

fn train() -> Split {
    Split::Train
}

impl NegativeConfig {
    pub fn new(strategy: Strategy, k: usize, seed: u64) -> Self {
        NegativeConfig {
            strategy,
            k,
            seed,
            split: Split::Train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("negatives.k must be at least 1".into()));
        }
        if self.split != Split::Train {
            return Err(Error::Config("negatives are mined from the train split only".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shortfall {
    PoolExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeRecord {
    pub post_id: String,
    pub strategy: Strategy,
    pub negatives: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortfall_reason: Option<Shortfall>,
}

/// Gold sets of the posts to mine for and the claim pool to mine from.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningInput {
    gold: BTreeMap<String, BTreeSet<String>>,
    pool: Vec<String>,
}

impl MiningInput {
    pub fn new(
        pairs: impl IntoIterator<Item = (String, String)>,
        pool: impl IntoIterator<Item = String>,
    ) -> Self {
        let mut gold: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (post, claim) in pairs {
            gold.entry(post).or_default().insert(claim);
        }
        let mut pool: Vec<String> = pool.into_iter().collect();
        pool.sort();
        pool.dedup();
        MiningInput { gold, pool }
    }

    /// Posts and claims of one split. Pair closure keeps every gold claim of
    /// a post in the same split as the post.
    pub fn from_split(corpus: &Corpus, manifest: &SplitManifest, split: Split) -> Self {
        let view = corpus.split_view(manifest, split);
        Self::new(
            view.pairs.into_iter().map(|p| (p.post_id, p.claim_id)),
            corpus
                .claims
                .keys()
                .filter(|id| manifest.split_of_claim.get(*id) == Some(&split))
                .cloned(),
        )
    }

    pub fn posts(&self) -> impl Iterator<Item = &str> {
        self.gold.keys().map(String::as_str)
    }

    pub fn gold(&self, post_id: &str) -> Option<&BTreeSet<String>> {
        self.gold.get(post_id)
    }

    pub fn pool(&self) -> &[String] {
        &self.pool
    }
}

fn record(post_id: &str, strategy: Strategy, negatives: Vec<String>, k: usize) -> NegativeRecord {
    let shortfall_reason = (negatives.len() < k).then_some(Shortfall::PoolExhausted);
    NegativeRecord {
        post_id: post_id.to_string(),
        strategy,
        negatives,
        shortfall_reason,
    }
}

/// `k` distinct items of `candidates` in random order (all of them if fewer).
fn sample_distinct<R: Rng>(rng: &mut R, candidates: &[&str], k: usize) -> Vec<String> {
    let amount = k.min(candidates.len());
    index::sample(rng, candidates.len(), amount)
        .into_iter()
        .map(|i| candidates[i].to_string())
        .collect()
}

pub fn mine_random(input: &MiningInput, cfg: &NegativeConfig) -> Result<Vec<NegativeRecord>> {
    cfg.validate()?;
    let pool = &input.pool;
    Ok(input
        .gold
        .par_iter()
        .map(|(post, gold)| {
            let mut rng = stream_rng(cfg.seed, &format!("random/{post}"));
            let blocked = gold.iter().filter(|g| pool.binary_search(g).is_ok()).count();
            let eligible = pool.len() - blocked;
            let negatives = if eligible <= 2 * cfg.k {
                let cands: Vec<&str> = pool.iter().map(String::as_str).filter(|c| !gold.contains(*c)).collect();
                sample_distinct(&mut rng, &cands, cfg.k)
            } else {
                // rejection sampling; eligible > 2k keeps the expected number of draws under 2k
                let mut chosen = Vec::with_capacity(cfg.k);
                let mut taken = HashSet::with_capacity(cfg.k);
                while chosen.len() < cfg.k {
                    let i = rng.random_range(0..pool.len());
                    let c = &pool[i];
                    if !gold.contains(c) && taken.insert(i) {
                        chosen.push(c.clone());
                    }
                }
                chosen
            };
            record(post, Strategy::Random, negatives, cfg.k)
        })
        .collect())
}

/// Most similar non-gold pool claims by cosine, most similar first
/// (ties by claim id).
pub fn mine_similarity(
    input: &MiningInput,
    post_store: &EmbeddingStore,
    claim_store: &EmbeddingStore,
    cfg: &NegativeConfig,
) -> Result<Vec<NegativeRecord>> {
    cfg.validate()?;
    if post_store.dim() != claim_store.dim() {
        return Err(Error::DimMismatch {
            expected: claim_store.dim(),
            actual: post_store.dim(),
        });
    }
    let pool = CandidatePool::new(input.pool.iter().cloned(), PoolPolicy::FullCorpus)?;
    let prepared = PreparedPool::new(claim_store, &pool)?;
    input
        .gold
        .par_iter()
        .map(|(post, gold)| {
            let query = post_store.get(post).ok_or_else(|| Error::UnknownId {
                kind: "post",
                id: post.clone(),
            })?;
            let negatives = prepared
                .top_k(query, cfg.k, |id| gold.contains(id))
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            Ok(record(post, Strategy::Similarity, negatives, cfg.k))
        })
        .collect()
}

/// Random non-gold claims from the post's topic cluster. When the cluster has
/// `k` or fewer eligible claims, all of them are used and the rest come from
/// the `uncategorized` bucket.
pub fn mine_topic(input: &MiningInput, clusters: &ClusterMap, cfg: &NegativeConfig) -> Result<Vec<NegativeRecord>> {
    cfg.validate()?;
    let mut buckets: BTreeMap<ClusterLabel, Vec<&str>> = BTreeMap::new();
    for id in &input.pool {
        let label = clusters
            .cluster_of
            .get(id)
            .copied()
            .unwrap_or(ClusterLabel::Uncategorized);
        buckets.entry(label).or_default().push(id);
    }
    let empty = Vec::new();
    let uncategorized = buckets.get(&ClusterLabel::Uncategorized).unwrap_or(&empty);

    input
        .gold
        .par_iter()
        .map(|(post, gold)| {
            let label = *clusters.post_cluster.get(post).ok_or_else(|| {
                Error::Config(format!("post `{post}` has no topic cluster"))
            })?;
            let mut rng = stream_rng(cfg.seed, &format!("topic/{post}"));
            let own: Vec<&str> = buckets
                .get(&label)
                .unwrap_or(&empty)
                .iter()
                .copied()
                .filter(|c| !gold.contains(*c))
                .collect();
            let mut negatives = sample_distinct(&mut rng, &own, cfg.k);
            if negatives.len() < cfg.k && label != ClusterLabel::Uncategorized {
                let chosen: HashSet<&str> = negatives.iter().map(String::as_str).collect();
                let fallback: Vec<&str> = uncategorized
                    .iter()
                    .copied()
                    .filter(|c| !gold.contains(*c) && !chosen.contains(c))
                    .collect();
                let need = cfg.k - negatives.len();
                negatives.extend(sample_distinct(&mut rng, &fallback, need));
            }
            Ok(record(post, Strategy::Topic, negatives, cfg.k))
        })
        .collect()
}

/// Runs the configured strategy. Inputs a strategy does not need may be `None`.
pub fn mine(
    input: &MiningInput,
    cfg: &NegativeConfig,
    stores: Option<(&EmbeddingStore, &EmbeddingStore)>,
    clusters: Option<&ClusterMap>,
) -> Result<Vec<NegativeRecord>> {
    match cfg.strategy {
        Strategy::Random => mine_random(input, cfg),
        Strategy::Similarity => {
            let (posts, claims) =
                stores.ok_or_else(|| Error::Config("similarity negatives need post and claim stores".into()))?;
            mine_similarity(input, posts, claims, cfg)
        }
        Strategy::Topic => {
            let clusters = clusters.ok_or_else(|| Error::Config("topic negatives need a cluster map".into()))?;
            mine_topic(input, clusters, cfg)
        }
    }
}

/// Problems with mined records: gold leakage, duplicates, too many negatives.
pub fn validate_records(records: &[NegativeRecord], input: &MiningInput, k: usize) -> Vec<String> {
    let mut problems = Vec::new();
    for r in records {
        let gold = input.gold(&r.post_id);
        let mut seen = HashSet::new();
        for n in &r.negatives {
            if gold.is_some_and(|g| g.contains(n)) {
                problems.push(format!("{}: gold claim `{n}` used as negative", r.post_id));
            }
            if !seen.insert(n) {
                problems.push(format!("{}: duplicate negative `{n}`", r.post_id));
            }
        }
        if r.negatives.len() > k {
            problems.push(format!("{}: {} negatives > k = {k}", r.post_id, r.negatives.len()));
        }
    }
    problems
}

/// First line of a negatives file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativesHeader {
    pub format: String,
    pub strategy: Strategy,
    pub k: usize,
    pub seed: u64,
    pub split: Split,
    #[serde(default)]
    pub provider_tag: Option<String>,
    #[serde(default)]
    pub cluster_method_tag: Option<String>,
    pub records: usize,
}

impl NegativesHeader {
    pub fn new(cfg: &NegativeConfig, records: usize) -> Self {
        NegativesHeader {
            format: FORMAT_TAG.to_string(),
            strategy: cfg.strategy,
            k: cfg.k,
            seed: cfg.seed,
            split: cfg.split,
            provider_tag: None,
            cluster_method_tag: None,
            records,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: NegativesHeader,
}

/// JSON lines: a `{"header": ..}` line, then one record per line.
pub fn serialize_negatives(path: impl AsRef<Path>, header: &NegativesHeader, records: &[NegativeRecord]) -> Result<()> {
    use std::io::Write;

    let path = path.as_ref();
    crate::io::ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut w, &HeaderLine { header: header.clone() })?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_negatives(path: impl AsRef<Path>) -> Result<(NegativesHeader, Vec<NegativeRecord>)> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| Error::Malformed {
            origin: origin.clone(),
            line: 1,
            message: "missing header".into(),
        })?;
    let HeaderLine { header } = serde_json::from_str(&first).map_err(|e| Error::Malformed {
        origin: origin.clone(),
        line: 1,
        message: e.to_string(),
    })?;
    if header.format != FORMAT_TAG {
        return Err(Error::Format(format!("unexpected negatives format `{}`", header.format)));
    }
    let rest: Vec<String> = lines.collect::<std::io::Result<_>>().map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in rest.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line).map_err(|e| Error::Malformed {
            origin: origin.clone(),
            line: i + 2,
            message: e.to_string(),
        })?);
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(gold: &[(&str, &str)], pool: &[&str]) -> MiningInput {
        MiningInput::new(
            gold.iter().map(|(p, c)| (p.to_string(), c.to_string())),
            pool.iter().map(|c| c.to_string()),
        )
    }

    #[test]
    fn random_excludes_gold_and_is_deterministic() {
        let inp = input(&[("p", "c1")], &["c1", "c2", "c3", "c4", "c5"]);
        let cfg = NegativeConfig::new(Strategy::Random, 2, 42);
        let a = mine_random(&inp, &cfg).unwrap();
        assert_eq!(a[0].negatives.len(), 2);
        assert!(!a[0].negatives.contains(&"c1".to_string()));
        assert_ne!(a[0].negatives[0], a[0].negatives[1]);
        assert_eq!(a, mine_random(&inp, &cfg).unwrap());
    }

    #[test]
    fn random_boundary_takes_whole_remainder() {
        let inp = input(&[("p", "c1")], &["c1", "c2", "c3", "c4", "c5"]);
        let r = mine_random(&inp, &NegativeConfig::new(Strategy::Random, 4, 1)).unwrap();
        let got: BTreeSet<&str> = r[0].negatives.iter().map(String::as_str).collect();
        assert_eq!(got, BTreeSet::from(["c2", "c3", "c4", "c5"]));
        assert_eq!(r[0].shortfall_reason, None);
        let r = mine_random(&inp, &NegativeConfig::new(Strategy::Random, 6, 1)).unwrap();
        assert_eq!(r[0].shortfall_reason, Some(Shortfall::PoolExhausted));
    }

    #[test]
    fn random_large_pool_uses_rejection_path() {
        let pool: Vec<String> = (0..1000).map(|i| format!("c{i}")).collect();
        let refs: Vec<&str> = pool.iter().map(String::as_str).collect();
        let inp = input(&[("p", "c5"), ("p", "c6")], &refs);
        let r = mine_random(&inp, &NegativeConfig::new(Strategy::Random, 10, 3)).unwrap();
        assert!(validate_records(&r, &inp, 10).is_empty());
        assert_eq!(r[0].negatives.len(), 10);
    }

    fn stores() -> (EmbeddingStore, EmbeddingStore) {
        let posts = EmbeddingStore::from_rows(2, "t", [("p", vec![1.0, 0.0])]).unwrap();
        let claims =
            EmbeddingStore::from_rows(2, "t", [("a", vec![1.0, 0.0]), ("b", vec![0.6, 0.8]), ("c", vec![0.0, 1.0])])
                .unwrap();
        (posts, claims)
    }

    #[test]
    fn similarity_skips_gold() {
        let (posts, claims) = stores();
        let inp = input(&[("p", "a")], &["a", "b", "c"]);
        let one = mine_similarity(&inp, &posts, &claims, &NegativeConfig::new(Strategy::Similarity, 1, 0)).unwrap();
        assert_eq!(one[0].negatives, ["b"]);
        let two = mine_similarity(&inp, &posts, &claims, &NegativeConfig::new(Strategy::Similarity, 2, 0)).unwrap();
        assert_eq!(two[0].negatives, ["b", "c"]);
        assert_eq!(two[0].shortfall_reason, None);
    }

    fn clusters(claims: &[(&str, ClusterLabel)], post: ClusterLabel) -> ClusterMap {
        ClusterMap {
            cluster_of: claims.iter().map(|(c, l)| (c.to_string(), *l)).collect(),
            post_cluster: BTreeMap::from([("p".to_string(), post)]),
            method_tag: "test".into(),
        }
    }

    #[test]
    fn topic_draws_from_own_cluster() {
        use ClusterLabel::*;
        let inp = input(&[("p", "c1")], &["c1", "c2", "c3", "c7"]);
        let map = clusters(&[("c1", Topic(0)), ("c2", Topic(0)), ("c3", Topic(0)), ("c7", Uncategorized)], Topic(0));
        let r = mine_topic(&inp, &map, &NegativeConfig::new(Strategy::Topic, 2, 5)).unwrap();
        let got: BTreeSet<&str> = r[0].negatives.iter().map(String::as_str).collect();
        assert_eq!(got, BTreeSet::from(["c2", "c3"]));
    }

    #[test]
    fn topic_falls_back_to_uncategorized() {
        use ClusterLabel::*;
        let inp = input(&[("p", "c1")], &["c1", "c7", "c8", "c9"]);
        let map = clusters(
            &[("c1", Topic(0)), ("c7", Uncategorized), ("c8", Uncategorized), ("c9", Uncategorized)],
            Topic(0),
        );
        let r = mine_topic(&inp, &map, &NegativeConfig::new(Strategy::Topic, 2, 5)).unwrap();
        assert_eq!(r[0].negatives.len(), 2);
        assert!(r[0].negatives.iter().all(|n| ["c7", "c8", "c9"].contains(&n.as_str())));
    }

    #[test]
    fn topic_exhaustion_records_shortfall() {
        use ClusterLabel::*;
        let inp = input(&[("p", "c1")], &["c1"]);
        let map = clusters(&[("c1", Topic(0))], Topic(0));
        let r = mine_topic(&inp, &map, &NegativeConfig::new(Strategy::Topic, 2, 5)).unwrap();
        assert!(r[0].negatives.is_empty());
        assert_eq!(r[0].shortfall_reason, Some(Shortfall::PoolExhausted));
    }

    #[test]
    fn round_trip_with_header() {
        let recs = vec![
            NegativeRecord { post_id: "p1".into(), strategy: Strategy::Similarity, negatives: vec!["a".into()], shortfall_reason: None },
            NegativeRecord { post_id: "p2".into(), strategy: Strategy::Similarity, negatives: vec![], shortfall_reason: Some(Shortfall::PoolExhausted) },
            NegativeRecord { post_id: "p3".into(), strategy: Strategy::Similarity, negatives: vec!["b".into(), "c".into()], shortfall_reason: None },
        ];
        let mut header = NegativesHeader::new(&NegativeConfig::new(Strategy::Similarity, 10, 7), recs.len());
        header.provider_tag = Some("file:claims.jsonl".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("neg.jsonl");
        serialize_negatives(&path, &header, &recs).unwrap();
        let first = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
        assert!(first.contains(r#""strategy":"similarity","k":10"#));
        assert_eq!(load_negatives(&path).unwrap(), (header, recs));
    }

    #[test]
    fn config_rules() {
        assert!(NegativeConfig::new(Strategy::Random, 0, 0).validate().is_err());
        let mut cfg = NegativeConfig::new(Strategy::Random, 1, 0);
        cfg.split = Split::Test;
        assert!(cfg.validate().is_err());
    }
}
