//! Claim-disjoint, pair-closed train/dev/test splits stratified by post language.
//!
//! The connected components of the bipartite post–claim graph are the atomic
//! units: moving a component as a whole is the least structure that keeps every
//! claim in one split and every pair inside one split. Within a language
//! stratum, components are visited largest first (seeded shuffle among equal
//! sizes) and each goes to the split currently furthest below its post target.
//! That greedy keeps every split within one component of its target.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Corpus, Split};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerSplit<T> {
    pub train: T,
    pub dev: T,
    pub test: T,
}

impl<T: Copy> PerSplit<T> {
    pub fn get(&self, split: Split) -> T {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
            Split::Unassigned => panic!("no slot for unassigned split"),
        }
    }

    fn slot(&mut self, split: Split) -> &mut T {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
            Split::Unassigned => panic!("no slot for unassigned split"),
        }
    }
}

impl Default for PerSplit<usize> {
    fn default() -> Self {
        PerSplit { train: 0, dev: 0, test: 0 }
    }
}

impl Default for PerSplit<(usize, usize, usize)> {
    fn default() -> Self {
        PerSplit { train: (0, 0, 0), dev: (0, 0, 0), test: (0, 0, 0) }
    }
}

pub type SplitRatios = PerSplit<f64>;

impl SplitRatios {
    pub fn new(train: f64, dev: f64, test: f64) -> Result<Self> {
        let r = PerSplit { train, dev, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.dev, self.test];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(format!("split ratios must be non-negative: {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Parses `"0.8,0.1,0.1"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad ratios `{s}`: {e}")))?;
        match parts.as_slice() {
            [a, b, c] => Self::new(*a, *b, *c),
            _ => Err(Error::Config(format!("expected three ratios, got `{s}`"))),
        }
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        PerSplit {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumStats {
    pub components: usize,
    pub posts: usize,
    pub largest_component_posts: usize,
    pub target_posts: PerSplit<f64>,
    pub achieved_posts: PerSplit<usize>,
    pub achieved_fractions: PerSplit<f64>,
    /// Too few components to populate every split; everything went to train.
    pub all_train_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub ratios: SplitRatios,
    pub seed: u64,
    pub stratify_key: String,
    pub strata: BTreeMap<String, StratumStats>,
    pub warnings: Vec<String>,
    pub split_of_post: BTreeMap<String, Split>,
    pub split_of_claim: BTreeMap<String, Split>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    PostUnassigned(String),
    ClaimUnassigned(String),
    PairCrossesSplits { post_id: String, claim_id: String },
}

impl SplitManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let manifest: SplitManifest = crate::io::read_json(path)?;
        manifest.ratios.validate()?;
        Ok(manifest)
    }

    /// Manifest from externally published id lists (e.g. a released split).
    /// Strata statistics are left empty.
    pub fn from_assignments(
        split_of_post: BTreeMap<String, Split>,
        split_of_claim: BTreeMap<String, Split>,
        ratios: SplitRatios,
        seed: u64,
    ) -> Result<Self> {
        ratios.validate()?;
        Ok(SplitManifest {
            ratios,
            seed,
            stratify_key: "post_language".into(),
            strata: BTreeMap::new(),
            warnings: Vec::new(),
            split_of_post,
            split_of_claim,
        })
    }

    /// Claim-disjointness holds by construction of the map; this checks that
    /// every post and claim is assigned and that no pair crosses splits.
    pub fn violations(&self, corpus: &Corpus) -> Vec<Violation> {
        let mut out = Vec::new();
        for id in corpus.posts.keys() {
            if !matches!(self.split_of_post.get(id), Some(s) if *s != Split::Unassigned) {
                out.push(Violation::PostUnassigned(id.clone()));
            }
        }
        for id in corpus.claims.keys() {
            if !matches!(self.split_of_claim.get(id), Some(s) if *s != Split::Unassigned) {
                out.push(Violation::ClaimUnassigned(id.clone()));
            }
        }
        for pair in &corpus.pairs {
            let ps = self.split_of_post.get(&pair.post_id);
            let cs = self.split_of_claim.get(&pair.claim_id);
            if ps.is_some() && cs.is_some() && ps != cs {
                out.push(Violation::PairCrossesSplits {
                    post_id: pair.post_id.clone(),
                    claim_id: pair.claim_id.clone(),
                });
            }
        }
        out
    }

    /// (posts, claims, pairs) per split.
    pub fn counts(&self, corpus: &Corpus) -> PerSplit<(usize, usize, usize)> {
        let mut out: PerSplit<(usize, usize, usize)> = PerSplit::default();
        for id in corpus.posts.keys() {
            if let Some(&s) = self.split_of_post.get(id).filter(|s| **s != Split::Unassigned) {
                out.slot(s).0 += 1;
            }
        }
        for id in corpus.claims.keys() {
            if let Some(&s) = self.split_of_claim.get(id).filter(|s| **s != Split::Unassigned) {
                out.slot(s).1 += 1;
            }
        }
        for pair in &corpus.pairs {
            if let Some(&s) = self
                .split_of_post
                .get(&pair.post_id)
                .filter(|s| **s != Split::Unassigned)
            {
                out.slot(s).2 += 1;
            }
        }
        out
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes root so roots are order-independent
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

struct Component {
    posts: Vec<usize>,
    claims: Vec<usize>,
}

/// Assigns every post and claim of a closed corpus to train/dev/test.
/// Deterministic in `(corpus, ratios, seed)`.
pub fn build_splits(corpus: &Corpus, ratios: SplitRatios, seed: u64) -> Result<SplitManifest> {
    ratios.validate()?;
    let post_ids: Vec<&String> = corpus.posts.keys().collect();
    let claim_ids: Vec<&String> = corpus.claims.keys().collect();
    let post_index: BTreeMap<&str, usize> =
        post_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let claim_index: BTreeMap<&str, usize> =
        claim_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let n_posts = post_ids.len();

    let mut dsu = DisjointSet::new(n_posts + claim_ids.len());
    for pair in &corpus.pairs {
        let (Some(&p), Some(&c)) = (
            post_index.get(pair.post_id.as_str()),
            claim_index.get(pair.claim_id.as_str()),
        ) else {
            return Err(Error::UnknownId {
                kind: "pair endpoint",
                id: format!("{}/{}", pair.post_id, pair.claim_id),
            });
        };
        dsu.union(p, n_posts + c);
    }

    let mut by_root: BTreeMap<usize, Component> = BTreeMap::new();
    for node in 0..(n_posts + claim_ids.len()) {
        let root = dsu.find(node);
        let comp = by_root.entry(root).or_insert_with(|| Component {
            posts: Vec::new(),
            claims: Vec::new(),
        });
        if node < n_posts {
            comp.posts.push(node);
        } else {
            comp.claims.push(node - n_posts);
        }
    }

    // stratum = majority post language, ties to the smallest code
    let mut strata: BTreeMap<String, Vec<Component>> = BTreeMap::new();
    for comp in by_root.into_values() {
        let mut langs: BTreeMap<&str, usize> = BTreeMap::new();
        for &p in &comp.posts {
            *langs.entry(corpus.posts[post_ids[p]].language.as_str()).or_insert(0) += 1;
        }
        let stratum = langs
            .iter()
            .fold(None::<(&str, usize)>, |best, (&l, &n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((l, n)),
            })
            .map(|(l, _)| l.to_string())
            .unwrap_or_else(|| super::UNDETERMINED.to_string());
        strata.entry(stratum).or_default().push(comp);
    }

    let active: Vec<Split> = Split::ASSIGNABLE
        .into_iter()
        .filter(|s| ratios.get(*s) > 0.0)
        .collect();

    let mut split_of_post = BTreeMap::new();
    let mut split_of_claim = BTreeMap::new();
    let mut stats = BTreeMap::new();
    let mut warnings = Vec::new();

    for (language, mut comps) in strata {
        // components arrive ordered by root (smallest node index), so the
        // shuffle input is deterministic
        let mut rng = stream_rng(seed, &format!("split/{language}"));
        comps.shuffle(&mut rng);
        comps.sort_by(|a, b| b.posts.len().cmp(&a.posts.len()));

        let total: usize = comps.iter().map(|c| c.posts.len()).sum();
        let target = PerSplit {
            train: ratios.train * total as f64,
            dev: ratios.dev * total as f64,
            test: ratios.test * total as f64,
        };
        let fallback = comps.len() < active.len();
        if fallback {
            warnings.push(format!(
                "stratum `{language}` has {} component(s), too few for {} splits; all assigned to train",
                comps.len(),
                active.len()
            ));
        }

        let mut achieved: PerSplit<usize> = PerSplit::default();
        for comp in &comps {
            let split = if fallback {
                Split::Train
            } else {
                let mut best = active[0];
                let mut best_deficit = f64::NEG_INFINITY;
                for &s in &active {
                    let deficit = target.get(s) - achieved.get(s) as f64;
                    if deficit > best_deficit {
                        best = s;
                        best_deficit = deficit;
                    }
                }
                best
            };
            *achieved.slot(split) += comp.posts.len();
            for &p in &comp.posts {
                split_of_post.insert(post_ids[p].clone(), split);
            }
            for &c in &comp.claims {
                split_of_claim.insert(claim_ids[c].clone(), split);
            }
        }

        let frac = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };
        stats.insert(
            language,
            StratumStats {
                components: comps.len(),
                posts: total,
                largest_component_posts: comps.first().map_or(0, |c| c.posts.len()),
                target_posts: target,
                achieved_posts: achieved,
                achieved_fractions: PerSplit {
                    train: frac(achieved.train),
                    dev: frac(achieved.dev),
                    test: frac(achieved.test),
                },
                all_train_fallback: fallback,
            },
        );
    }

    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(SplitManifest {
        ratios,
        seed,
        stratify_key: "post_language".into(),
        strata: stats,
        warnings,
        split_of_post,
        split_of_claim,
    })
}
