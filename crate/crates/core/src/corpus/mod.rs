//! Posts, fact-checked claims and their gold pairs.
//!
//! A [`Corpus`] is always closed: every pair references a retained post and a
//! retained claim, and every retained post and claim appears in at least one pair.

mod ingest;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use ingest::{
    ingest, ingest_files, IngestReport, RawClaim, RawPair, RawPost, DROP_BAD_RELATIONSHIP,
    DROP_DUPLICATE_PAIR, DROP_EMPTY_TEXT, DROP_ORPHAN_CLAIM, DROP_ORPHAN_POST,
    DROP_UNKNOWN_CLAIM, DROP_UNKNOWN_POST, DROP_UNREGISTERED_LANGUAGE,
};
pub use split::{build_splits, SplitManifest, SplitRatios, StratumStats, Violation};

/// Language code of a text that no detector could resolve.
pub const UNDETERMINED: &str = "und";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
    Unassigned,
}

impl Split {
    pub const ASSIGNABLE: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(crate::Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    pub language: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactCheck {
    pub id: String,
    pub claim_text: String,
    pub language: String,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relationship {
    ClaimReview,
    Backlink,
}

impl Relationship {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "claim_review" => Some(Relationship::ClaimReview),
            "backlink" => Some(Relationship::Backlink),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairLink {
    pub post_id: String,
    pub claim_id: String,
    pub relationship: Relationship,
}

/// Id-keyed posts, claims and pairs. Maps are ordered so that every derived
/// artifact is independent of input order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub posts: BTreeMap<String, Post>,
    pub claims: BTreeMap<String, FactCheck>,
    /// Sorted by `(post_id, claim_id)`, unique on that key.
    pub pairs: Vec<PairLink>,
}

impl Corpus {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn gold_claims(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut gold: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for p in &self.pairs {
            gold.entry(p.post_id.as_str())
                .or_default()
                .insert(p.claim_id.as_str());
        }
        gold
    }

    pub fn post_text(&self, id: &str) -> Option<&str> {
        self.posts.get(id).map(|p| p.text.as_str())
    }

    pub fn claim_text(&self, id: &str) -> Option<&str> {
        self.claims.get(id).map(|c| c.claim_text.as_str())
    }

    /// Keeps only `pairs` and then drops posts and claims no longer referenced.
    pub fn restrict_to_pairs(&self, pairs: Vec<PairLink>) -> Corpus {
        let post_ids: BTreeSet<&str> = pairs.iter().map(|p| p.post_id.as_str()).collect();
        let claim_ids: BTreeSet<&str> = pairs.iter().map(|p| p.claim_id.as_str()).collect();
        let posts = self
            .posts
            .iter()
            .filter(|(id, _)| post_ids.contains(id.as_str()))
            .map(|(id, p)| (id.clone(), p.clone()))
            .collect();
        let claims = self
            .claims
            .iter()
            .filter(|(id, _)| claim_ids.contains(id.as_str()))
            .map(|(id, c)| (id.clone(), c.clone()))
            .collect();
        let mut pairs = pairs;
        pairs.sort();
        Corpus {
            posts,
            claims,
            pairs,
        }
    }

    /// Overwrites languages from external assignments (e.g. fused detector output).
    /// Ids missing from the maps keep their current language.
    pub fn apply_languages(
        &mut self,
        post_languages: &BTreeMap<String, String>,
        claim_languages: &BTreeMap<String, String>,
    ) {
        for (id, post) in self.posts.iter_mut() {
            if let Some(lang) = post_languages.get(id) {
                post.language = lang.clone();
            }
        }
        for (id, claim) in self.claims.iter_mut() {
            if let Some(lang) = claim_languages.get(id) {
                claim.language = lang.clone();
            }
        }
    }

    /// Copies split assignments from a manifest into posts and claims.
    pub fn assign_splits(&mut self, manifest: &SplitManifest) {
        for (id, post) in self.posts.iter_mut() {
            post.split = manifest
                .split_of_post
                .get(id)
                .copied()
                .unwrap_or(Split::Unassigned);
        }
        for (id, claim) in self.claims.iter_mut() {
            claim.split = manifest
                .split_of_claim
                .get(id)
                .copied()
                .unwrap_or(Split::Unassigned);
        }
    }

    /// Posts, claims and pairs whose post belongs to `split` under `manifest`.
    pub fn split_view(&self, manifest: &SplitManifest, split: Split) -> Corpus {
        let pairs = self
            .pairs
            .iter()
            .filter(|p| manifest.split_of_post.get(&p.post_id) == Some(&split))
            .cloned()
            .collect();
        self.restrict_to_pairs(pairs)
    }

    /// Every pair endpoint exists and nothing is orphaned.
    pub fn is_closed(&self) -> bool {
        let mut seen_posts = BTreeSet::new();
        let mut seen_claims = BTreeSet::new();
        for p in &self.pairs {
            if !self.posts.contains_key(&p.post_id) || !self.claims.contains_key(&p.claim_id) {
                return false;
            }
            seen_posts.insert(p.post_id.as_str());
            seen_claims.insert(p.claim_id.as_str());
        }
        seen_posts.len() == self.posts.len() && seen_claims.len() == self.claims.len()
    }

    pub fn post_language_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for post in self.posts.values() {
            *counts.entry(post.language.clone()).or_insert(0) += 1;
        }
        counts
    }
}

/// Outcome of [`filter_language_threshold`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub min_posts: usize,
    /// Posts dropped because their language is `und`.
    pub dropped_unresolved: usize,
    /// Languages removed, with the number of posts they had.
    pub removed_languages: BTreeMap<String, usize>,
    pub posts_kept: usize,
    pub claims_kept: usize,
    pub pairs_kept: usize,
}

/// Removes posts whose language has fewer than `min_posts` posts. Claims stay
/// whatever their own language, as long as a surviving post still links to them.
/// Posts with an unresolved language are dropped first.
pub fn filter_language_threshold(corpus: &Corpus, min_posts: usize) -> (Corpus, ThresholdReport) {
    let min_posts = min_posts.max(1);
    let dropped_unresolved = corpus
        .posts
        .values()
        .filter(|p| p.language == UNDETERMINED)
        .count();

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for post in corpus.posts.values().filter(|p| p.language != UNDETERMINED) {
        *counts.entry(post.language.as_str()).or_insert(0) += 1;
    }
    let removed_languages: BTreeMap<String, usize> = counts
        .iter()
        .filter(|(_, &n)| n < min_posts)
        .map(|(l, &n)| (l.to_string(), n))
        .collect();
    for (lang, n) in &removed_languages {
        log::warn!("dropping language `{lang}`: {n} post(s) < {min_posts}");
    }

    let keep_post = |id: &str| {
        corpus
            .posts
            .get(id)
            .is_some_and(|p| p.language != UNDETERMINED && !removed_languages.contains_key(&p.language))
    };
    let pairs = corpus
        .pairs
        .iter()
        .filter(|p| keep_post(&p.post_id))
        .cloned()
        .collect();
    let filtered = corpus.restrict_to_pairs(pairs);
    let report = ThresholdReport {
        min_posts,
        dropped_unresolved,
        removed_languages,
        posts_kept: filtered.posts.len(),
        claims_kept: filtered.claims.len(),
        pairs_kept: filtered.pairs.len(),
    };
    (filtered, report)
}

/// Pairs whose post and claim languages differ, with posts and claims
/// restricted to those pairs. A pair is only crosslingual if both sides have
/// a resolved language.
pub fn crosslingual_view(corpus: &Corpus) -> Corpus {
    let pairs = corpus
        .pairs
        .iter()
        .filter(|p| {
            match (corpus.posts.get(&p.post_id), corpus.claims.get(&p.claim_id)) {
                (Some(post), Some(claim)) => {
                    post.language != UNDETERMINED
                        && claim.language != UNDETERMINED
                        && post.language != claim.language
                }
                _ => false,
            }
        })
        .cloned()
        .collect();
    corpus.restrict_to_pairs(pairs)
}


#[cfg(test)]
mod tests {
    use super::testutil::corpus;
    use super::*;

    #[test]
    fn threshold_removes_small_language() {
        let mut posts = Vec::new();
        let mut claims = Vec::new();
        let mut pairs = Vec::new();
        let ids: Vec<(String, String, &str)> = (0..205)
            .map(|i| (format!("p{i}"), format!("c{i}"), if i < 200 { "en" } else { "xx" }))
            .collect();
        for (p, c, l) in &ids {
            posts.push((p.as_str(), *l));
            claims.push((c.as_str(), "en"));
            pairs.push((p.as_str(), c.as_str()));
        }
        let c = corpus(&posts, &claims, &pairs);
        let (out, report) = filter_language_threshold(&c, 180);
        assert_eq!(out.posts.len(), 200);
        assert!(out.posts.values().all(|p| p.language == "en"));
        assert_eq!(report.removed_languages.get("xx"), Some(&5));
        assert!(out.is_closed());
    }

    #[test]
    fn threshold_of_one_is_identity_on_posts() {
        let c = corpus(
            &[("p1", "en"), ("p2", "xx")],
            &[("c1", "en"), ("c2", "de")],
            &[("p1", "c1"), ("p2", "c2")],
        );
        let (out, report) = filter_language_threshold(&c, 1);
        assert_eq!(out, c);
        assert!(report.removed_languages.is_empty());
    }

    #[test]
    fn threshold_keeps_claims_in_languages_without_posts() {
        // 30 post languages, claims in 46
        let mut posts = Vec::new();
        let mut claims = Vec::new();
        let mut pairs = Vec::new();
        let langs: Vec<&str> = crate::langid::LANGUAGE_REGISTRY.iter().copied().take(46).collect();
        let mut names = Vec::new();
        for i in 0..(30 * 2) {
            names.push((format!("p{i}"), format!("c{i}")));
        }
        for (i, (p, c)) in names.iter().enumerate() {
            posts.push((p.as_str(), langs[i % 30]));
            claims.push((c.as_str(), langs[i % 46]));
            pairs.push((p.as_str(), c.as_str()));
        }
        let extra: Vec<(String, &str)> = (0..16).map(|j| (format!("x{j}"), langs[30 + j])).collect();
        for (j, (c, l)) in extra.iter().enumerate() {
            claims.push((c.as_str(), *l));
            pairs.push((names[j].0.as_str(), c.as_str()));
        }
        let c = corpus(&posts, &claims, &pairs);
        let (out, _) = filter_language_threshold(&c, 2);
        let claim_langs: BTreeSet<&str> = out.claims.values().map(|c| c.language.as_str()).collect();
        let post_langs: BTreeSet<&str> = out.posts.values().map(|p| p.language.as_str()).collect();
        assert_eq!(post_langs.len(), 30);
        assert_eq!(claim_langs.len(), 46);
    }

    #[test]
    fn unresolved_posts_dropped_before_threshold() {
        let c = corpus(
            &[("p1", "en"), ("p2", UNDETERMINED)],
            &[("c1", "en"), ("c2", "en")],
            &[("p1", "c1"), ("p2", "c2")],
        );
        let (out, report) = filter_language_threshold(&c, 1);
        assert_eq!(report.dropped_unresolved, 1);
        assert_eq!(out.posts.keys().collect::<Vec<_>>(), vec!["p1"]);
        assert_eq!(out.claims.len(), 1);
    }

    #[test]
    fn crosslingual_keeps_only_language_mismatches() {
        let c = corpus(
            &[("p1", "en"), ("p2", "en")],
            &[("c1", "pt"), ("c2", "en")],
            &[("p1", "c1"), ("p2", "c2")],
        );
        let view = crosslingual_view(&c);
        assert_eq!(view.pairs.len(), 1);
        assert_eq!(view.pairs[0].claim_id, "c1");
        assert_eq!(view.posts.len(), 1);
        assert_eq!(crosslingual_view(&view), view);
    }

    #[test]
    fn crosslingual_of_monolingual_corpus_is_empty() {
        let c = corpus(&[("p1", "en")], &[("c1", "en")], &[("p1", "c1")]);
        let view = crosslingual_view(&c);
        assert!(view.is_empty());
        assert!(view.posts.is_empty() && view.claims.is_empty());
    }
}
