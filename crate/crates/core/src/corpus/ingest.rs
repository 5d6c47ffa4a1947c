use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, FactCheck, PairLink, Post, Relationship, Split, UNDETERMINED};
use crate::error::{Error, Result};
use crate::langid;

pub const DROP_EMPTY_TEXT: &str = "empty_text";
pub const DROP_UNREGISTERED_LANGUAGE: &str = "unregistered_language";
pub const DROP_BAD_RELATIONSHIP: &str = "bad_relationship";
pub const DROP_UNKNOWN_POST: &str = "unknown_post";
pub const DROP_UNKNOWN_CLAIM: &str = "unknown_claim";
pub const DROP_DUPLICATE_PAIR: &str = "duplicate_pair";
pub const DROP_ORPHAN_CLAIM: &str = "orphan_claim";
pub const DROP_ORPHAN_POST: &str = "orphan_post";

/// Post record as read from disk. Fields other than these (OCR text, URLs, ...)
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub language: Option<String>,
}

/// Fact-check record; only the `claim` field is used, never the title.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawClaim {
    pub id: String,
    pub claim: String,
    #[serde(default)]
    pub language: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPair {
    pub post_id: String,
    pub claim_id: String,
    pub relationship: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub posts_read: usize,
    pub claims_read: usize,
    pub pairs_read: usize,
    pub posts_kept: usize,
    pub claims_kept: usize,
    pub pairs_kept: usize,
    /// Posts that carried an unregistered language code (kept, language set to `und`).
    pub posts_unregistered_language: usize,
    pub claims_unregistered_language: usize,
    /// Dropped record counts keyed by reason.
    pub dropped: BTreeMap<String, usize>,
}

impl IngestReport {
    pub fn dropped(&self, reason: &str) -> usize {
        self.dropped.get(reason).copied().unwrap_or(0)
    }

    fn drop(&mut self, reason: &str) {
        *self.dropped.entry(reason.to_string()).or_insert(0) += 1;
    }
}

fn normalize_language(raw: Option<&str>) -> (String, bool) {
    match raw.map(|l| l.trim().to_ascii_lowercase()) {
        None => (UNDETERMINED.to_string(), false),
        Some(l) if l.is_empty() || l == UNDETERMINED => (UNDETERMINED.to_string(), false),
        Some(l) if langid::is_registered(&l) => (l, false),
        Some(_) => (UNDETERMINED.to_string(), true),
    }
}

/// Builds a closed corpus from raw records.
///
/// Pairs with an unknown endpoint or a relationship other than `claim_review` /
/// `backlink` are dropped; a repeated `(post, claim)` collapses to one link,
/// `claim_review` winning. Claims and posts left without a pair are dropped.
/// Duplicate ids within a source fail immediately.
pub fn ingest(
    posts: Vec<RawPost>,
    claims: Vec<RawClaim>,
    pairs: Vec<RawPair>,
) -> Result<(Corpus, IngestReport)> {
    let mut report = IngestReport {
        posts_read: posts.len(),
        claims_read: claims.len(),
        pairs_read: pairs.len(),
        ..Default::default()
    };

    let mut post_map = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for raw in posts {
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateId {
                kind: "post",
                id: raw.id,
            });
        }
        let text = raw.text.trim();
        if text.is_empty() {
            report.drop(DROP_EMPTY_TEXT);
            continue;
        }
        let (language, unregistered) = normalize_language(raw.language.as_deref());
        if unregistered {
            report.posts_unregistered_language += 1;
        }
        post_map.insert(
            raw.id.clone(),
            Post {
                id: raw.id,
                text: text.to_string(),
                language,
                split: Split::Unassigned,
            },
        );
    }

    let mut claim_map = BTreeMap::new();
    seen.clear();
    for raw in claims {
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateId {
                kind: "claim",
                id: raw.id,
            });
        }
        let text = raw.claim.trim();
        if text.is_empty() {
            report.drop(DROP_EMPTY_TEXT);
            continue;
        }
        let (language, unregistered) = normalize_language(raw.language.as_deref());
        if unregistered {
            report.claims_unregistered_language += 1;
        }
        claim_map.insert(
            raw.id.clone(),
            FactCheck {
                id: raw.id,
                claim_text: text.to_string(),
                language,
                split: Split::Unassigned,
            },
        );
    }

    let mut links: BTreeMap<(String, String), Relationship> = BTreeMap::new();
    for raw in pairs {
        let Some(relationship) = Relationship::parse(raw.relationship.trim()) else {
            report.drop(DROP_BAD_RELATIONSHIP);
            continue;
        };
        if !post_map.contains_key(&raw.post_id) {
            report.drop(DROP_UNKNOWN_POST);
            continue;
        }
        if !claim_map.contains_key(&raw.claim_id) {
            report.drop(DROP_UNKNOWN_CLAIM);
            continue;
        }
        match links.entry((raw.post_id, raw.claim_id)) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(relationship);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                report.drop(DROP_DUPLICATE_PAIR);
                if relationship == Relationship::ClaimReview {
                    e.insert(relationship);
                }
            }
        }
    }

    let pairs: Vec<PairLink> = links
        .into_iter()
        .map(|((post_id, claim_id), relationship)| PairLink {
            post_id,
            claim_id,
            relationship,
        })
        .collect();

    let linked_posts: BTreeSet<&str> = pairs.iter().map(|p| p.post_id.as_str()).collect();
    let linked_claims: BTreeSet<&str> = pairs.iter().map(|p| p.claim_id.as_str()).collect();
    let orphan_posts = post_map.len() - linked_posts.len();
    let orphan_claims = claim_map.len() - linked_claims.len();
    post_map.retain(|id, _| linked_posts.contains(id.as_str()));
    claim_map.retain(|id, _| linked_claims.contains(id.as_str()));
    if orphan_posts > 0 {
        report.dropped.insert(DROP_ORPHAN_POST.into(), orphan_posts);
    }
    if orphan_claims > 0 {
        report.dropped.insert(DROP_ORPHAN_CLAIM.into(), orphan_claims);
    }

    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    report.posts_kept = post_map.len();
    report.claims_kept = claim_map.len();
    report.pairs_kept = pairs.len();

    Ok((
        Corpus {
            posts: post_map,
            claims: claim_map,
            pairs,
        },
        report,
    ))
}

/// Reads the three sources (JSON lines, or CSV by extension) and ingests them.
pub fn ingest_files(
    posts: impl AsRef<Path>,
    claims: impl AsRef<Path>,
    pairs: impl AsRef<Path>,
) -> Result<(Corpus, IngestReport)> {
    ingest(
        crate::io::read_records(posts)?,
        crate::io::read_records(claims)?,
        crate::io::read_records(pairs)?,
    )
}
