//! Pair Success@k and MRR@k.
//!
//! By default every gold pair is one evaluation unit: a post with three gold
//! claims contributes three units, and its other gold claims stay in the
//! ranking. [`Aggregation::PerPostBest`] scores each post once by its
//! best-ranked gold claim instead.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::retrieval::{CandidatePool, RankedList, Scope, Setting};

pub const DEFAULT_K: usize = 10;

/// 1 if `gold` is within the first `k` entries.
pub fn pair_success_at_k(ranked: &RankedList, gold: &str, k: usize) -> u8 {
    match ranked.rank_of(gold) {
        Some(r) if r <= k => 1,
        _ => 0,
    }
}

/// `1 / rank` if `gold` is within the first `k` entries, else 0.
pub fn reciprocal_rank_at_k(ranked: &RankedList, gold: &str, k: usize) -> f64 {
    match ranked.rank_of(gold) {
        Some(r) if r <= k => 1.0 / r as f64,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    PerPair,
    PerPostBest,
}

/// A gold pair with the languages needed for breakdowns.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvalPair {
    pub post_id: String,
    pub claim_id: String,
    pub post_language: String,
    pub claim_language: String,
}

impl EvalPair {
    /// All pairs of `corpus` whose post satisfies `keep_post`.
    pub fn from_corpus(corpus: &Corpus, keep_post: impl Fn(&str) -> bool) -> Vec<EvalPair> {
        corpus
            .pairs
            .iter()
            .filter(|p| keep_post(&p.post_id))
            .map(|p| EvalPair {
                post_id: p.post_id.clone(),
                claim_id: p.claim_id.clone(),
                post_language: corpus
                    .posts
                    .get(&p.post_id)
                    .map_or_else(|| crate::corpus::UNDETERMINED.into(), |x| x.language.clone()),
                claim_language: corpus
                    .claims
                    .get(&p.claim_id)
                    .map_or_else(|| crate::corpus::UNDETERMINED.into(), |x| x.language.clone()),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub setting: Setting,
    pub scope: Scope,
    pub k: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            setting: Setting::Multilingual,
            scope: Scope::Test,
            k: DEFAULT_K,
            aggregation: Aggregation::PerPair,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguagePairMetrics {
    pub post_language: String,
    pub claim_language: String,
    pub s_at_k: f64,
    pub mrr_at_k: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub setting: Setting,
    pub scope: Scope,
    pub k: usize,
    pub aggregation: Aggregation,
    pub s_at_k: f64,
    pub mrr_at_k: f64,
    pub n_pairs: usize,
    /// Units whose gold claim is outside the candidate pool; they score 0.
    pub n_gold_unreachable: usize,
    pub by_language_pair: Vec<LanguagePairMetrics>,
}

struct Unit<'a> {
    post_id: &'a str,
    key: &'a str,
    langs: (&'a str, &'a str),
    success: u8,
    rr: f64,
    unreachable: bool,
}

/// Scores `run` against `pairs`.
///
/// In the crosslingual setting only pairs across languages are scored. When
/// `pool` is given, units whose gold is not in it are counted in
/// `n_gold_unreachable`. Sums run over units sorted by `(post_id, claim_id)`,
/// so the result does not depend on run or pair order.
pub fn evaluate_run(
    run: &[RankedList],
    pairs: &[EvalPair],
    opts: &EvalOptions,
    pool: Option<&CandidatePool>,
) -> Result<MetricsReport> {
    if opts.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let by_post: HashMap<&str, &RankedList> = run.iter().map(|l| (l.post_id.as_str(), l)).collect();

    let mut selected: Vec<&EvalPair> = pairs
        .iter()
        .filter(|p| opts.setting == Setting::Multilingual || p.post_language != p.claim_language)
        .collect();
    selected.sort();
    selected.dedup_by(|a, b| a.post_id == b.post_id && a.claim_id == b.claim_id);

    let missing: Vec<String> = selected
        .iter()
        .map(|p| p.post_id.as_str())
        .filter(|id| !by_post.contains_key(id))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPosts(missing));
    }

    let mut units: Vec<Unit> = selected
        .iter()
        .map(|p| {
            let list = by_post[p.post_id.as_str()];
            Unit {
                post_id: &p.post_id,
                key: &p.claim_id,
                langs: (&p.post_language, &p.claim_language),
                success: pair_success_at_k(list, &p.claim_id, opts.k),
                rr: reciprocal_rank_at_k(list, &p.claim_id, opts.k),
                unreachable: pool.is_some_and(|pool| !pool.contains(&p.claim_id)),
            }
        })
        .collect();

    if opts.aggregation == Aggregation::PerPostBest {
        let mut best: Vec<Unit> = Vec::new();
        for u in units {
            match best.last_mut() {
                Some(b) if b.post_id == u.post_id => {
                    if u.rr > b.rr || (u.rr == b.rr && u.success > b.success) {
                        *b = Unit { key: b.key, ..u };
                    }
                    b.unreachable &= u.unreachable;
                }
                _ => best.push(u),
            }
        }
        units = best;
    }

    let mut global = Tally::default();
    let mut per_lang: BTreeMap<(&str, &str), Tally> = BTreeMap::new();
    let mut unreachable = 0;
    for u in &units {
        global.add(u.success, u.rr);
        per_lang.entry(u.langs).or_default().add(u.success, u.rr);
        unreachable += usize::from(u.unreachable);
    }

    Ok(MetricsReport {
        setting: opts.setting,
        scope: opts.scope,
        k: opts.k,
        aggregation: opts.aggregation,
        s_at_k: global.success_rate(),
        mrr_at_k: global.mrr(),
        n_pairs: global.n,
        n_gold_unreachable: unreachable,
        by_language_pair: per_lang
            .into_iter()
            .map(|((pl, cl), t)| LanguagePairMetrics {
                post_language: pl.to_string(),
                claim_language: cl.to_string(),
                s_at_k: t.success_rate(),
                mrr_at_k: t.mrr(),
                n_pairs: t.n,
            })
            .collect(),
    })
}

#[derive(Default)]
struct Tally {
    n: usize,
    hits: usize,
    rr_sum: f64,
}

impl Tally {
    fn add(&mut self, success: u8, rr: f64) {
        self.n += 1;
        self.hits += usize::from(success);
        self.rr_sum += rr;
    }

    fn success_rate(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.hits as f64 / self.n as f64
        }
    }

    fn mrr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.rr_sum / self.n as f64
        }
    }
}

/// Pairs of a run restricted to the posts the run covers; convenient when a
/// pairs file holds more than the evaluated split.
pub fn pairs_for_run<'a>(run: &[RankedList], pairs: &'a [EvalPair]) -> Vec<&'a EvalPair> {
    let posts: HashSet<&str> = run.iter().map(|l| l.post_id.as_str()).collect();
    pairs.iter().filter(|p| posts.contains(p.post_id.as_str())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub s_at_k: f64,
    pub mrr_at_k: f64,
    pub delta_s_at_k: f64,
    pub delta_mrr_at_k: f64,
}

/// Reports side by side, with deltas against the first one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub setting: Setting,
    pub scope: Scope,
    pub k: usize,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_runs(reports: &[(String, MetricsReport)]) -> Result<Comparison> {
    let Some((_, base)) = reports.first() else {
        return Err(Error::Incomparable("no reports given".into()));
    };
    for (name, r) in reports {
        if (r.setting, r.scope, r.k) != (base.setting, base.scope, base.k) {
            return Err(Error::Incomparable(format!(
                "`{name}` is {:?}/{:?}@{} but the baseline is {:?}/{:?}@{}",
                r.setting, r.scope, r.k, base.setting, base.scope, base.k
            )));
        }
    }
    Ok(Comparison {
        setting: base.setting,
        scope: base.scope,
        k: base.k,
        rows: reports
            .iter()
            .map(|(name, r)| ComparisonRow {
                name: name.clone(),
                s_at_k: r.s_at_k,
                mrr_at_k: r.mrr_at_k,
                delta_s_at_k: r.s_at_k - base.s_at_k,
                delta_mrr_at_k: r.mrr_at_k - base.mrr_at_k,
            })
            .collect(),
    })
}

fn signed(x: f64) -> String {
    // avoid "-0.0000" for tiny negative rounding noise
    let x = if x.abs() < 5e-5 { 0.0 } else { x };
    format!("{x:+.4}")
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(3);
        let k = self.k;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}",
            "run",
            format!("S@{k}"),
            format!("MRR@{k}"),
            format!("ΔS@{k}"),
            format!("ΔMRR@{k}"),
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.4}  {:>8.4}  {:>8}  {:>8}",
                r.name,
                r.s_at_k,
                r.mrr_at_k,
                signed(r.delta_s_at_k),
                signed(r.delta_mrr_at_k),
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let k = self.k;
        let mut out = format!("run,s_at_{k},mrr_at_{k},delta_s_at_{k},delta_mrr_at_{k}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.4},{:.4},{},{}",
                r.name,
                r.s_at_k,
                r.mrr_at_k,
                signed(r.delta_s_at_k),
                signed(r.delta_mrr_at_k)
            );
        }
        out
    }
}
