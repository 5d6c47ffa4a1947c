//! Retrieval engine and experiment harness for previously fact-checked claim
//! retrieval: given a social-media post, rank a corpus of fact-checked claims
//! so that the claim a fact-checker paired with the post ranks as high as
//! possible.
//!
//! The crate is organised as a pipeline of small, separately usable stages:
//!
//! - [`corpus`]: ingestion of posts, fact-checks and gold pairs, language
//!   thresholding, claim-disjoint stratified splits, the crosslingual view.
//! - [`langid`]: fusion of several language detectors into one verdict.
//! - [`embedstore`]: embedding providers and the `.clnk` store format.
//! - [`retrieval`]: exact dense top-k over a candidate pool.
//! - [`rerank`]: cross-encoder and listwise LLM re-ranking of the head of a list.
//! - [`negatives`]: random / topic / similarity negative mining for fine-tuning.
//! - [`eval`]: Pair Success@k and MRR@k with per-language-pair breakdowns.
//! - [`pipeline`]: config-driven end-to-end runs with cached stages.
//!
//! Every capability has a runnable program under `examples/`.

pub mod cli;
pub mod corpus;
pub mod embedstore;
pub mod error;
pub mod eval;
pub mod io;
pub mod langid;
pub mod negatives;
pub mod pipeline;
pub mod rerank;
pub mod retrieval;
pub(crate) mod rng;

pub use error::{Error, Result};
