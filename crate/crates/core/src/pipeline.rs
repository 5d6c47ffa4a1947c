//! Config-driven experiment runner.
//!
//! Stages run in order `ingest → langid → split → embed → retrieve → [rerank]
//! → eval → [negatives]`. Every stage reads its inputs from files and writes
//! its artifacts under `output_dir`; `manifest.json` records the content hash
//! of every input and output plus a hash of the stage's configuration, so a
//! re-run skips stages whose inputs, config and outputs are unchanged.
//!
//! Config values can be overridden from the environment:
//! `CLAIMLINK__RETRIEVAL__K=50` sets `retrieval.k`. Values are parsed as TOML
//! and fall back to plain strings.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{build_splits, filter_language_threshold, ingest_files, Corpus, Split, SplitManifest, SplitRatios};
use crate::embedstore::{embed_corpus, load_store, save_store, EmbedItem, EmbeddingStore, ProviderKind, ProviderSpec, Role};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, Aggregation, EvalOptions, EvalPair};
use crate::io::{read_json, read_jsonl, sha256_file, write_json, write_jsonl};
use crate::langid::{self, CommandDetector, FusionConfig, LanguageDetector, RawVote};
use crate::negatives::{self, ClusterParams, MiningInput, NegativeConfig, NegativesHeader, Strategy};
use crate::rerank::{self, ChatGenerator, HttpGenerator, HttpScorer, PromptTemplate, RerankConfig, RerankMode, Reranker};
use crate::retrieval::{self, Scope, Setting};

pub const ENV_PREFIX: &str = "CLAIMLINK__";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub posts: PathBuf,
    pub claims: PathBuf,
    pub pairs: PathBuf,
    /// Post languages with fewer posts than this are removed.
    #[serde(default = "default_min_posts")]
    pub min_posts: usize,
}

fn default_min_posts() -> usize {
    180
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangidSection {
    /// Precomputed votes, one `{kind, id, votes}` object per line.
    #[serde(default)]
    pub votes: Option<PathBuf>,
    /// `name=shell command` detectors speaking the line protocol of [`CommandDetector`].
    #[serde(default)]
    pub detectors: Vec<String>,
    #[serde(default = "default_min_avg")]
    pub min_avg_score: f64,
    #[serde(default = "default_min_votes")]
    pub min_vote_count: usize,
    /// Languages with fewer items than this are listed for review.
    #[serde(default = "default_rare")]
    pub rare_threshold: usize,
    /// Reviewer overrides: `{"posts": {id: lang}, "claims": {id: lang}}`.
    #[serde(default)]
    pub overrides: Option<PathBuf>,
}

fn default_min_avg() -> f64 {
    FusionConfig::default().min_avg_score
}
fn default_min_votes() -> usize {
    FusionConfig::default().min_vote_count
}
fn default_rare() -> usize {
    10
}

impl LangidSection {
    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            min_avg_score: self.min_avg_score,
            min_vote_count: self.min_vote_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

fn default_ratios() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            ratios: default_ratios(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedSection {
    pub posts: ProviderSpec,
    pub claims: ProviderSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    #[serde(default = "default_setting")]
    pub setting: Setting,
    #[serde(default = "default_scope")]
    pub scope: Scope,
    #[serde(default = "default_retrieval_k")]
    pub k: usize,
}

fn default_setting() -> Setting {
    Setting::Multilingual
}
fn default_scope() -> Scope {
    Scope::Test
}
fn default_retrieval_k() -> usize {
    100
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            setting: default_setting(),
            scope: default_scope(),
            k: default_retrieval_k(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmApi {
    /// `{"prompt", "max_tokens"}` → `{"text"}`.
    #[default]
    Completion,
    /// Chat messages; see [`ChatGenerator`].
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankSection {
    #[serde(flatten)]
    pub config: RerankConfig,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub api: LlmApi,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub prompt: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub max_concurrent: usize,
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegativesSection {
    pub strategy: Strategy,
    #[serde(default = "default_neg_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    /// Topic strategy only.
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_cluster_threshold")]
    pub cluster_threshold: f64,
}

fn default_neg_k() -> usize {
    10
}
fn default_clusters() -> usize {
    ClusterParams::default().clusters
}
fn default_cluster_threshold() -> f64 {
    ClusterParams::default().threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_eval_k")]
    pub k: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
}

fn default_eval_k() -> usize {
    crate::eval::DEFAULT_K
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k: default_eval_k(),
            aggregation: Aggregation::default(),
        }
    }
}

/// Everything one experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub langid: Option<LangidSection>,
    #[serde(default)]
    pub split: SplitSection,
    pub embed: EmbedSection,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub rerank: Option<RerankSection>,
    #[serde(default)]
    pub negatives: Option<NegativesSection>,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Sets `table.a.b = value` for every `CLAIMLINK__A__B=value` pair.
pub fn apply_env_overrides<I>(table: &mut toml::Table, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    for (key, raw) in vars {
        let Some(path) = key.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let segments: Vec<String> = path.split("__").map(|s| s.to_ascii_lowercase()).collect();
        if segments.iter().any(String::is_empty) {
            return Err(Error::Config(format!("malformed override variable `{key}`")));
        }
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or(toml::Value::String(raw));
        let (last, parents) = segments.split_last().expect("non-empty");
        let mut node = &mut *table;
        for seg in parents {
            let entry = node
                .entry(seg.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}` overrides a non-table value")))?;
        }
        node.insert(last.clone(), value);
    }
    Ok(())
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Parses TOML text; relative paths are resolved against `base`.
    pub fn parse<I>(text: &str, base: &Path, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        apply_env_overrides(&mut table, env)?;
        let mut cfg: ExperimentConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Reads a config file, applying overrides from the process environment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, std::env::vars())
    }

    fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.output_dir);
        rebase(base, &mut self.corpus.posts);
        rebase(base, &mut self.corpus.claims);
        rebase(base, &mut self.corpus.pairs);
        if let Some(l) = &mut self.langid {
            if let Some(v) = &mut l.votes {
                rebase(base, v);
            }
            if let Some(o) = &mut l.overrides {
                rebase(base, o);
            }
        }
        for spec in [&mut self.embed.posts, &mut self.embed.claims] {
            if spec.kind == ProviderKind::PrecomputedFile {
                let mut p = PathBuf::from(&spec.location);
                rebase(base, &mut p);
                spec.location = p.to_string_lossy().into_owned();
            }
        }
        if let Some(r) = &mut self.rerank {
            if let Some(p) = &mut r.prompt {
                rebase(base, p);
            }
        }
    }

    /// Checks that referenced files exist and that values are in range.
    pub fn validate(&self) -> Result<()> {
        let mut files: Vec<(&str, &Path)> = vec![
            ("corpus.posts", &self.corpus.posts),
            ("corpus.claims", &self.corpus.claims),
            ("corpus.pairs", &self.corpus.pairs),
        ];
        if let Some(l) = &self.langid {
            if let Some(v) = &l.votes {
                files.push(("langid.votes", v));
            }
            if let Some(o) = &l.overrides {
                files.push(("langid.overrides", o));
            }
            if l.votes.is_some() && !l.detectors.is_empty() {
                return Err(Error::Config("langid.votes and langid.detectors are mutually exclusive".into()));
            }
            for d in &l.detectors {
                if !d.contains('=') {
                    return Err(Error::Config(format!("langid.detectors entry `{d}` is not `name=command`")));
                }
            }
            l.fusion().validate()?;
        }
        for (name, spec) in [("embed.posts", &self.embed.posts), ("embed.claims", &self.embed.claims)] {
            spec.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
            if spec.kind == ProviderKind::PrecomputedFile {
                files.push((
                    if name == "embed.posts" {
                        "embed.posts.location"
                    } else {
                        "embed.claims.location"
                    },
                    Path::new(&spec.location),
                ));
            }
        }
        if let Some(r) = &self.rerank {
            r.config.validate().map_err(|e| Error::Config(format!("rerank: {e}")))?;
            if r.endpoint.is_none() {
                let mode = match r.config.mode {
                    RerankMode::CrossEncoder => "ce",
                    RerankMode::LlmListwise => "llm",
                };
                return Err(Error::Config(format!("rerank.endpoint is required when rerank.mode = {mode}")));
            }
            if let Some(p) = &r.prompt {
                files.push(("rerank.prompt", p));
            }
        }
        for (name, path) in files {
            if !path.is_file() {
                return Err(Error::Config(format!("{name}: file `{}` does not exist", path.display())));
            }
        }
        let [train, dev, test] = self.split.ratios;
        SplitRatios::new(train, dev, test).map_err(|e| Error::Config(format!("split.ratios: {e}")))?;
        if self.retrieval.k == 0 {
            return Err(Error::Config("retrieval.k must be at least 1".into()));
        }
        if self.eval.k == 0 {
            return Err(Error::Config("eval.k must be at least 1".into()));
        }
        if let Some(n) = &self.negatives {
            NegativeConfig::new(n.strategy, n.k, n.seed).validate()?;
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout {
            root: self.output_dir.clone(),
        }
    }
}

/// Artifact paths under the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }
    pub fn ingested(&self) -> PathBuf {
        self.root.join("corpus/ingested.json")
    }
    pub fn ingest_report(&self) -> PathBuf {
        self.root.join("corpus/ingest_report.json")
    }
    pub fn corpus(&self) -> PathBuf {
        self.root.join("langid/corpus.json")
    }
    pub fn languages(&self) -> PathBuf {
        self.root.join("langid/languages.json")
    }
    pub fn threshold_report(&self) -> PathBuf {
        self.root.join("langid/threshold_report.json")
    }
    pub fn split_manifest(&self) -> PathBuf {
        self.root.join("split/manifest.json")
    }
    pub fn post_store(&self) -> PathBuf {
        self.root.join("embed/posts.clnk")
    }
    pub fn claim_store(&self) -> PathBuf {
        self.root.join("embed/claims.clnk")
    }
    pub fn retrieved(&self) -> PathBuf {
        self.root.join("runs/retrieved.jsonl")
    }
    pub fn retrieve_errors(&self) -> PathBuf {
        self.root.join("runs/retrieve_errors.jsonl")
    }
    pub fn reranked(&self) -> PathBuf {
        self.root.join("runs/reranked.jsonl")
    }
    pub fn rerank_log(&self) -> PathBuf {
        self.root.join("runs/rerank_log.jsonl")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("eval/report.json")
    }
    pub fn negatives(&self) -> PathBuf {
        self.root.join("negatives/negatives.jsonl")
    }
    pub fn clusters(&self) -> PathBuf {
        self.root.join("negatives/clusters.json")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageName {
    Ingest,
    Langid,
    Split,
    Embed,
    Retrieve,
    Rerank,
    Eval,
    Negatives,
}

impl StageName {
    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Ingest => "ingest",
            StageName::Langid => "langid",
            StageName::Split => "split",
            StageName::Embed => "embed",
            StageName::Retrieve => "retrieve",
            StageName::Rerank => "rerank",
            StageName::Eval => "eval",
            StageName::Negatives => "negatives",
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One stage: what it reads, what it writes, and the config it depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub name: StageName,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config: serde_json::Value,
}

/// The stages `cfg` will run, in order.
pub fn plan(cfg: &ExperimentConfig) -> Vec<StagePlan> {
    let l = cfg.layout();
    let json = |v: serde_json::Value| v;
    let mut stages = vec![
        StagePlan {
            name: StageName::Ingest,
            inputs: vec![cfg.corpus.posts.clone(), cfg.corpus.claims.clone(), cfg.corpus.pairs.clone()],
            outputs: vec![l.ingested(), l.ingest_report()],
            config: json(serde_json::json!({})),
        },
        StagePlan {
            name: StageName::Langid,
            inputs: std::iter::once(l.ingested())
                .chain(cfg.langid.iter().flat_map(|s| s.votes.iter().chain(&s.overrides).cloned()))
                .collect(),
            outputs: vec![l.corpus(), l.languages(), l.threshold_report()],
            config: serde_json::json!({ "langid": cfg.langid, "min_posts": cfg.corpus.min_posts }),
        },
        StagePlan {
            name: StageName::Split,
            inputs: vec![l.corpus()],
            outputs: vec![l.split_manifest()],
            config: serde_json::json!({ "split": cfg.split }),
        },
        StagePlan {
            name: StageName::Embed,
            inputs: vec![l.corpus()]
                .into_iter()
                .chain(
                    [&cfg.embed.posts, &cfg.embed.claims]
                        .into_iter()
                        .filter(|s| s.kind == ProviderKind::PrecomputedFile)
                        .map(|s| PathBuf::from(&s.location)),
                )
                .collect(),
            outputs: vec![l.post_store(), l.claim_store()],
            config: serde_json::json!({ "embed": cfg.embed }),
        },
        StagePlan {
            name: StageName::Retrieve,
            inputs: vec![l.corpus(), l.split_manifest(), l.post_store(), l.claim_store()],
            outputs: vec![l.retrieved(), l.retrieve_errors()],
            config: serde_json::json!({ "retrieval": cfg.retrieval }),
        },
    ];
    let mut final_run = l.retrieved();
    if let Some(r) = &cfg.rerank {
        stages.push(StagePlan {
            name: StageName::Rerank,
            inputs: std::iter::once(l.corpus())
                .chain(std::iter::once(l.retrieved()))
                .chain(r.prompt.iter().cloned())
                .collect(),
            outputs: vec![l.reranked(), l.rerank_log()],
            config: serde_json::json!({ "rerank": r }),
        });
        final_run = l.reranked();
    }
    stages.push(StagePlan {
        name: StageName::Eval,
        inputs: vec![l.corpus(), l.split_manifest(), final_run],
        outputs: vec![l.report()],
        config: serde_json::json!({ "eval": cfg.eval, "retrieval": cfg.retrieval }),
    });
    if let Some(n) = &cfg.negatives {
        stages.push(StagePlan {
            name: StageName::Negatives,
            inputs: vec![l.corpus(), l.split_manifest(), l.post_store(), l.claim_store()],
            outputs: vec![l.negatives(), l.clusters()],
            config: serde_json::json!({ "negatives": n }),
        });
    }
    stages
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Seeds and per-stage content hashes of one output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seeds: BTreeMap<String, u64>,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Cached,
    Planned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub name: StageName,
    pub status: StageStatus,
    pub outputs: Vec<PathBuf>,
}

/// Why a pipeline run stopped.
#[derive(Debug)]
pub enum PipelineError {
    Validation(Error),
    Stage {
        stage: StageName,
        artifact: PathBuf,
        source: Error,
    },
}

impl PipelineError {
    /// 2 for configuration problems, 3 for a failed stage.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Validation(e) => write!(f, "invalid configuration: {e}"),
            PipelineError::Stage { stage, artifact, source } => {
                write!(f, "stage `{stage}` failed ({}): {source}", artifact.display())
            }
        }
    }
}

impl std::error::Error for PipelineError {}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub dry_run: bool,
    /// Re-run every stage even when cached.
    pub force: bool,
}

fn key(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn hash_files(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((key(p), sha256_file(p)?))).collect()
}

fn config_hash(v: &serde_json::Value) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

fn is_cached(stage: &StagePlan, record: Option<&StageRecord>, cfg_hash: &str) -> bool {
    let Some(rec) = record else { return false };
    if rec.config_hash != cfg_hash {
        return false;
    }
    match hash_files(&stage.inputs) {
        Ok(h) if h == rec.inputs => {}
        _ => return false,
    }
    matches!(hash_files(&stage.outputs), Ok(h) if h == rec.outputs)
}

/// Runs (or, with `dry_run`, only lists) every stage of `cfg`.
pub fn run_pipeline(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<StageOutcome>, PipelineError> {
    cfg.validate().map_err(PipelineError::Validation)?;
    let stages = plan(cfg);
    if opts.dry_run {
        return Ok(stages
            .into_iter()
            .map(|s| StageOutcome {
                name: s.name,
                status: StageStatus::Planned,
                outputs: s.outputs,
            })
            .collect());
    }

    let layout = cfg.layout();
    let manifest_path = layout.manifest();
    let mut manifest: RunManifest = if manifest_path.is_file() {
        read_json(&manifest_path).unwrap_or_default()
    } else {
        RunManifest::default()
    };
    manifest.seeds.insert("split".into(), cfg.split.seed);
    if let Some(n) = &cfg.negatives {
        manifest.seeds.insert("negatives".into(), n.seed);
    }

    let mut outcomes = Vec::new();
    for stage in stages {
        let cfg_hash = config_hash(&stage.config);
        let fail = |source: Error, artifact: &Path| PipelineError::Stage {
            stage: stage.name,
            artifact: artifact.to_path_buf(),
            source,
        };
        let status = if !opts.force && is_cached(&stage, manifest.stages.get(stage.name.as_str()), &cfg_hash) {
            StageStatus::Cached
        } else {
            log::info!("running stage {}", stage.name);
            run_stage(cfg, &layout, stage.name).map_err(|e| fail(e, &stage.outputs[0]))?;
            let record = StageRecord {
                config_hash: cfg_hash,
                inputs: hash_files(&stage.inputs).map_err(|e| fail(e, &stage.outputs[0]))?,
                outputs: hash_files(&stage.outputs).map_err(|e| fail(e, &stage.outputs[0]))?,
            };
            manifest.stages.insert(stage.name.as_str().to_string(), record);
            write_json(&manifest_path, &manifest).map_err(|e| fail(e, &manifest_path))?;
            StageStatus::Ran
        };
        outcomes.push(StageOutcome {
            name: stage.name,
            status,
            outputs: stage.outputs,
        });
    }
    Ok(outcomes)
}

fn run_stage(cfg: &ExperimentConfig, l: &Layout, name: StageName) -> Result<()> {
    match name {
        StageName::Ingest => stage_ingest(cfg, l),
        StageName::Langid => stage_langid(cfg, l),
        StageName::Split => stage_split(cfg, l),
        StageName::Embed => stage_embed(cfg, l),
        StageName::Retrieve => stage_retrieve(cfg, l),
        StageName::Rerank => stage_rerank(cfg, l),
        StageName::Eval => stage_eval(cfg, l),
        StageName::Negatives => stage_negatives(cfg, l),
    }
}

fn stage_ingest(cfg: &ExperimentConfig, l: &Layout) -> Result<()> {
    let (corpus, report) = ingest_files(&cfg.corpus.posts, &cfg.corpus.claims, &cfg.corpus.pairs)?;
    write_json(l.ingested(), &corpus)?;
    write_json(l.ingest_report(), &report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Post,
    Claim,
}

/// One line of a precomputed votes file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub kind: ItemKind,
    pub id: String,
    pub votes: Vec<RawVote>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Overrides {
    #[serde(default)]
    posts: BTreeMap<String, String>,
    #[serde(default)]
    claims: BTreeMap<String, String>,
}

/// Fused languages plus the review list of rare ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LanguageAssignments {
    pub normalizer: String,
    pub fusion: Option<FusionConfig>,
    pub posts: BTreeMap<String, String>,
    pub claims: BTreeMap<String, String>,
    pub rare_post_languages: BTreeMap<String, Vec<String>>,
    pub rare_claim_languages: BTreeMap<String, Vec<String>>,
    pub overrides_applied: Vec<(String, String, String)>,
}

fn registered_or_und(lang: Option<String>) -> String {
    lang.filter(|l| langid::is_registered(l))
        .unwrap_or_else(|| crate::corpus::UNDETERMINED.to_string())
}

fn fuse_languages(section: &LangidSection, corpus: &Corpus) -> Result<LanguageAssignments> {
    let fusion = section.fusion();
    let mut posts = BTreeMap::new();
    let mut claims = BTreeMap::new();
    if let Some(path) = &section.votes {
        for rec in read_jsonl::<VoteRecord>(path)? {
            let lang = registered_or_und(langid::detect_language(&rec.votes, &fusion)?);
            match rec.kind {
                ItemKind::Post if corpus.posts.contains_key(&rec.id) => posts.insert(rec.id, lang),
                ItemKind::Claim if corpus.claims.contains_key(&rec.id) => claims.insert(rec.id, lang),
                _ => None,
            };
        }
    } else if !section.detectors.is_empty() {
        let detectors: Vec<Box<dyn LanguageDetector>> = section
            .detectors
            .iter()
            .map(|d| {
                let (name, cmd) = d.split_once('=').expect("validated");
                CommandDetector::spawn(name.trim(), cmd.trim()).map(|c| Box::new(c) as Box<dyn LanguageDetector>)
            })
            .collect::<Result<_>>()?;
        for (id, p) in &corpus.posts {
            let raw = langid::collect_votes(&p.text, &detectors)?;
            posts.insert(id.clone(), registered_or_und(langid::detect_language(&raw, &fusion)?));
        }
        for (id, c) in &corpus.claims {
            let raw = langid::collect_votes(&c.claim_text, &detectors)?;
            claims.insert(id.clone(), registered_or_und(langid::detect_language(&raw, &fusion)?));
        }
    }
    let overrides: Overrides = match &section.overrides {
        Some(p) => read_json(p)?,
        None => Overrides::default(),
    };
    // review covers every item, including ones that kept their ingested language
    let mut all_posts: BTreeMap<String, String> =
        corpus.posts.iter().map(|(id, p)| (id.clone(), p.language.clone())).collect();
    all_posts.extend(posts);
    let mut all_claims: BTreeMap<String, String> =
        corpus.claims.iter().map(|(id, c)| (id.clone(), c.language.clone())).collect();
    all_claims.extend(claims);
    let rp = langid::resolve_outliers(&all_posts, section.rare_threshold, &overrides.posts)?;
    let rc = langid::resolve_outliers(&all_claims, section.rare_threshold, &overrides.claims)?;
    Ok(LanguageAssignments {
        normalizer: langid::NORMALIZER.to_string(),
        fusion: Some(fusion),
        posts: rp.assignments,
        claims: rc.assignments,
        rare_post_languages: rp.rare_languages,
        rare_claim_languages: rc.rare_languages,
        overrides_applied: rp.applied.into_iter().chain(rc.applied).collect(),
    })
}

fn stage_langid(cfg: &ExperimentConfig, l: &Layout) -> Result<()> {
    let mut corpus: Corpus = read_json(l.ingested())?;
    let assignments = match &cfg.langid {
        Some(section) => {
            let a = fuse_languages(section, &corpus)?;
            corpus.apply_languages(&a.posts, &a.claims);
            a
        }
        None => LanguageAssignments {
            normalizer: langid::NORMALIZER.to_string(),
            posts: corpus.posts.iter().map(|(id, p)| (id.clone(), p.language.clone())).collect(),
            claims: corpus.claims.iter().map(|(id, c)| (id.clone(), c.language.clone())).collect(),
            ..Default::default()
        },
    };
    let (filtered, report) = filter_language_threshold(&corpus, cfg.corpus.min_posts);
    if filtered.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    write_json(l.languages(), &assignments)?;
    write_json(l.threshold_report(), &report)?;
    write_json(l.corpus(), &filtered)
}

fn stage_split(cfg: &ExperimentConfig, l: &Layout) -> Result<()> {
    let corpus: Corpus = read_json(l.corpus())?;
    let [train, dev, test] = cfg.split.ratios;
    let manifest = build_splits(&corpus, SplitRatios::new(train, dev, test)?, cfg.split.seed)?;
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    manifest.save(l.split_manifest())
}

fn embed_one(spec: &ProviderSpec, items: &[EmbedItem], what: &str) -> Result<EmbeddingStore> {
    let provider = spec.connect()?;
    let outcome = embed_corpus(items, provider.as_ref(), spec, None)?;
    if let Some((id, reason)) = outcome.failed.first() {
        return Err(Error::Provider(format!(
            "{} {what} could not be embedded; first: `{id}`: {reason}",
            outcome.failed.len()
        )));
    }
    Ok(outcome.store)
}

fn stage_embed(cfg: &ExperimentConfig, l: &Layout) -> Result<()> {
    let corpus: Corpus = read_json(l.corpus())?;
    let posts: Vec<EmbedItem> = corpus
        .posts
        .values()
        .map(|p| EmbedItem {
            id: p.id.clone(),
            text: p.text.clone(),
            role: Role::Query,
        })
        .collect();
    let claims: Vec<EmbedItem> = corpus
        .claims
        .values()
        .map(|c| EmbedItem {
            id: c.id.clone(),
            text: c.claim_text.clone(),
            role: Role::Passage,
        })
        .collect();
    let post_store = embed_one(&cfg.embed.posts, &posts, "posts")?;
    let claim_store = embed_one(&cfg.embed.claims, &claims, "claims")?;
    if post_store.dim() != claim_store.dim() {
        return Err(Error::DimMismatch {
            expected: claim_store.dim(),
            actual: post_store.dim(),
        });
    }
    save_store(&post_store, l.post_store())?;
    save_store(&claim_store, l.claim_store())
}

fn stage_retrieve(cfg: &ExperimentConfig, l: &Layout) -> Result<()> {
    let corpus: Corpus = read_json(l.corpus())?;
    let manifest = SplitManifest::load(l.split_manifest())?;
    let posts = load_store(l.post_store())?;
    let claims = load_store(l.claim_store())?;
    let r = &cfg.retrieval;
    let pool = retrieval::make_pool(&corpus, &manifest, r.setting, r.scope)?;
    let queries = retrieval::query_posts(&corpus, &manifest, r.setting);
    let out = retrieval::batch_retrieve(&queries, &posts, &claims, &pool, r.k)?;
    for e in &out.soft_errors {
        log::warn!("retrieve: {}: {}", e.post_id, e.message);
    }
    write_jsonl(l.retrieve_errors(), &out.soft_errors)?;
    retrieval::write_run(l.retrieved(), &out.lists)
}

/// Builds the re-ranker a section describes and hands it to `f`.
pub fn with_reranker<T>(section: &RerankSection, f: impl FnOnce(&Reranker<'_>) -> Result<T>) -> Result<T> {
    let endpoint = section
        .endpoint
        .as_deref()
        .ok_or_else(|| Error::Config("rerank.endpoint is required".into()))?;
    match section.config.mode {
        RerankMode::CrossEncoder => {
            let scorer = HttpScorer::new(endpoint);
            f(&Reranker::CrossEncoder(&scorer))
        }
        RerankMode::LlmListwise => {
            let prompt = match &section.prompt {
                Some(p) => PromptTemplate::load(p)?,
                None => PromptTemplate::default(),
            };
            match section.api {
                LlmApi::Completion => {
                    let g = HttpGenerator::new(endpoint);
                    f(&Reranker::Llm {
                        generator: &g,
                        prompt: &prompt,
                    })
                }
                LlmApi::Chat => {
                    let g = ChatGenerator::new(endpoint, section.model.clone(), None);
                    f(&Reranker::Llm {
                        generator: &g,
                        prompt: &prompt,
                    })
                }
            }
        }
    }
}

fn stage_rerank(cfg: &ExperimentConfig, l: &Layout) -> Result<()> {
    let section = cfg.rerank.as_ref().expect("planned only with a rerank section");
    let corpus: Corpus = read_json(l.corpus())?;
    let run = retrieval::read_run(l.retrieved())?;
    let (lists, logs) = with_reranker(section, |r| {
        rerank::rerank_run(&run, &section.config, r, &corpus, section.max_concurrent)
    })?;
    write_jsonl(l.rerank_log(), &logs)?;
    retrieval::write_run(l.reranked(), &lists)
}

fn stage_eval(cfg: &ExperimentConfig, l: &Layout) -> Result<()> {
    let corpus: Corpus = read_json(l.corpus())?;
    let manifest = SplitManifest::load(l.split_manifest())?;
    let run_path = if cfg.rerank.is_some() { l.reranked() } else { l.retrieved() };
    let run = retrieval::read_run(&run_path)?;
    let r = &cfg.retrieval;
    let view = retrieval::setting_view(&corpus, r.setting);
    let pairs = EvalPair::from_corpus(&view, |p| manifest.split_of_post.get(p) == Some(&Split::Test));
    let pool = retrieval::make_pool(&corpus, &manifest, r.setting, r.scope)?;
    let opts = EvalOptions {
        setting: r.setting,
        scope: r.scope,
        k: cfg.eval.k,
        aggregation: cfg.eval.aggregation,
    };
    let report = evaluate_run(&run, &pairs, &opts, Some(&pool))?;
    write_json(l.report(), &report)
}

fn subset(store: &EmbeddingStore, keep: impl Fn(&str) -> bool) -> Result<EmbeddingStore> {
    EmbeddingStore::from_rows(
        store.dim(),
        store.provider_tag(),
        store
            .ids()
            .iter()
            .enumerate()
            .filter(|(_, id)| keep(id))
            .map(|(i, id)| (id.clone(), store.row(i).to_vec())),
    )
}

fn stage_negatives(cfg: &ExperimentConfig, l: &Layout) -> Result<()> {
    let section = cfg.negatives.as_ref().expect("planned only with a negatives section");
    let corpus: Corpus = read_json(l.corpus())?;
    let manifest = SplitManifest::load(l.split_manifest())?;
    let posts = load_store(l.post_store())?;
    let claims = load_store(l.claim_store())?;
    let neg_cfg = NegativeConfig::new(section.strategy, section.k, section.seed);
    let input = MiningInput::from_split(&corpus, &manifest, Split::Train);

    let mut clusters = None;
    if section.strategy == Strategy::Topic {
        let is_train_claim = |id: &str| manifest.split_of_claim.get(id) == Some(&Split::Train);
        let is_train_post = |id: &str| manifest.split_of_post.get(id) == Some(&Split::Train);
        let params = ClusterParams {
            clusters: section.clusters,
            threshold: section.cluster_threshold,
            seed: section.seed,
            ..ClusterParams::default()
        };
        clusters = Some(negatives::cluster_joint(
            &subset(&claims, is_train_claim)?,
            &subset(&posts, is_train_post)?,
            &params,
        )?);
    }
    let records = negatives::mine(&input, &neg_cfg, Some((&posts, &claims)), clusters.as_ref())?;
    let mut header = NegativesHeader::new(&neg_cfg, records.len());
    header.provider_tag = Some(claims.provider_tag().to_string());
    header.cluster_method_tag = clusters.as_ref().map(|c| c.method_tag.clone());
    write_json(l.clusters(), &clusters)?;
    negatives::serialize_negatives(l.negatives(), &header, &records)
}
