//! Command-line front end. Each subcommand wraps one library stage; `run`
//! drives the whole pipeline from a config file.
//!
//! Exit codes: 0 success, 2 invalid arguments or configuration, 3 a stage failed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{build_splits, filter_language_threshold, ingest_files, Corpus, Split, SplitManifest, SplitRatios};
use crate::embedstore::{embed_corpus, load_store, save_store, EmbedItem, ProviderSpec, Role};
use crate::error::{Error, Result};
use crate::eval::{compare_runs, evaluate_run, Aggregation, EvalOptions, EvalPair, MetricsReport};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::langid::{self, CommandDetector, FusionConfig, LanguageDetector, RawVote};
use crate::negatives::{self, ClusterParams, MiningInput, NegativeConfig, NegativesHeader, Strategy};
use crate::pipeline::{self, ExperimentConfig, LlmApi, RerankSection, RunOptions, StageStatus};
use crate::rerank::{self, RerankConfig, RerankMode};
use crate::retrieval::{self, Scope, Setting};

#[derive(Debug, Parser)]
#[command(name = "claimlink", version, about = "Retrieve previously fact-checked claims for social-media posts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read posts, claims and pairs into a corpus file.
    Ingest(IngestArgs),
    /// Fuse language-detector votes.
    Langid(LangidArgs),
    /// Build leakage-free train/dev/test splits.
    Split(SplitArgs),
    /// Embed items into a store.
    Embed(EmbedArgs),
    /// Dense top-k retrieval.
    Retrieve(RetrieveArgs),
    /// Re-rank the head of a run.
    Rerank(RerankArgs),
    /// Score a run.
    Eval(EvalArgs),
    /// Compare metric reports.
    Report(ReportArgs),
    /// Mine negatives for fine-tuning.
    Negatives(NegativesArgs),
    /// Run the full pipeline from a config file.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub posts: PathBuf,
    #[arg(long)]
    pub claims: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    /// Also drop post languages with fewer posts than this.
    #[arg(long)]
    pub min_posts: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LangidArgs {
    /// JSON lines with `id` and either `text` or precomputed `votes`.
    #[arg(long)]
    pub input: PathBuf,
    /// `name=command` detectors, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub detectors: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    pub min_avg: f64,
    #[arg(long, default_value_t = 2)]
    pub min_votes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StratifyKey {
    #[value(name = "post_language")]
    PostLanguage,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Corpus file written by `ingest`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "post_language")]
    pub stratify: StratifyKey,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// JSON lines `{id, text}`.
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long, value_parser = parse_role)]
    pub role: Role,
    /// URL of an embedding service or a precomputed vectors file.
    #[arg(long)]
    pub provider: String,
    /// Template with one `{text}` slot.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub tag: Option<String>,
    /// Existing rows of `--out` are kept and not re-embedded.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub posts_store: PathBuf,
    #[arg(long)]
    pub claims_store: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_scope, default_value = "test")]
    pub pool: Scope,
    #[arg(long, value_parser = parse_setting, default_value = "multi")]
    pub setting: Setting,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ApiArg {
    Completion,
    Chat,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Corpus file supplying post and claim texts.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: RerankMode,
    #[arg(long, default_value_t = 30)]
    pub top_n: usize,
    #[arg(long)]
    pub endpoint: String,
    #[arg(long, default_value_t = 20)]
    pub window_size: usize,
    #[arg(long, default_value_t = 10)]
    pub stride: usize,
    #[arg(long, value_enum, default_value = "completion")]
    pub api: ApiArg,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub prompt: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub max_concurrent: usize,
    /// Per-query cost and latency log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Gold pairs as JSON lines `{post_id, claim_id, post_language, claim_language}`.
    #[arg(long, conflicts_with = "corpus")]
    pub pairs: Option<PathBuf>,
    /// Corpus file; test-split pairs are taken from it with `--manifest`.
    #[arg(long, requires = "manifest")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_setting, default_value = "multi")]
    pub setting: Setting,
    #[arg(long, value_parser = parse_scope, default_value = "test")]
    pub scope: Scope,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "per-pair")]
    pub aggregation: AggregationArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    PerPair,
    PerPostBest,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metric reports written by `eval`; the first is the baseline.
    #[arg(long, value_delimiter = ',', required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct NegativesArgs {
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub posts_store: Option<PathBuf>,
    #[arg(long)]
    pub claims_store: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub cluster_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long)]
    pub force: bool,
}

fn parse_role(s: &str) -> Result<Role> {
    s.parse()
}
fn parse_scope(s: &str) -> Result<Scope> {
    s.parse()
}
fn parse_setting(s: &str) -> Result<Setting> {
    s.parse()
}
fn parse_mode(s: &str) -> Result<RerankMode> {
    s.parse()
}
fn parse_strategy(s: &str) -> Result<Strategy> {
    s.parse()
}

/// Parses `args` (program name first), runs the command, returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config(_)) { 2 } else { 3 };
        Failure(code, e.to_string())
    }
}

fn execute(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Run(a) => run(a),
        Command::Ingest(a) => Ok(ingest(a)?),
        Command::Langid(a) => Ok(langid_cmd(a)?),
        Command::Split(a) => Ok(split(a)?),
        Command::Embed(a) => Ok(embed(a)?),
        Command::Retrieve(a) => Ok(retrieve(a)?),
        Command::Rerank(a) => Ok(rerank_cmd(a)?),
        Command::Eval(a) => Ok(eval(a)?),
        Command::Report(a) => Ok(report(a)?),
        Command::Negatives(a) => Ok(negatives_cmd(a)?),
    }
}

fn run(a: RunArgs) -> std::result::Result<(), Failure> {
    let cfg = ExperimentConfig::load(&a.config).map_err(|e| Failure(2, e.to_string()))?;
    let opts = RunOptions {
        dry_run: a.dry_run,
        force: a.force,
    };
    let outcomes = pipeline::run_pipeline(&cfg, opts).map_err(|e| Failure(e.exit_code(), e.to_string()))?;
    if a.dry_run {
        for (i, stage) in pipeline::plan(&cfg).iter().enumerate() {
            println!("{}. {}", i + 1, stage.name);
            for p in &stage.inputs {
                println!("     < {}", p.display());
            }
            for p in &stage.outputs {
                println!("     > {}", p.display());
            }
        }
        return Ok(());
    }
    for o in outcomes {
        let status = match o.status {
            StageStatus::Ran => "ran",
            StageStatus::Cached => "cached",
            StageStatus::Planned => "planned",
        };
        println!("{:<10} {status}", o.name.as_str());
    }
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let (mut corpus, report) = ingest_files(&a.posts, &a.claims, &a.pairs)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_json(a.out.join("ingest_report.json"), &report)?;
    if let Some(min) = a.min_posts {
        let (filtered, t) = filter_language_threshold(&corpus, min);
        write_json(a.out.join("threshold_report.json"), &t)?;
        corpus = filtered;
    }
    write_json(a.out.join("corpus.json"), &corpus)?;
    println!(
        "{} posts, {} claims, {} pairs -> {}",
        corpus.posts.len(),
        corpus.claims.len(),
        corpus.pairs.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
struct LangidInput {
    id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    votes: Option<Vec<RawVote>>,
}

#[derive(Debug, Serialize)]
struct LangidOutput {
    id: String,
    language: String,
}

fn langid_cmd(a: LangidArgs) -> Result<()> {
    let cfg = FusionConfig {
        min_avg_score: a.min_avg,
        min_vote_count: a.min_votes,
    };
    cfg.validate()?;
    let detectors: Vec<Box<dyn LanguageDetector>> = a
        .detectors
        .iter()
        .map(|d| {
            let (name, cmd) = d
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("detector `{d}` is not `name=command`")))?;
            CommandDetector::spawn(name.trim(), cmd.trim()).map(|c| Box::new(c) as Box<dyn LanguageDetector>)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for item in read_jsonl::<LangidInput>(&a.input)? {
        let raw = match (item.votes, item.text) {
            (Some(v), _) => v,
            (None, Some(text)) if !detectors.is_empty() => langid::collect_votes(&text, &detectors)?,
            _ => {
                return Err(Error::Config(format!(
                    "item `{}` has no votes and no detectors were given",
                    item.id
                )))
            }
        };
        let language = langid::detect_language(&raw, &cfg)?
            .filter(|l| langid::is_registered(l))
            .unwrap_or_else(|| crate::corpus::UNDETERMINED.into());
        out.push(LangidOutput { id: item.id, language });
    }
    write_jsonl(&a.out, &out)
}

fn split(a: SplitArgs) -> Result<()> {
    let StratifyKey::PostLanguage = a.stratify;
    let ratios = SplitRatios::parse(&a.ratios)?;
    let corpus: Corpus = read_json(&a.corpus)?;
    let manifest = build_splits(&corpus, ratios, a.seed)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    let c = manifest.counts(&corpus);
    for s in Split::ASSIGNABLE {
        let (p, cl, pr) = c.get(s);
        println!("{s:<6} posts {p:>7}  claims {cl:>7}  pairs {pr:>7}");
    }
    manifest.save(&a.out)
}

#[derive(Debug, Deserialize)]
struct TextItem {
    id: String,
    text: String,
}

fn embed(a: EmbedArgs) -> Result<()> {
    let mut spec = ProviderSpec::from_location(&a.provider);
    if let Some(t) = a.template {
        spec.query_template = t.clone();
        spec.passage_template = t;
    }
    if let Some(b) = a.batch_size {
        spec.batch_size = b;
    }
    spec.tag = a.tag;
    spec.validate()?;
    let items: Vec<EmbedItem> = read_jsonl::<TextItem>(&a.items)?
        .into_iter()
        .map(|t| EmbedItem {
            id: t.id,
            text: t.text,
            role: a.role,
        })
        .collect();
    let existing = if a.out.is_file() { Some(load_store(&a.out)?) } else { None };
    let provider = spec.connect()?;
    let outcome = embed_corpus(&items, provider.as_ref(), &spec, existing)?;
    save_store(&outcome.store, &a.out)?;
    println!(
        "{} rows (dim {}), {} skipped, {} failed, {} provider calls",
        outcome.store.len(),
        outcome.store.dim(),
        outcome.skipped,
        outcome.failed.len(),
        outcome.provider_calls
    );
    for (id, reason) in &outcome.failed {
        eprintln!("failed: {id}: {reason}");
    }
    if outcome.failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Provider(format!("{} items failed", outcome.failed.len())))
    }
}

fn retrieve(a: RetrieveArgs) -> Result<()> {
    let corpus: Corpus = read_json(&a.corpus)?;
    let manifest = SplitManifest::load(&a.manifest)?;
    let posts = load_store(&a.posts_store)?;
    let claims = load_store(&a.claims_store)?;
    let pool = retrieval::make_pool(&corpus, &manifest, a.setting, a.pool)?;
    let queries = retrieval::query_posts(&corpus, &manifest, a.setting);
    let out = retrieval::batch_retrieve(&queries, &posts, &claims, &pool, a.k)?;
    for e in &out.soft_errors {
        eprintln!("skipped {}: {}", e.post_id, e.message);
    }
    retrieval::write_run(&a.out, &out.lists)?;
    println!("{} queries against {} claims", out.lists.len(), pool.len());
    Ok(())
}

fn rerank_cmd(a: RerankArgs) -> Result<()> {
    let corpus: Corpus = read_json(&a.corpus)?;
    let run = retrieval::read_run(&a.run)?;
    let section = RerankSection {
        config: RerankConfig {
            top_n: a.top_n,
            mode: a.mode,
            window_size: a.window_size,
            window_stride: a.stride,
            ..RerankConfig::default()
        },
        endpoint: Some(a.endpoint),
        api: match a.api {
            ApiArg::Completion => LlmApi::Completion,
            ApiArg::Chat => LlmApi::Chat,
        },
        model: a.model,
        prompt: a.prompt,
        max_concurrent: a.max_concurrent,
    };
    let (lists, logs) = pipeline::with_reranker(&section, |r| {
        rerank::rerank_run(&run, &section.config, r, &corpus, section.max_concurrent)
    })?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    write_jsonl(&log_path, &logs)?;
    retrieval::write_run(&a.out, &lists)?;
    let failures: usize = logs.iter().map(|l| l.failures).sum();
    let calls: usize = logs.iter().map(|l| l.calls).sum();
    println!("{} lists re-ranked, {calls} calls, {failures} failed calls", lists.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let run = retrieval::read_run(&a.run)?;
    let opts = EvalOptions {
        setting: a.setting,
        scope: a.scope,
        k: a.k,
        aggregation: match a.aggregation {
            AggregationArg::PerPair => Aggregation::PerPair,
            AggregationArg::PerPostBest => Aggregation::PerPostBest,
        },
    };
    let report = match (&a.pairs, &a.corpus) {
        (Some(p), None) => {
            let pairs: Vec<EvalPair> = read_jsonl(p)?;
            let pairs: Vec<EvalPair> = crate::eval::pairs_for_run(&run, &pairs).into_iter().cloned().collect();
            evaluate_run(&run, &pairs, &opts, None)?
        }
        (None, Some(c)) => {
            let corpus: Corpus = read_json(c)?;
            let manifest = SplitManifest::load(a.manifest.as_deref().expect("required by clap"))?;
            let view = retrieval::setting_view(&corpus, a.setting);
            let pairs = EvalPair::from_corpus(&view, |p| manifest.split_of_post.get(p) == Some(&Split::Test));
            let pool = retrieval::make_pool(&corpus, &manifest, a.setting, a.scope)?;
            evaluate_run(&run, &pairs, &opts, Some(&pool))?
        }
        _ => return Err(Error::Config("give either --pairs or --corpus with --manifest".into())),
    };
    println!(
        "S@{k} {:.4}  MRR@{k} {:.4}  pairs {}  unreachable {}",
        report.s_at_k,
        report.mrr_at_k,
        report.n_pairs,
        report.n_gold_unreachable,
        k = report.k
    );
    write_json(&a.out, &report)
}

fn report(a: ReportArgs) -> Result<()> {
    let reports: Vec<(String, MetricsReport)> = a
        .runs
        .iter()
        .map(|p| Ok((display_name(p), read_json(p)?)))
        .collect::<Result<_>>()?;
    let cmp = compare_runs(&reports)?;
    print!(
        "{}",
        match a.format {
            ReportFormat::Text => cmp.to_text(),
            ReportFormat::Csv => cmp.to_csv(),
        }
    );
    Ok(())
}

fn display_name(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn negatives_cmd(a: NegativesArgs) -> Result<()> {
    let cfg = NegativeConfig::new(a.strategy, a.k, a.seed);
    cfg.validate()?;
    let corpus: Corpus = read_json(&a.corpus)?;
    let manifest = SplitManifest::load(&a.manifest)?;
    let input = MiningInput::from_split(&corpus, &manifest, Split::Train);
    let stores = match (&a.posts_store, &a.claims_store) {
        (Some(p), Some(c)) => Some((load_store(p)?, load_store(c)?)),
        (None, None) => None,
        _ => return Err(Error::Config("--posts-store and --claims-store go together".into())),
    };
    let clusters = match (&stores, a.strategy) {
        (Some((p, c)), Strategy::Topic) => Some(negatives::cluster_joint(
            c,
            p,
            &ClusterParams {
                clusters: a.clusters,
                threshold: a.cluster_threshold,
                seed: a.seed,
                ..ClusterParams::default()
            },
        )?),
        _ => None,
    };
    let records = negatives::mine(&input, &cfg, stores.as_ref().map(|(p, c)| (p, c)), clusters.as_ref())?;
    let mut header = NegativesHeader::new(&cfg, records.len());
    header.provider_tag = stores.as_ref().map(|(_, c)| c.provider_tag().to_string());
    header.cluster_method_tag = clusters.as_ref().map(|c| c.method_tag.clone());
    negatives::serialize_negatives(&a.out, &header, &records)?;
    let short = records.iter().filter(|r| r.shortfall_reason.is_some()).count();
    println!("{} records, {short} short of k = {}", records.len(), a.k);
    Ok(())
}
