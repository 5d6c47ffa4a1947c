//! Embedding providers and the corpus embedding loop.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EmbeddingStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Query,
    Passage,
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query" => Ok(Role::Query),
            "passage" => Ok(Role::Passage),
            other => Err(Error::Config(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    PrecomputedFile,
    RemoteService,
}

const TEXT_SLOT: &str = "{text}";

fn default_template() -> String {
    TEXT_SLOT.to_string()
}
fn default_batch_size() -> usize {
    32
}
fn default_parallel() -> usize {
    4
}
fn default_retries() -> usize {
    2
}

/// How to obtain embeddings. Templates default to the bare text; instruct-style
/// encoders can set e.g. `"query: {text}"` / `"passage: {text}"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub kind: ProviderKind,
    /// File path for `precomputed_file`, URL for `remote_service`.
    pub location: String,
    #[serde(default = "default_template")]
    pub query_template: String,
    #[serde(default = "default_template")]
    pub passage_template: String,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_parallel")]
    pub max_parallel_requests: usize,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    /// Overrides the tag derived from `kind` and `location`.
    #[serde(default)]
    pub tag: Option<String>,
}

impl ProviderSpec {
    pub fn precomputed(path: impl Into<String>) -> Self {
        ProviderSpec {
            kind: ProviderKind::PrecomputedFile,
            location: path.into(),
            query_template: default_template(),
            passage_template: default_template(),
            batch_size: default_batch_size(),
            max_parallel_requests: default_parallel(),
            max_retries: default_retries(),
            tag: None,
        }
    }

    pub fn remote(url: impl Into<String>) -> Self {
        ProviderSpec {
            kind: ProviderKind::RemoteService,
            ..ProviderSpec::precomputed(url)
        }
    }

    /// `http://` / `https://` locations are remote, anything else a file.
    pub fn from_location(location: &str) -> Self {
        if location.starts_with("http://") || location.starts_with("https://") {
            Self::remote(location)
        } else {
            Self::precomputed(location)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("provider batch_size must be at least 1".into()));
        }
        if self.max_parallel_requests == 0 {
            return Err(Error::Config("provider max_parallel_requests must be at least 1".into()));
        }
        for (name, t) in [("query_template", &self.query_template), ("passage_template", &self.passage_template)] {
            if t.matches(TEXT_SLOT).count() != 1 {
                return Err(Error::Config(format!("{name} must contain `{TEXT_SLOT}` exactly once: `{t}`")));
            }
        }
        Ok(())
    }

    pub fn render(&self, role: Role, text: &str) -> String {
        let template = match role {
            Role::Query => &self.query_template,
            Role::Passage => &self.passage_template,
        };
        template.replacen(TEXT_SLOT, text, 1)
    }

    pub fn provider_tag(&self) -> String {
        if let Some(tag) = &self.tag {
            return tag.clone();
        }
        match self.kind {
            ProviderKind::PrecomputedFile => {
                let name = Path::new(&self.location)
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| self.location.clone());
                format!("file:{name}")
            }
            ProviderKind::RemoteService => format!("remote:{}", self.location),
        }
    }

    /// Instantiates the provider this spec points at.
    pub fn connect(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self.kind {
            ProviderKind::PrecomputedFile => Box::new(PrecomputedFile::open(&self.location)?),
            ProviderKind::RemoteService => Box::new(RemoteService::new(&self.location)),
        })
    }
}

/// Wire response: `{"dim": int, "vectors": [[float]]}`, order matching the request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<Vec<f32>>,
}

pub trait EmbeddingProvider: Send + Sync {
    /// Embeds one batch. `ids` and `texts` are aligned; texts are already rendered.
    fn embed(&self, ids: &[String], texts: &[String], role: Role) -> Result<EmbedResponse>;
}

/// Vectors computed elsewhere, addressed by id. Reads JSON lines of
/// `{"id": .., "vector": [..]}` or an existing `.clnk` store.
pub struct PrecomputedFile {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

#[derive(Deserialize)]
struct VectorRecord {
    id: String,
    vector: Vec<f32>,
}

impl PrecomputedFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().and_then(|e| e.to_str()) == Some("clnk") {
            let store = super::load_store(path)?;
            let vectors = store
                .ids()
                .iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), store.row(i).to_vec()))
                .collect();
            return Ok(PrecomputedFile { dim: store.dim(), vectors });
        }
        let records: Vec<VectorRecord> = crate::io::read_jsonl(path)?;
        Self::from_vectors(records.into_iter().map(|r| (r.id, r.vector)))
    }

    pub fn from_vectors(rows: impl IntoIterator<Item = (String, Vec<f32>)>) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (id, v) in rows {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::DimMismatch { expected: d, actual: v.len() });
            }
            if vectors.insert(id.clone(), v).is_some() {
                return Err(Error::DuplicateId { kind: "precomputed vector", id });
            }
        }
        Ok(PrecomputedFile {
            dim: dim.unwrap_or(0),
            vectors,
        })
    }
}

impl EmbeddingProvider for PrecomputedFile {
    fn embed(&self, ids: &[String], _texts: &[String], _role: Role) -> Result<EmbedResponse> {
        let vectors = ids
            .iter()
            .map(|id| {
                self.vectors
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::Provider(format!("no precomputed vector for `{id}`")))
            })
            .collect::<Result<_>>()?;
        Ok(EmbedResponse { dim: self.dim, vectors })
    }
}

/// HTTP endpoint taking `{"texts": [..], "role": "query"|"passage"}`.
pub struct RemoteService {
    url: String,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    role: Role,
}

impl RemoteService {
    pub fn new(url: impl Into<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("http client");
        RemoteService { url: url.into(), client }
    }
}

impl EmbeddingProvider for RemoteService {
    fn embed(&self, _ids: &[String], texts: &[String], role: Role) -> Result<EmbedResponse> {
        let resp = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { texts, role })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| Error::Provider(format!("{}: {e}", self.url)))?;
        resp.json::<EmbedResponse>()
            .map_err(|e| Error::Provider(format!("{}: bad response: {e}", self.url)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedItem {
    pub id: String,
    pub text: String,
    pub role: Role,
}

#[derive(Debug)]
pub struct EmbedOutcome {
    pub store: EmbeddingStore,
    /// Items that could not be embedded, with the reason.
    pub failed: Vec<(String, String)>,
    /// Items already present in the incoming store.
    pub skipped: usize,
    /// Provider invocations, retries included.
    pub provider_calls: usize,
}

struct Batch {
    role: Role,
    ids: Vec<String>,
    texts: Vec<String>,
}

/// Embeds every item not already in `existing`, normalizing rows as they land.
///
/// At most `max_parallel_requests` batches are in flight; results are applied
/// in input order, so the store does not depend on scheduling. A batch that
/// keeps failing after `max_retries` retries is reported in
/// [`EmbedOutcome::failed`]; a provider changing dimension aborts the run.
pub fn embed_corpus(
    items: &[EmbedItem],
    provider: &dyn EmbeddingProvider,
    spec: &ProviderSpec,
    existing: Option<EmbeddingStore>,
) -> Result<EmbedOutcome> {
    spec.validate()?;
    let tag = spec.provider_tag();
    let mut store = match existing {
        Some(s) if s.provider_tag() != tag => {
            return Err(Error::Config(format!(
                "existing store was built by `{}`, provider is `{tag}`",
                s.provider_tag()
            )))
        }
        Some(s) => Some(s),
        None => None,
    };

    let mut skipped = 0;
    let mut seen = HashSet::new();
    let mut batches: Vec<Batch> = Vec::new();
    for role in [Role::Query, Role::Passage] {
        let pending: Vec<&EmbedItem> = items
            .iter()
            .filter(|it| it.role == role)
            .filter(|it| {
                if store.as_ref().is_some_and(|s| s.contains(&it.id)) {
                    skipped += 1;
                    false
                } else {
                    seen.insert(it.id.as_str())
                }
            })
            .collect();
        for chunk in pending.chunks(spec.batch_size) {
            batches.push(Batch {
                role,
                ids: chunk.iter().map(|it| it.id.clone()).collect(),
                texts: chunk.iter().map(|it| spec.render(role, &it.text)).collect(),
            });
        }
    }

    let mut failed = Vec::new();
    let mut provider_calls = 0;
    for wave in batches.chunks(spec.max_parallel_requests) {
        let results: Vec<(usize, Result<EmbedResponse>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|batch| scope.spawn(move || call_with_retries(provider, batch, spec.max_retries)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("embedding worker panicked"))
                .collect()
        });

        for (batch, (calls, result)) in wave.iter().zip(results) {
            provider_calls += calls;
            let resp = match result {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("embedding batch of {} failed: {e}", batch.ids.len());
                    failed.extend(batch.ids.iter().map(|id| (id.clone(), e.to_string())));
                    continue;
                }
            };
            let store = store.get_or_insert_with(|| EmbeddingStore::new(resp.dim, tag.clone()));
            if resp.dim != store.dim() {
                return Err(Error::DimMismatch {
                    expected: store.dim(),
                    actual: resp.dim,
                });
            }
            for (id, vector) in batch.ids.iter().zip(resp.vectors) {
                if let Err(e) = store.push(id.clone(), vector) {
                    failed.push((id.clone(), e.to_string()));
                }
            }
        }
    }

    Ok(EmbedOutcome {
        store: store.unwrap_or_else(|| EmbeddingStore::new(0, tag)),
        failed,
        skipped,
        provider_calls,
    })
}

fn call_with_retries(
    provider: &dyn EmbeddingProvider,
    batch: &Batch,
    max_retries: usize,
) -> (usize, Result<EmbedResponse>) {
    let mut last = None;
    for attempt in 0..=max_retries {
        match provider.embed(&batch.ids, &batch.texts, batch.role) {
            Ok(resp) => match check_shape(&resp, batch.ids.len()) {
                Ok(()) => return (attempt + 1, Ok(resp)),
                Err(e) => last = Some(e),
            },
            Err(e) => last = Some(e),
        }
    }
    (max_retries + 1, Err(last.expect("at least one attempt")))
}

fn check_shape(resp: &EmbedResponse, expected_rows: usize) -> Result<()> {
    if resp.vectors.len() != expected_rows {
        return Err(Error::Provider(format!(
            "requested {expected_rows} vectors, received {}",
            resp.vectors.len()
        )));
    }
    if let Some(v) = resp.vectors.iter().find(|v| v.len() != resp.dim) {
        return Err(Error::Provider(format!(
            "response declares dim {} but carries a vector of length {}",
            resp.dim,
            v.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Fixed {
        calls: AtomicUsize,
        rows: HashMap<String, Vec<f32>>,
        dim: usize,
    }

    impl EmbeddingProvider for Fixed {
        fn embed(&self, ids: &[String], _: &[String], _: Role) -> Result<EmbedResponse> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(EmbedResponse {
                dim: self.dim,
                vectors: ids.iter().map(|id| self.rows[id].clone()).collect(),
            })
        }
    }

    fn items() -> Vec<EmbedItem> {
        vec![
            EmbedItem { id: "a".into(), text: "first".into(), role: Role::Passage },
            EmbedItem { id: "b".into(), text: "second".into(), role: Role::Passage },
        ]
    }

    fn fixed() -> Fixed {
        Fixed {
            calls: AtomicUsize::new(0),
            rows: HashMap::from([("a".into(), vec![3.0, 4.0]), ("b".into(), vec![1.0, 0.0])]),
            dim: 2,
        }
    }

    #[test]
    fn rows_are_normalized() {
        let spec = ProviderSpec { tag: Some("fixed".into()), ..ProviderSpec::precomputed("x") };
        let out = embed_corpus(&items(), &fixed(), &spec, None).unwrap();
        assert_eq!(out.store.get("a").unwrap(), &[0.6, 0.8]);
        assert_eq!(out.store.get("b").unwrap(), &[1.0, 0.0]);
        assert!(out.failed.is_empty());
    }

    #[test]
    fn second_run_makes_no_calls() {
        let spec = ProviderSpec { tag: Some("fixed".into()), ..ProviderSpec::precomputed("x") };
        let provider = fixed();
        let first = embed_corpus(&items(), &provider, &spec, None).unwrap();
        let calls = provider.calls.load(Ordering::SeqCst);
        let second = embed_corpus(&items(), &provider, &spec, Some(first.store.clone())).unwrap();
        assert_eq!(provider.calls.load(Ordering::SeqCst), calls);
        assert_eq!(second.provider_calls, 0);
        assert_eq!(second.skipped, 2);
        assert_eq!(second.store, first.store);
    }

    struct Drifting;

    impl EmbeddingProvider for Drifting {
        fn embed(&self, ids: &[String], _: &[String], _: Role) -> Result<EmbedResponse> {
            let dim = if ids[0] == "a" { 2 } else { 3 };
            Ok(EmbedResponse { dim, vectors: vec![vec![1.0; dim]; ids.len()] })
        }
    }

    #[test]
    fn dimension_drift_fails_fast() {
        let spec = ProviderSpec { batch_size: 1, max_parallel_requests: 1, ..ProviderSpec::precomputed("x") };
        assert!(matches!(
            embed_corpus(&items(), &Drifting, &spec, None),
            Err(Error::DimMismatch { expected: 2, actual: 3 })
        ));
    }

    struct Flaky {
        calls: AtomicUsize,
    }

    impl EmbeddingProvider for Flaky {
        fn embed(&self, ids: &[String], _: &[String], _: Role) -> Result<EmbedResponse> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if ids[0] == "b" {
                return Err(Error::Provider("boom".into()));
            }
            Ok(EmbedResponse { dim: 2, vectors: vec![vec![1.0, 1.0]; ids.len()] })
        }
    }

    #[test]
    fn persistent_failure_is_reported_and_run_continues() {
        let spec = ProviderSpec { batch_size: 1, max_retries: 2, ..ProviderSpec::precomputed("x") };
        let provider = Flaky { calls: AtomicUsize::new(0) };
        let out = embed_corpus(&items(), &provider, &spec, None).unwrap();
        assert_eq!(out.store.len(), 1);
        assert_eq!(out.failed.len(), 1);
        assert_eq!(out.failed[0].0, "b");
        assert_eq!(provider.calls.load(Ordering::SeqCst), 1 + 3);
        assert_eq!(out.provider_calls, 4);
    }

    #[test]
    fn templates_need_exactly_one_slot() {
        let mut spec = ProviderSpec::precomputed("x");
        spec.query_template = "query: {text}".into();
        spec.validate().unwrap();
        assert_eq!(spec.render(Role::Query, "hi"), "query: hi");
        assert_eq!(spec.render(Role::Passage, "hi"), "hi");
        spec.passage_template = "passage".into();
        assert!(spec.validate().is_err());
        spec.passage_template = "{text} {text}".into();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn tag_mismatch_is_rejected() {
        let spec = ProviderSpec::precomputed("vectors.jsonl");
        assert_eq!(spec.provider_tag(), "file:vectors.jsonl");
        let other = EmbeddingStore::new(2, "remote:http://x");
        assert!(embed_corpus(&items(), &fixed(), &spec, Some(other)).is_err());
    }
}
