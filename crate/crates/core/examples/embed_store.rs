//! Embed items through a provider, persist the store as `.clnk` and load it back.

use claimlink::embedstore::{cosine, embed_corpus, load_store, save_store, EmbedItem, EmbeddingStore, PrecomputedFile, ProviderSpec, Role};

pub fn run_example() -> claimlink::Result<EmbeddingStore> {
    let provider = PrecomputedFile::from_vectors([
        ("c1".to_string(), vec![3.0, 4.0, 0.0]),
        ("c2".to_string(), vec![0.0, 0.0, 2.0]),
        ("c3".to_string(), vec![1.0, 1.0, 1.0]),
    ])?;
    let mut spec = ProviderSpec::precomputed("toy-vectors.jsonl");
    spec.batch_size = 2;
    let items: Vec<EmbedItem> = ["c1", "c2", "c3"]
        .iter()
        .map(|id| EmbedItem {
            id: id.to_string(),
            text: format!("text of {id}"),
            role: Role::Passage,
        })
        .collect();
    let outcome = embed_corpus(&items, &provider, &spec, None)?;
    println!("{} rows, {} calls", outcome.store.len(), outcome.provider_calls);

    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("claims.clnk");
    save_store(&outcome.store, &path)?;
    let loaded = load_store(&path)?;
    assert_eq!(loaded, outcome.store);
    println!(
        "tag {}, dim {}, cos(c1, c3) = {:.4}",
        loaded.provider_tag(),
        loaded.dim(),
        cosine(loaded.get("c1").unwrap(), loaded.get("c3").unwrap())?
    );
    Ok(loaded)
}

fn main() -> claimlink::Result<()> {
    run_example().map(|_| ())
}
