//! Mine random, similarity and topic negatives and write them in the file
//! format the fine-tuning tools read.

use std::collections::BTreeMap;

use claimlink::embedstore::EmbeddingStore;
use claimlink::negatives::{
    load_negatives, mine_random, mine_similarity, mine_topic, serialize_negatives, validate_records, ClusterLabel,
    ClusterMap, MiningInput, NegativeConfig, NegativeRecord, NegativesHeader, Strategy,
};

pub fn run_example() -> claimlink::Result<Vec<NegativeRecord>> {
    let input = MiningInput::new(
        [("p1", "c0"), ("p2", "c3")].map(|(p, c)| (p.to_string(), c.to_string())),
        (0..6).map(|i| format!("c{i}")),
    );
    let claims = EmbeddingStore::from_rows(
        2,
        "toy",
        (0..6).map(|i| {
            let a = i as f32 * 0.5;
            (format!("c{i}"), vec![a.cos(), a.sin()])
        }),
    )?;
    let posts = EmbeddingStore::from_rows(2, "toy", [("p1", vec![1.0, 0.0]), ("p2", vec![0.07, 1.0])])?;
    let clusters = ClusterMap {
        cluster_of: (0..6)
            .map(|i| {
                let label = if i < 4 { ClusterLabel::Topic(i / 2) } else { ClusterLabel::Uncategorized };
                (format!("c{i}"), label)
            })
            .collect(),
        post_cluster: BTreeMap::from([("p1".into(), ClusterLabel::Topic(0)), ("p2".into(), ClusterLabel::Topic(1))]),
        method_tag: "hand-labelled".into(),
    };

    let k = 2;
    let mut all = Vec::new();
    for strategy in [Strategy::Random, Strategy::Similarity, Strategy::Topic] {
        let cfg = NegativeConfig::new(strategy, k, 7);
        let records = match strategy {
            Strategy::Random => mine_random(&input, &cfg)?,
            Strategy::Similarity => mine_similarity(&input, &posts, &claims, &cfg)?,
            Strategy::Topic => mine_topic(&input, &clusters, &cfg)?,
        };
        assert!(validate_records(&records, &input, k).is_empty());
        for r in &records {
            println!("{strategy:?} {} -> {:?}", r.post_id, r.negatives);
        }
        all.extend(records);
    }

    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("negatives.jsonl");
    let sim: Vec<NegativeRecord> = all.iter().filter(|r| r.strategy == Strategy::Similarity).cloned().collect();
    let mut header = NegativesHeader::new(&NegativeConfig::new(Strategy::Similarity, k, 7), sim.len());
    header.provider_tag = Some(claims.provider_tag().into());
    serialize_negatives(&path, &header, &sim)?;
    let (back, records) = load_negatives(&path)?;
    assert_eq!((back, records), (header, sim));
    Ok(all)
}

fn main() -> claimlink::Result<()> {
    run_example().map(|_| ())
}
