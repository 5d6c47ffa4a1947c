//! Reference topic clustering: seeded spherical k-means with a cosine cut-off
//! below which a point is left `uncategorized`.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::embedstore::{dot, l2_normalize, EmbeddingStore};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClusterLabel {
    Topic(usize),
    Uncategorized,
}

impl fmt::Display for ClusterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterLabel::Topic(t) => write!(f, "{t}"),
            ClusterLabel::Uncategorized => f.write_str("uncategorized"),
        }
    }
}

impl Serialize for ClusterLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ClusterLabel::Topic(t) => s.serialize_u64(*t as u64),
            ClusterLabel::Uncategorized => s.serialize_str("uncategorized"),
        }
    }
}

impl<'de> Deserialize<'de> for ClusterLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(ClusterLabel::Topic(n)),
            Raw::S(s) if s == "uncategorized" => Ok(ClusterLabel::Uncategorized),
            Raw::S(s) => Err(serde::de::Error::custom(format!("bad cluster label `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub clusters: usize,
    /// Points whose best centroid cosine is below this are `uncategorized`.
    pub threshold: f64,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            clusters: 50,
            threshold: 0.5,
            seed: 0,
            max_iterations: 100,
        }
    }
}

impl ClusterParams {
    pub fn method_tag(&self) -> String {
        format!(
            "spherical-kmeans(k={},tau={},seed={},iters={})",
            self.clusters, self.threshold, self.seed, self.max_iterations
        )
    }
}

/// Topic label of every claim (and, for joint runs, every post).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMap {
    pub cluster_of: BTreeMap<String, ClusterLabel>,
    #[serde(default)]
    pub post_cluster: BTreeMap<String, ClusterLabel>,
    pub method_tag: String,
}

/// Fitted centroids plus the labelling rule.
pub struct SphericalKMeans {
    centroids: Vec<Vec<f32>>,
    threshold: f64,
}

impl SphericalKMeans {
    pub fn fit(points: &[&[f32]], params: &ClusterParams) -> Result<Self> {
        let k = params.clusters;
        if k == 0 || points.len() < k {
            return Err(Error::TooFewPoints {
                points: points.len(),
                clusters: k,
            });
        }
        let mut rng = stream_rng(params.seed, "kmeans");

        // k-means++ seeding on cosine distance
        let mut centroids: Vec<Vec<f32>> = vec![points[rng.random_range(0..points.len())].to_vec()];
        let mut dist: Vec<f64> = points.iter().map(|p| 1.0 - dot(p, &centroids[0])).collect();
        while centroids.len() < k {
            let total: f64 = dist.iter().map(|d| d.max(0.0)).sum();
            let next = if total <= 0.0 {
                rng.random_range(0..points.len())
            } else {
                let mut target = rng.random_range(0.0..total);
                let mut chosen = points.len() - 1;
                for (i, d) in dist.iter().enumerate() {
                    target -= d.max(0.0);
                    if target < 0.0 {
                        chosen = i;
                        break;
                    }
                }
                chosen
            };
            centroids.push(points[next].to_vec());
            let c = centroids.last().unwrap();
            for (d, p) in dist.iter_mut().zip(points) {
                *d = d.min(1.0 - dot(p, c));
            }
        }

        let dim = points[0].len();
        let mut assignment = vec![usize::MAX; points.len()];
        for _ in 0..params.max_iterations.max(1) {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let best = nearest(&centroids, p).0;
                if assignment[i] != best {
                    assignment[i] = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![vec![0.0f64; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, &a) in points.iter().zip(&assignment) {
                counts[a] += 1;
                for (s, x) in sums[a].iter_mut().zip(p.iter()) {
                    *s += f64::from(*x);
                }
            }
            for (c, (sum, n)) in sums.into_iter().zip(counts).enumerate() {
                if n == 0 {
                    // empty cluster: restart it on the worst-served point
                    let worst = points
                        .iter()
                        .enumerate()
                        .map(|(i, p)| (i, dot(p, &centroids[assignment[i]])))
                        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    centroids[c] = points[worst].to_vec();
                    continue;
                }
                let mut v: Vec<f32> = sum.iter().map(|s| *s as f32).collect();
                if l2_normalize(&mut v).is_ok() {
                    centroids[c] = v;
                }
            }
        }

        Ok(SphericalKMeans {
            centroids,
            threshold: params.threshold,
        })
    }

    pub fn centroids(&self) -> &[Vec<f32>] {
        &self.centroids
    }

    pub fn label(&self, point: &[f32]) -> ClusterLabel {
        let (best, sim) = nearest(&self.centroids, point);
        if sim < self.threshold {
            ClusterLabel::Uncategorized
        } else {
            ClusterLabel::Topic(best)
        }
    }
}

fn nearest(centroids: &[Vec<f32>], p: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let s = dot(p, c);
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

fn rows(store: &EmbeddingStore) -> Result<Vec<&[f32]>> {
    if !store.is_normalized() {
        return Err(Error::Config("clustering needs a normalized store".into()));
    }
    Ok((0..store.len()).map(|i| store.row(i)).collect())
}

/// Clusters claim vectors.
pub fn cluster_claims(claim_store: &EmbeddingStore, params: &ClusterParams) -> Result<ClusterMap> {
    let points = rows(claim_store)?;
    let model = SphericalKMeans::fit(&points, params)?;
    Ok(ClusterMap {
        cluster_of: claim_store
            .ids()
            .iter()
            .zip(&points)
            .map(|(id, p)| (id.clone(), model.label(p)))
            .collect(),
        post_cluster: BTreeMap::new(),
        method_tag: params.method_tag(),
    })
}

/// Clusters posts and claims together in one space so every post gets a topic.
pub fn cluster_joint(
    claim_store: &EmbeddingStore,
    post_store: &EmbeddingStore,
    params: &ClusterParams,
) -> Result<ClusterMap> {
    if claim_store.dim() != post_store.dim() {
        return Err(Error::DimMismatch {
            expected: claim_store.dim(),
            actual: post_store.dim(),
        });
    }
    let claim_points = rows(claim_store)?;
    let post_points = rows(post_store)?;
    let all: Vec<&[f32]> = claim_points.iter().chain(&post_points).copied().collect();
    let model = SphericalKMeans::fit(&all, params)?;
    Ok(ClusterMap {
        cluster_of: claim_store
            .ids()
            .iter()
            .zip(&claim_points)
            .map(|(id, p)| (id.clone(), model.label(p)))
            .collect(),
        post_cluster: post_store
            .ids()
            .iter()
            .zip(&post_points)
            .map(|(id, p)| (id.clone(), model.label(p)))
            .collect(),
        method_tag: format!("joint-{}", params.method_tag()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two tight bundles around orthogonal axes.
    fn bundles() -> EmbeddingStore {
        let mut rows = Vec::new();
        for i in 0..50 {
            let eps = (i as f32) * 1e-3;
            rows.push((format!("x{i:02}"), vec![1.0, eps, 0.0, eps / 2.0]));
            rows.push((format!("y{i:02}"), vec![eps, 1.0, eps / 2.0, 0.0]));
        }
        EmbeddingStore::from_rows(4, "bundles", rows).unwrap()
    }

    #[test]
    fn orthogonal_bundles_separate() {
        let store = bundles();
        let params = ClusterParams { clusters: 2, threshold: 0.5, seed: 11, max_iterations: 50 };
        let map = cluster_claims(&store, &params).unwrap();
        let x = map.cluster_of["x00"];
        let y = map.cluster_of["y00"];
        assert_ne!(x, y);
        assert!(!matches!(x, ClusterLabel::Uncategorized));
        for (id, label) in &map.cluster_of {
            assert_eq!(*label, if id.starts_with('x') { x } else { y }, "{id}");
        }
        // nearest-centroid check
        let model = SphericalKMeans::fit(&(0..store.len()).map(|i| store.row(i)).collect::<Vec<_>>(), &params).unwrap();
        for c in model.centroids() {
            assert!(c[0] > 0.99 || c[1] > 0.99);
        }
    }

    #[test]
    fn threshold_above_one_leaves_everything_uncategorized() {
        let params = ClusterParams { clusters: 2, threshold: 1.01, seed: 1, max_iterations: 10 };
        let map = cluster_claims(&bundles(), &params).unwrap();
        assert!(map.cluster_of.values().all(|l| *l == ClusterLabel::Uncategorized));
    }

    #[test]
    fn single_cluster_with_low_threshold_takes_everything() {
        let params = ClusterParams { clusters: 1, threshold: -1.0, seed: 1, max_iterations: 10 };
        let map = cluster_claims(&bundles(), &params).unwrap();
        assert!(map.cluster_of.values().all(|l| *l == ClusterLabel::Topic(0)));
    }

    #[test]
    fn too_few_points() {
        let store = EmbeddingStore::from_rows(2, "t", [("a", vec![1.0, 0.0])]).unwrap();
        let params = ClusterParams { clusters: 2, ..Default::default() };
        assert!(matches!(cluster_claims(&store, &params), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn labels_serialize_as_number_or_word() {
        let json = serde_json::to_string(&[ClusterLabel::Topic(3), ClusterLabel::Uncategorized]).unwrap();
        assert_eq!(json, r#"[3,"uncategorized"]"#);
        let back: Vec<ClusterLabel> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, [ClusterLabel::Topic(3), ClusterLabel::Uncategorized]);
    }
}
