//! Embedding stores: id-addressed matrices of unit-normalized `f32` rows.

mod format;
mod provider;

use std::collections::HashMap;

use crate::error::{Error, Result};

pub use format::{decode, encode, load_store, save_store, MAGIC, VERSION};
pub use provider::{
    embed_corpus, EmbedItem, EmbedOutcome, EmbedResponse, EmbeddingProvider, PrecomputedFile,
    ProviderKind, ProviderSpec, RemoteService, Role,
};

/// Rows whose norm is within this distance of 1 count as normalized.
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
    dim: usize,
    provider_tag: String,
    normalized: bool,
}

impl EmbeddingStore {
    pub fn new(dim: usize, provider_tag: impl Into<String>) -> Self {
        EmbeddingStore {
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            dim,
            provider_tag: provider_tag.into(),
            normalized: true,
        }
    }

    /// Builds a store from rows, L2-normalizing each.
    pub fn from_rows<I, S>(dim: usize, provider_tag: impl Into<String>, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut store = EmbeddingStore::new(dim, provider_tag);
        for (id, row) in rows {
            store.push(id, row)?;
        }
        Ok(store)
    }

    /// Rows exactly as given, no normalization. Used by the decoder.
    pub(crate) fn from_raw_parts(
        ids: Vec<String>,
        data: Vec<f32>,
        dim: usize,
        provider_tag: String,
    ) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::Format(format!(
                "{} ids with dim {dim} need {} floats, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "store row",
                    id: id.clone(),
                });
            }
        }
        let mut store = EmbeddingStore {
            ids,
            index,
            data,
            dim,
            provider_tag,
            normalized: false,
        };
        let normalized = store.rows().all(|r| (norm(r) - 1.0).abs() <= NORM_TOLERANCE);
        store.normalized = normalized;
        Ok(store)
    }

    /// Appends a row after L2 normalization.
    pub fn push(&mut self, id: impl Into<String>, mut row: Vec<f32>) -> Result<()> {
        let id = id.into();
        if row.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: row.len(),
            });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::Provider(format!("non-finite value in vector for `{id}`")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId { kind: "store row", id });
        }
        l2_normalize(&mut row)?;
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(&row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact(0) panics; a zero-dim store has no meaningful rows
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Euclidean norm accumulated in `f64`.
pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Dot product accumulated left to right in `f64`. Retrieval, mining and the
/// clustering all score through this function so their rankings agree.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

pub fn l2_normalize(v: &mut [f32]) -> Result<()> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / n) as f32;
    }
    Ok(())
}

/// Cosine similarity of two arbitrary vectors.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!((cosine(&[1.0, 0.0], &[0.6, 0.8]).unwrap() - 0.6).abs() < 1e-7);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn push_normalizes_rows() {
        let store = EmbeddingStore::from_rows(2, "t", [("a", vec![3.0, 4.0]), ("b", vec![1.0, 0.0])]).unwrap();
        assert_eq!(store.get("a").unwrap(), &[0.6, 0.8]);
        assert_eq!(store.get("b").unwrap(), &[1.0, 0.0]);
        assert!(store.is_normalized());
    }

    #[test]
    fn push_rejects_bad_rows() {
        let mut store = EmbeddingStore::new(2, "t");
        assert!(matches!(store.push("a", vec![1.0]), Err(Error::DimMismatch { .. })));
        assert!(matches!(store.push("a", vec![0.0, 0.0]), Err(Error::ZeroNorm)));
        store.push("a", vec![1.0, 1.0]).unwrap();
        assert!(matches!(store.push("a", vec![1.0, 1.0]), Err(Error::DuplicateId { .. })));
    }

    proptest! {
        #[test]
        fn cosine_is_bounded(a in prop::collection::vec(-100.0f32..100.0, 1..64),
                             seed in any::<u64>()) {
            let b: Vec<f32> = a.iter().enumerate()
                .map(|(i, x)| x * ((seed.rotate_left(i as u32) % 7) as f32 - 3.0) + 0.5)
                .collect();
            if norm(&a) > 0.0 && norm(&b) > 0.0 {
                let c = cosine(&a, &b).unwrap();
                prop_assert!(c.abs() <= 1.0 + 1e-9);
                prop_assert!(cosine(&a, &a).unwrap() >= 1.0 - 1e-6);
            }
        }

        #[test]
        fn normalization_is_idempotent(mut v in prop::collection::vec(-1e3f32..1e3, 1..128)) {
            prop_assume!(norm(&v) > 1e-3);
            l2_normalize(&mut v).unwrap();
            let once = v.clone();
            l2_normalize(&mut v).unwrap();
            for (x, y) in once.iter().zip(&v) {
                prop_assert!((x - y).abs() <= 1e-7);
            }
            prop_assert!((norm(&v) - 1.0).abs() <= 1e-6);
        }
    }
}
