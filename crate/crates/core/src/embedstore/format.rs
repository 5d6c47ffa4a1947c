//! `.clnk` store files.
//!
//! ```text
//! magic    "CLNK"
//! version  u32
//! dim      u32
//! count    u64
//! tag      u32 length + UTF-8 bytes
//! ids      count × (u32 length + UTF-8 bytes)
//! payload  count × dim little-endian f32
//! crc32    u32 over payload
//! ```
//! All integers little-endian.

use std::path::Path;

use super::EmbeddingStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CLNK";
pub const VERSION: u32 = 1;

pub fn encode(store: &EmbeddingStore) -> Vec<u8> {
    let payload_len = store.as_slice().len() * 4;
    let ids_len: usize = store.ids().iter().map(|id| 4 + id.len()).sum();
    let mut out = Vec::with_capacity(24 + store.provider_tag().len() + ids_len + payload_len + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    put_str(&mut out, store.provider_tag());
    for id in store.ids() {
        put_str(&mut out, id);
    }
    let payload_start = out.len();
    for x in store.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated {
            expected: (self.pos as u64).saturating_add(n as u64),
            actual: self.buf.len() as u64,
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| Error::Format(format!("invalid UTF-8: {e}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingStore> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not a .clnk store".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = cur.u32()? as usize;
    let count = cur.u64()?;
    let provider_tag = cur.string()?;

    // every id costs at least its 4-byte length prefix
    let remaining = (bytes.len() - cur.pos) as u64;
    if count.saturating_mul(4) > remaining {
        return Err(Error::Format(format!(
            "header claims {count} rows but only {remaining} bytes follow"
        )));
    }
    let count = count as usize;
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(cur.string()?);
    }

    let payload_bytes = (count as u64) * (dim as u64) * 4;
    let expected = cur.pos as u64 + payload_bytes + 4;
    if bytes.len() as u64 != expected {
        return Err(if (bytes.len() as u64) < expected {
            Error::Truncated {
                expected,
                actual: bytes.len() as u64,
            }
        } else {
            Error::Format(format!(
                "dim/count header implies {expected} bytes, file has {}",
                bytes.len()
            ))
        });
    }
    let payload = cur.take(payload_bytes as usize)?;
    let recorded = cur.u32()?;
    let computed = crc32fast::hash(payload);
    if recorded != computed {
        return Err(Error::Checksum { recorded, computed });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingStore::from_raw_parts(ids, data, dim, provider_tag)
}

pub fn save_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    crate::io::ensure_parent(path)?;
    std::fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> EmbeddingStore {
        EmbeddingStore::from_rows(
            4,
            "unit-test",
            [
                ("a", vec![1.0, 2.0, 3.0, 4.0]),
                ("bé", vec![-1.0, 0.5, 0.0, 0.25]),
                ("c", vec![0.0, 0.0, 0.0, 1.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let store = sample();
        let bytes = encode(&store);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let bytes = encode(&sample());
        let cut = &bytes[..bytes.len() - 10];
        match decode(cut) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, cut.len() as u64);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = encode(&sample());
        let n = bytes.len();
        bytes[n - 8] ^= 0x01;
        assert!(matches!(decode(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn inconsistent_header_is_rejected() {
        let mut bytes = encode(&sample());
        bytes[8] = 5; // dim 4 -> 5
        assert!(matches!(decode(&bytes), Err(Error::Truncated { .. })));
        let mut bytes = encode(&sample());
        bytes[8] = 3;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        assert!(matches!(decode(b"NOPE"), Err(Error::Format(_))));
    }

    #[test]
    fn empty_store_is_valid() {
        let store = EmbeddingStore::new(8, "empty");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.clnk");
        save_store(&store, &path).unwrap();
        let back = load_store(&path).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.dim(), 8);
        assert_eq!(back.provider_tag(), "empty");
    }

    proptest! {
        #[test]
        fn floats_survive_bit_exactly(rows in prop::collection::vec(prop::collection::vec(-10.0f32..10.0, 3), 0..20)) {
            let rows: Vec<_> = rows.into_iter().enumerate()
                .filter(|(_, r)| super::super::norm(r) > 1e-3)
                .map(|(i, r)| (format!("id{i}"), r))
                .collect();
            let store = EmbeddingStore::from_rows(3, "p", rows).unwrap();
            let back = decode(&encode(&store)).unwrap();
            for (a, b) in store.as_slice().iter().zip(back.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back.ids(), store.ids());
        }
    }
}
