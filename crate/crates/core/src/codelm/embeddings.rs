//! `embeddings.bin`: question id → code embedding.
//!
//! Layout (little-endian): 8-byte magic, `u32` dim, `u64` count, then per
//! record in ascending id order: `u64` id, `u8` absent flag, `dim` × `f32`.

use std::collections::BTreeMap;
use std::path::Path;

use super::CodeEmbedding;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DFEMB\0\0\x01";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub entries: BTreeMap<u64, CodeEmbedding>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: u64, emb: CodeEmbedding) -> Result<()> {
        if emb.vector.len() != self.dim {
            return Err(Error::Dimension(format!(
                "embedding for {id} has {} values, table dim {}",
                emb.vector.len(),
                self.dim
            )));
        }
        self.entries.insert(id, emb);
        Ok(())
    }

    /// Embedding for `id`; questions missing from the table count as absent.
    pub fn get_or_absent(&self, id: u64) -> CodeEmbedding {
        self.entries.get(&id).cloned().unwrap_or_else(|| CodeEmbedding {
            vector: vec![0.0; self.dim],
            absent: true,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.entries.len() * (9 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (id, e) in &self.entries {
            out.extend_from_slice(&id.to_le_bytes());
            out.push(e.absent as u8);
            for x in &e.vector {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Input(format!("embeddings file: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing header"));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let rec = 9 + 4 * dim;
        if (bytes.len() - 20) != count.checked_mul(rec).ok_or_else(|| bad("size overflow"))? {
            return Err(bad("length does not match header"));
        }
        let mut table = EmbeddingTable::new(dim);
        for chunk in bytes[20..].chunks_exact(rec) {
            let id = u64::from_le_bytes(chunk[..8].try_into().expect("8 bytes"));
            let absent = match chunk[8] {
                0 => false,
                1 => true,
                _ => return Err(bad("invalid absent flag")),
            };
            let vector = chunk[9..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            if table.entries.insert(id, CodeEmbedding { vector, absent }).is_some() {
                return Err(bad("duplicate id"));
            }
        }
        Ok(table)
    }
}

pub fn write_embeddings(path: &Path, table: &EmbeddingTable) -> Result<()> {
    std::fs::write(path, table.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_validation() {
        let mut t = EmbeddingTable::new(2);
        t.insert(7, CodeEmbedding { vector: vec![1.5, -2.0], absent: false }).unwrap();
        t.insert(3, CodeEmbedding { vector: vec![0.0, 0.0], absent: true }).unwrap();
        assert!(t.insert(1, CodeEmbedding { vector: vec![0.0], absent: false }).is_err());
        let bytes = t.encode();
        assert_eq!(bytes.len(), 20 + 2 * 17);
        assert_eq!(&bytes[20..28], &3u64.to_le_bytes());
        assert_eq!(EmbeddingTable::decode(&bytes).unwrap(), t);
        assert!(EmbeddingTable::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(t.get_or_absent(99).absent);
    }
}
