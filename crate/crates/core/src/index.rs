//! Flat embedding index for exhaustive cosine search.
//!
//! Binary layout: magic `MLANIDX1`, u32 dimension, u32 checkpoint digest,
//! u32 record count, then per record a length-prefixed id string followed by
//! `d` little-endian f32 values. A JSONL form (`{"id": ..., "vector": [..]}`
//! per line) is provided for interop.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::tensor;
use crate::towers::Embedding;

const MAGIC: &[u8; 8] = b"MLANIDX1";

#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    dim: usize,
    checkpoint_digest: u32,
    entries: Vec<(String, Vec<f64>)>,
    ids: HashSet<String>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize, checkpoint_digest: u32) -> Self {
        EmbeddingIndex {
            dim,
            checkpoint_digest,
            entries: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn checkpoint_digest(&self) -> u32 {
        self.checkpoint_digest
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(eid, _)| eid == id)
            .map(|(_, v)| v.as_slice())
    }

    pub fn insert(&mut self, id: &str, embedding: &Embedding) -> Result<()> {
        if embedding.dim() != self.dim {
            return Err(Error::Shape(format!(
                "embedding dimension {} does not match index dimension {}",
                embedding.dim(),
                self.dim
            )));
        }
        if !self.ids.insert(id.to_string()) {
            return Err(Error::Integrity(format!("duplicate index id {id:?}")));
        }
        self.entries
            .push((id.to_string(), embedding.as_slice().to_vec()));
        Ok(())
    }

    /// Exhaustive search: all entries scored by cosine against the query,
    /// sorted by descending score with ties broken by ascending id, top-k
    /// returned.
    pub fn retrieve(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::Argument("k must be positive".to_string()));
        }
        if self.entries.is_empty() {
            return Err(Error::Argument("index is empty".to_string()));
        }
        if query.len() != self.dim {
            return Err(Error::Shape(format!(
                "query dimension {} does not match index dimension {}",
                query.len(),
                self.dim
            )));
        }
        let mut scored: Vec<(String, f64)> = self
            .entries
            .iter()
            .map(|(id, v)| (id.clone(), tensor::cosine(query, v)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("cosine scores are finite")
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(k);
        Ok(scored)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&self.checkpoint_digest.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (id, v) in &self.entries {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            for &x in v {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Load a binary index. Vectors are stored as f32, so they are
    /// re-normalized on load to restore the exact unit-norm invariant.
    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let mut cur = 0usize;
        let take = |cur: &mut usize, n: usize| -> Result<&[u8]> {
            if *cur + n > bytes.len() {
                return Err(Error::Integrity("index file truncated".to_string()));
            }
            let s = &bytes[*cur..*cur + n];
            *cur += n;
            Ok(s)
        };
        if take(&mut cur, 8)? != MAGIC {
            return Err(Error::Integrity("bad index magic".to_string()));
        }
        let dim = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
        let digest = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap());
        let count = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
        let mut index = EmbeddingIndex::new(dim, digest);
        for _ in 0..count {
            let id_len = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
            let id = String::from_utf8(take(&mut cur, id_len)?.to_vec())
                .map_err(|_| Error::Integrity("invalid UTF-8 id".to_string()))?;
            let raw = take(&mut cur, dim * 4)?;
            let v: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let v = tensor::l2_normalized(&v);
            if !index.ids.insert(id.clone()) {
                return Err(Error::Integrity(format!("duplicate index id {id:?}")));
            }
            index.entries.push((id, v));
        }
        if cur != bytes.len() {
            return Err(Error::Integrity("trailing bytes in index file".to_string()));
        }
        Ok(index)
    }

    /// JSONL export: `{"id": ..., "vector": [..]}` per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, v) in &self.entries {
            let rec = serde_json::json!({ "id": id, "vector": v });
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
