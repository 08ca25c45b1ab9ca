//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MULANCKP"  magic, 8 bytes
//! u32         format version
//! u32 + bytes config snapshot (JSON, UTF-8)
//! u64         global step
//! [u8; 32]    sampler RNG seed
//! u64         sampler RNG stream
//! u128        sampler RNG word position
//! param table:     u32 count, then per entry
//!                  (u32 name len, name, u32 ndims, u32 dims..., u64 count, f64 data...)
//! optimizer table: u32 count, then per entry
//!                  (u32 name len, name, u64 step, moment1 tensor, moment2 tensor)
//! u32         CRC32 of everything above
//! ```
//!
//! A reload reproduces parameters bit for bit; any truncation or corruption
//! fails the CRC before anything is parsed.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::store::{ParamEntry, ParameterStore};
use crate::nn::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MULANCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Serialized RNG state: seed, stream, and word position, enough to resume
/// the ChaCha sampler exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &rand_chacha::ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Full training state: model parameters, optimizer moments, step counter,
/// sampler RNG, and an opaque config snapshot.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub config_json: String,
    pub global_step: u64,
    pub rng: RngState,
    pub params: ParameterStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, self.version);
        put_u32(&mut buf, self.config_json.len() as u32);
        buf.extend_from_slice(self.config_json.as_bytes());
        put_u64(&mut buf, self.global_step);
        buf.extend_from_slice(&self.rng.seed);
        buf.extend_from_slice(&self.rng.stream.to_le_bytes());
        buf.extend_from_slice(&self.rng.word_pos.to_le_bytes());

        put_u32(&mut buf, self.params.entries.len() as u32);
        for (name, entry) in &self.params.entries {
            put_str(&mut buf, name);
            put_tensor(&mut buf, &entry.value);
        }
        put_u32(&mut buf, self.params.entries.len() as u32);
        for (name, entry) in &self.params.entries {
            put_str(&mut buf, name);
            put_u64(&mut buf, entry.step);
            put_tensor(&mut buf, &entry.moment1);
            put_tensor(&mut buf, &entry.moment2);
        }

        let crc = crc32fast::hash(&buf);
        put_u32(&mut buf, crc);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 {
            return Err(Error::Checkpoint("file too short".to_string()));
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        if crc32fast::hash(body) != stored_crc {
            return Err(Error::Checkpoint(
                "CRC mismatch: file is truncated or corrupt".to_string(),
            ));
        }
        let mut cur = Cursor { buf: body, pos: 0 };
        let magic = cur.take(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".to_string()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let config_json = cur.string()?;
        let global_step = cur.u64()?;
        let seed: [u8; 32] = cur
            .take(32)?
            .try_into()
            .map_err(|_| Error::Checkpoint("bad rng seed".to_string()))?;
        let stream = cur.u64()?;
        let word_pos = u128::from_le_bytes(
            cur.take(16)?
                .try_into()
                .map_err(|_| Error::Checkpoint("bad rng position".to_string()))?,
        );

        let n_params = cur.u32()? as usize;
        let mut values: BTreeMap<String, Tensor> = BTreeMap::new();
        for _ in 0..n_params {
            let name = cur.string()?;
            let tensor = cur.tensor()?;
            if values.insert(name.clone(), tensor).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {name:?}")));
            }
        }
        let n_state = cur.u32()? as usize;
        if n_state != n_params {
            return Err(Error::Checkpoint(
                "optimizer table size does not match parameter table".to_string(),
            ));
        }
        let mut entries: BTreeMap<String, ParamEntry> = BTreeMap::new();
        for _ in 0..n_state {
            let name = cur.string()?;
            let step = cur.u64()?;
            let moment1 = cur.tensor()?;
            let moment2 = cur.tensor()?;
            let value = values
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown {name:?}")))?;
            if moment1.shape() != value.shape() || moment2.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "moment shapes do not match parameter {name:?}"
                )));
            }
            entries.insert(
                name,
                ParamEntry {
                    value,
                    moment1,
                    moment2,
                    step,
                },
            );
        }
        if cur.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after tables".to_string()));
        }
        Ok(Checkpoint {
            version,
            config_json,
            global_step,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
            params: ParameterStore { entries },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    /// CRC32 of the serialized form; used to tie embedding indexes and eval
    /// reports to the model that produced them.
    pub fn digest(&self) -> u32 {
        crc32fast::hash(&self.to_bytes())
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    put_u32(buf, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(buf, d as u32);
    }
    put_u64(buf, t.len() as u64);
    for &x in t.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of file".to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
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
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 in name".to_string()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndims = self.u32()? as usize;
        if ndims > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {ndims}")));
        }
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(self.u32()? as usize);
        }
        let count = self.u64()? as usize;
        if count != shape.iter().product::<usize>() {
            return Err(Error::Checkpoint("tensor length/shape mismatch".to_string()));
        }
        let raw = self.take(count * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_vec(&shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample_checkpoint() -> Checkpoint {
        let mut params = ParameterStore::new();
        params
            .insert(
                "tower.w",
                Tensor::from_vec(&[2, 3], vec![0.1, -0.2, 0.3, 1e-300, f64::MAX, -0.0]).unwrap(),
            )
            .unwrap();
        params.insert("theta", Tensor::scalar(-2.302585)).unwrap();
        let rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        Checkpoint {
            version: FORMAT_VERSION,
            config_json: "{\"profile\":\"desk\"}".to_string(),
            global_step: 123,
            rng: RngState::capture(&rng),
            params,
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ckpt = sample_checkpoint();
        let bytes = ckpt.to_bytes();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.to_bytes(), bytes);
        assert_eq!(
            loaded.params.get("tower.w").unwrap().data(),
            ckpt.params.get("tower.w").unwrap().data()
        );
        assert_eq!(loaded.global_step, 123);
        assert_eq!(loaded.rng, ckpt.rng);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = sample_checkpoint().to_bytes();
        for cut in [1, 4, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)));
        }
    }

    #[test]
    fn corrupted_byte_is_rejected() {
        let mut bytes = sample_checkpoint().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn rng_state_round_trips_mid_stream() {
        use rand::RngCore;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..17 {
            rng.next_u64();
        }
        let state = RngState::capture(&rng);
        let mut restored = state.restore();
        let mut original = rng;
        for _ in 0..100 {
            assert_eq!(original.next_u64(), restored.next_u64());
        }
    }
}
