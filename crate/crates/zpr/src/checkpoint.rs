//! Single-file binary checkpoints.
//!
//! Layout: an 8-byte magic, a length-prefixed JSON header (format and
//! feature versions, model dimensions, vocabulary, training phase/epoch, rng
//! state), then one length-prefixed section per parameter — name, shape,
//! raw little-endian `f64` values followed by the Adagrad accumulators — and
//! a trailing SHA-256 checksum over everything before it. Values round-trip
//! bit-exactly; loading a corrupted or incompatible file is refused.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Vocabulary;
use crate::encoders::ModelConfig;
use crate::error::{Error, Result};
use crate::features::FEATURE_VERSION;
use crate::math::{ParamEntry, ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"ZPRCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Serialized RNG state: ChaCha8 seed plus keystream position.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RngState {
    pub seed_hex: String,
    pub word_pos: String,
}

impl RngState {
    pub fn of(state: ([u8; 32], u128)) -> Self {
        RngState { seed_hex: to_hex(&state.0), word_pos: state.1.to_string() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub feature_version: String,
    pub model: ModelConfig,
    /// "init", "pretrain", or "rl" — the phase the parameters came from.
    pub phase: String,
    pub epoch: usize,
    pub rng: RngState,
    /// Score index convention marker; index 0 is corefer.
    pub score_order: String,
    vocab: Vec<String>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub vocabulary: Vocabulary,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn new(
        model: ModelConfig,
        vocabulary: Vocabulary,
        store: ParamStore,
        phase: &str,
        epoch: usize,
        rng: RngState,
    ) -> Self {
        let meta = CheckpointMeta {
            format_version: FORMAT_VERSION,
            feature_version: FEATURE_VERSION.to_string(),
            model,
            phase: phase.to_string(),
            epoch,
            rng,
            score_order: "corefer_first".to_string(),
            vocab: vocabulary.tokens().to_vec(),
        };
        Checkpoint { meta, vocabulary, store }
    }
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn from_hex(s: &str) -> Result<Vec<u8>> {
    if s.len() % 2 != 0 {
        return Err(Error::Checkpoint("odd-length hex string".into()));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&s[i..i + 2], 16)
                .map_err(|e| Error::Checkpoint(format!("bad hex: {e}")))
        })
        .collect()
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(buf: &mut Vec<u8>, data: &[f64]) {
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header =
        serde_json::to_vec(&ckpt.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u64(&mut buf, header.len() as u64);
    buf.extend_from_slice(&header);

    push_u64(&mut buf, ckpt.store.names().count() as u64);
    for (name, entry) in ckpt.store.iter() {
        push_u64(&mut buf, name.len() as u64);
        buf.extend_from_slice(name.as_bytes());
        push_u64(&mut buf, entry.value.rows() as u64);
        push_u64(&mut buf, entry.value.cols() as u64);
        push_f64s(&mut buf, entry.value.data());
        push_f64s(&mut buf, entry.accum.data());
    }

    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n * 8)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path)?;
    if buf.len() < MAGIC.len() + 32 {
        return Err(Error::Checkpoint("file too short to be a checkpoint".into()));
    }
    let (body, stored_digest) = buf.split_at(buf.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored_digest {
        return Err(Error::Checkpoint("checksum mismatch: file is corrupted".into()));
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let header_len = r.u64()? as usize;
    let header = r.take(header_len)?;
    let meta: CheckpointMeta =
        serde_json::from_slice(header).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} not supported (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    if meta.feature_version != FEATURE_VERSION {
        return Err(Error::Checkpoint(format!(
            "feature version {:?} does not match this build ({FEATURE_VERSION:?}); \
             refusing a stale checkpoint",
            meta.feature_version
        )));
    }

    let n_tensors = r.u64()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n_tensors {
        let name_len = r.u64()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
            .to_string();
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let value = Tensor::from_rows(rows, cols, r.f64s(rows * cols)?);
        let accum = Tensor::from_rows(rows, cols, r.f64s(rows * cols)?);
        let grad = Tensor::zeros(rows, cols);
        store.insert_entry(&name, ParamEntry { value, grad, accum });
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after tensor sections".into()));
    }

    let vocabulary = Vocabulary::new(meta.vocab.clone())?;
    if vocabulary.len() != meta.model.vocab_size {
        return Err(Error::Checkpoint("vocabulary size disagrees with model header".into()));
    }
    Ok(Checkpoint { meta, vocabulary, store })
}
