//! ISTD: the on-disk format for state datasets.
//!
//! Little-endian throughout.
//!
//! ```text
//! header (32 bytes)
//!   magic "ISTD" | version u16 = 1 | flags u16 = 0 | L u32 | d u32
//!   channel mask u8 (bit0 act, bit1 attn, bit2 ff) | reserved [u8; 7]
//!   instance count u64
//! record (17 bytes + tag + values)
//!   id u64 | label u8 (0, 1, 255 = unlabeled) | logprob present u8
//!   reserved u16 | answer logprob f32 | tag length u8 | tag bytes
//!   |channels|·L·d f32 values, channel-major, layer-major, feature-minor
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{ChannelSet, InternalStateTensor, Label, LabeledInstance, StateDataset, StateShape, StoreError};

pub const MAGIC: [u8; 4] = *b"ISTD";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const RECORD_HEADER_LEN: usize = 17;

pub fn encode_dataset(dataset: &StateDataset) -> Result<Vec<u8>, StoreError> {
    if dataset.is_empty() {
        return Err(StoreError::EmptyDataset);
    }
    let shape = dataset.shape();
    let per_values = shape.value_count() * 4;
    let mut out = Vec::with_capacity(HEADER_LEN + dataset.len() * (RECORD_HEADER_LEN + per_values));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(shape.layers as u32).to_le_bytes());
    out.extend_from_slice(&(shape.dim as u32).to_le_bytes());
    out.push(shape.channels.mask());
    out.extend_from_slice(&[0u8; 7]);
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);

    for inst in dataset.instances() {
        if inst.tensor().shape() != shape {
            return Err(StoreError::ShapeMismatch { expected: shape, found: inst.tensor().shape() });
        }
        out.extend_from_slice(&inst.id().to_le_bytes());
        out.push(inst.label().to_byte());
        out.push(inst.answer_logprob().is_some() as u8);
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(inst.answer_logprob().unwrap_or(0.0) as f32).to_le_bytes());
        let tag = inst.tag().unwrap_or("").as_bytes();
        out.push(tag.len() as u8);
        out.extend_from_slice(tag);
        for v in inst.tensor().values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes `dataset` to `path`, returning the number of bytes written.
pub fn write_dataset(dataset: &StateDataset, path: impl AsRef<Path>) -> Result<u64, StoreError> {
    let bytes = encode_dataset(dataset)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes.len() as u64)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<StateDataset, StoreError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().expect("length checked"))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<StateDataset, StoreError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = cur.array().ok_or(StoreError::TruncatedHeader)?;
    if magic != MAGIC {
        return Err(StoreError::BadMagic(magic));
    }
    let header = cur.take(HEADER_LEN - 4).ok_or(StoreError::TruncatedHeader)?;
    let version = u16::from_le_bytes([header[0], header[1]]);
    if version != VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let flags = u16::from_le_bytes([header[2], header[3]]);
    if flags != 0 {
        return Err(StoreError::UnsupportedFlags(flags));
    }
    let layers = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let channels = ChannelSet::from_mask(header[12])?;
    let count = u64::from_le_bytes(header[20..28].try_into().unwrap());
    let shape = StateShape::new(layers, dim, channels)?;
    let n_values = shape.value_count();

    let mut instances = Vec::with_capacity(count.min(1 << 20) as usize);
    for record in 0..count {
        let truncated = || StoreError::TruncatedRecord(record);
        let head = cur.take(RECORD_HEADER_LEN).ok_or_else(truncated)?;
        let id = u64::from_le_bytes(head[0..8].try_into().unwrap());
        let label = Label::from_byte(head[8]).ok_or(StoreError::InvalidLabel { record, value: head[8] })?;
        let has_logprob = head[9] != 0;
        let logprob = f32::from_le_bytes(head[12..16].try_into().unwrap());
        let tag_len = head[16] as usize;
        let tag = cur.take(tag_len).ok_or_else(truncated)?;
        let tag = std::str::from_utf8(tag).map_err(|_| StoreError::InvalidTag(record))?;
        let raw = cur.take(n_values * 4).ok_or_else(truncated)?;
        let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite(record));
        }
        let tensor = InternalStateTensor::new(shape, values)?;
        let mut inst = LabeledInstance::new(id, tensor, label);
        if has_logprob {
            inst = inst.with_logprob(logprob as f64)?;
        }
        if tag_len > 0 {
            inst = inst.with_tag(tag)?;
        }
        instances.push(inst);
    }
    if cur.pos != bytes.len() {
        return Err(StoreError::TrailingBytes(bytes.len() - cur.pos));
    }
    StateDataset::new(shape, instances)
}
