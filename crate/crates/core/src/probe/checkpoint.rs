//! Probe checkpoint container.
//!
//! ```text
//! magic "IPRB" | version u16 | reserved u16 | header length u32 | header JSON
//! parameter count u32
//! per parameter: name length u16 | name | rank u8 | dims u32... | values f64...
//! SHA-256 of everything above (32 bytes)
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EncoderConfig, ModelMetadata, ProbeError, ProbeModel};
use crate::store::{Selection, StateShape};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"IPRB";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    input_shape: StateShape,
    selection: Selection,
    metadata: ModelMetadata,
}

pub fn encode_checkpoint(model: &ProbeModel) -> Result<Vec<u8>, ProbeError> {
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        input_shape: model.input_shape,
        selection: model.selection,
        metadata: model.metadata.clone(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in model.params.iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &p.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn write_checkpoint(model: &ProbeModel, path: impl AsRef<Path>) -> Result<(), ProbeError> {
    std::fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ProbeModel, ProbeError> {
    decode_checkpoint(&std::fs::read(path)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProbeError> {
        let end = self.pos.checked_add(n).ok_or(ProbeError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(ProbeError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, ProbeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ProbeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ProbeModel, ProbeError> {
    if bytes.len() < 4 {
        return Err(ProbeError::Truncated);
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(ProbeError::BadMagic(magic));
    }
    if bytes.len() < 4 + 2 + 32 {
        return Err(ProbeError::Truncated);
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(ProbeError::Checksum);
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(ProbeError::UnsupportedVersion(version));
    }
    r.u16()?;
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)?;
    let mut model = ProbeModel::rebuild(header.config, header.input_shape, header.selection, header.metadata)?;

    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(ProbeError::ParamMismatch(format!("{count} parameters stored, architecture has {}", model.params.len())));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| ProbeError::ParamMismatch("parameter name is not UTF-8".into()))?;
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let p = model.params.get(id);
        if name != p.name || shape != p.shape {
            return Err(ProbeError::ParamMismatch(format!("stored {name} {shape:?}, expected {} {:?}", p.name, p.shape)));
        }
        let n = p.len();
        let raw = r.take(n * 8)?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::ParamMismatch(format!("{name} holds a non-finite value")));
        }
        model.params.get_mut(id).values = values;
    }
    if r.pos != body.len() {
        return Err(ProbeError::ParamMismatch(format!("{} unexpected trailing bytes", body.len() - r.pos)));
    }
    Ok(model)
}
