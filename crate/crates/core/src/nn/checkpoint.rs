//! Binary network checkpoints.
//!
//! Little-endian layout of one section:
//!
//! ```text
//! b"MACSCKPT"  magic
//! u8           format version (1)
//! u8           output activation (0 identity, 1 tanh)
//! u32          number of layer sizes, then one u32 per size
//! u64          config hash
//! u64          episode count
//! u16          tag length, then the UTF-8 tag
//! u64          parameter count, then that many f64 values
//! ```
//!
//! Multi-network files (agents, counterfactual policies) are plain
//! concatenations of sections, told apart by their tags.

use std::io::{ErrorKind, Read, Write};

use super::net::{param_count, Activation, DenseNet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MACSCKPT";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata {
    pub config_hash: u64,
    pub episodes: u64,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: DenseNet,
    pub meta: Metadata,
}

pub fn save_checkpoint<W: Write>(net: &DenseNet, meta: &Metadata, mut sink: W) -> Result<()> {
    let tag = meta.tag.as_bytes();
    if tag.len() > u16::MAX as usize {
        return Err(Error::config("checkpoint tag too long"));
    }
    let mut buf = Vec::with_capacity(64 + 8 * net.num_params());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(net.output_activation().tag());
    buf.extend_from_slice(&(net.sizes().len() as u32).to_le_bytes());
    for &s in net.sizes() {
        buf.extend_from_slice(&(s as u32).to_le_bytes());
    }
    buf.extend_from_slice(&meta.config_hash.to_le_bytes());
    buf.extend_from_slice(&meta.episodes.to_le_bytes());
    buf.extend_from_slice(&(tag.len() as u16).to_le_bytes());
    buf.extend_from_slice(tag);
    buf.extend_from_slice(&(net.num_params() as u64).to_le_bytes());
    for p in net.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    sink.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut source: R) -> Result<Checkpoint> {
    read_section(&mut source)?.ok_or_else(|| Error::CorruptCheckpoint("empty file".into()))
}

/// Reads consecutive sections until end of input.
pub fn load_sections<R: Read>(mut source: R) -> Result<Vec<Checkpoint>> {
    let mut out = Vec::new();
    while let Some(section) = read_section(&mut source)? {
        out.push(section);
    }
    if out.is_empty() {
        return Err(Error::CorruptCheckpoint("empty file".into()));
    }
    Ok(out)
}

fn truncated() -> Error {
    Error::CorruptCheckpoint("truncated file".into())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => truncated(),
        _ => Error::Io(e),
    })
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// `Ok(None)` on a clean end of input before the first magic byte.
fn read_section<R: Read>(r: &mut R) -> Result<Option<Checkpoint>> {
    let mut magic = [0u8; 8];
    let mut filled = 0;
    while filled < magic.len() {
        match r.read(&mut magic[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(truncated()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::Io(e)),
        }
    }
    if &magic != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic header".into()));
    }
    let version = read_u8(r)?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let activation = Activation::from_tag(read_u8(r)?)
        .ok_or_else(|| Error::CorruptCheckpoint("unknown output activation".into()))?;
    let n_sizes = read_u32(r)? as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(Error::CorruptCheckpoint(format!("implausible layer count {n_sizes}")));
    }
    let sizes = (0..n_sizes)
        .map(|_| read_u32(r).map(|s| s as usize))
        .collect::<Result<Vec<_>>>()?;
    if sizes.contains(&0) {
        return Err(Error::CorruptCheckpoint("zero layer size".into()));
    }
    let config_hash = read_u64(r)?;
    let episodes = read_u64(r)?;
    let tag_len = read_u16(r)? as usize;
    let mut tag = vec![0u8; tag_len];
    read_exact(r, &mut tag)?;
    let tag = String::from_utf8(tag).map_err(|_| Error::CorruptCheckpoint("tag is not UTF-8".into()))?;
    let count = read_u64(r)? as usize;
    let expected = param_count(&sizes);
    if count != expected {
        return Err(Error::CorruptCheckpoint(format!(
            "header declares {count} parameters but layer sizes imply {expected}"
        )));
    }
    let mut raw = vec![0u8; 8 * count];
    read_exact(r, &mut raw)?;
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let net = DenseNet::from_params(&sizes, activation, params)?;
    Ok(Some(Checkpoint {
        net,
        meta: Metadata {
            config_hash,
            episodes,
            tag,
        },
    }))
}
