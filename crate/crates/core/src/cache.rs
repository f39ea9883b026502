//! Versioned binary artifacts.
//!
//! Layout: `b"ISOC"`, format version (u32 LE), artifact tag (u32 LE), payload
//! length (u64 LE), bincode payload, CRC-32 of everything before it (u32 LE).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denominators::GridField;
use crate::levelset::SurfaceMesh;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ISOC";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Artifact {
    Mesh(SurfaceMesh),
    Field(GridField),
}

impl Artifact {
    fn tag(&self) -> u32 {
        match self {
            Artifact::Mesh(_) => 1,
            Artifact::Field(_) => 2,
        }
    }
}

pub fn encode(artifact: &Artifact) -> Result<Vec<u8>> {
    let payload = match artifact {
        Artifact::Mesh(m) => bincode::serialize(m),
        Artifact::Field(f) => bincode::serialize(f),
    }
    .map_err(|e| Error::InvalidParameter(format!("cannot encode artifact: {e}")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&artifact.tag().to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn word(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> Result<Artifact> {
    if bytes.len() < HEADER_LEN + 4 || bytes[..4] != MAGIC {
        return Err(Error::CorruptFile("not a cache file".into()));
    }
    let version = word(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let body = bytes.len() - 4;
    if crc32fast::hash(&bytes[..body]) != word(bytes, body) {
        return Err(Error::CorruptFile("checksum mismatch".into()));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if len != (body - HEADER_LEN) as u64 {
        return Err(Error::CorruptFile(format!("payload length {len} does not match file")));
    }
    let payload = &bytes[HEADER_LEN..body];
    let bad = |e: bincode::Error| Error::CorruptFile(e.to_string());
    match word(bytes, 8) {
        1 => Ok(Artifact::Mesh(bincode::deserialize(payload).map_err(bad)?)),
        2 => Ok(Artifact::Field(bincode::deserialize(payload).map_err(bad)?)),
        t => Err(Error::CorruptFile(format!("unknown artifact tag {t}"))),
    }
}

pub fn store(artifact: &Artifact, path: &Path) -> Result<()> {
    fs::write(path, encode(artifact)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Artifact> {
    decode(&fs::read(path)?)
}

pub fn load_mesh(path: &Path) -> Result<SurfaceMesh> {
    match load(path)? {
        Artifact::Mesh(m) => Ok(m),
        Artifact::Field(_) => Err(Error::InvalidParameter(format!("{} holds a grid field, not a mesh", path.display()))),
    }
}

pub fn load_field(path: &Path) -> Result<GridField> {
    match load(path)? {
        Artifact::Field(f) => Ok(f),
        Artifact::Mesh(_) => Err(Error::InvalidParameter(format!("{} holds a mesh, not a grid field", path.display()))),
    }
}
