//! Portable session snapshots.
//!
//! ```text
//! format_version u16 | session_id [16] | epoch u64
//! module_count u32   | { hash [32] | len u32 | bytes }*        hash ascending
//! pipeline_count u32 | { id u64 | module_hash [32] | entry u16-str }*  id ascending
//! buffer_count u32   | { id u64 | size u64 | bytes }*          id ascending
//! digest [32]        SHA-256 of everything above
//! ```
//!
//! All integers are little-endian. The ordering is part of the format, so
//! equal sessions always serialize to equal bytes.

use sha2::{Digest, Sha256};

use super::SessionError;
use crate::spirv::{hash_module, ContentHash};
use crate::wire::SessionId;

pub const FORMAT_VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;
const FIXED_LEN: usize = 2 + 16 + 8 + 4 + 4 + 4 + DIGEST_LEN;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSnapshot {
    pub session_id: SessionId,
    pub epoch: u64,
    pub modules: Vec<(ContentHash, Vec<u8>)>,
    pub pipelines: Vec<(u64, ContentHash, String)>,
    pub buffers: Vec<(u64, Vec<u8>)>,
}

fn malformed(why: &'static str) -> SessionError {
    SessionError::SnapshotMalformed(why)
}

impl SessionSnapshot {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with_version(FORMAT_VERSION)
    }

    /// Serializes with an arbitrary version word. Only useful for producing
    /// snapshots this build will refuse.
    pub fn to_bytes_with_version(&self, version: u16) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&self.session_id.0);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.modules.len() as u32).to_le_bytes());
        for (hash, bytes) in &self.modules {
            out.extend_from_slice(&hash.0);
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(bytes);
        }
        out.extend_from_slice(&(self.pipelines.len() as u32).to_le_bytes());
        for (id, hash, entry) in &self.pipelines {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&hash.0);
            out.extend_from_slice(&(entry.len() as u16).to_le_bytes());
            out.extend_from_slice(entry.as_bytes());
        }
        out.extend_from_slice(&(self.buffers.len() as u32).to_le_bytes());
        for (id, bytes) in &self.buffers {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(bytes);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Validates the digest, the version, the structure and referential
    /// closure, in that order.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SessionError> {
        if bytes.len() < FIXED_LEN {
            return Err(malformed("shorter than an empty snapshot"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(SessionError::DigestMismatch);
        }
        let mut r = Cursor { buf: body, pos: 0 };
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(SessionError::FormatVersionUnsupported(version));
        }
        let session_id = SessionId(r.array()?);
        let epoch = r.u64()?;

        let mut modules: Vec<(ContentHash, Vec<u8>)> = Vec::new();
        for _ in 0..r.u32()? {
            let hash = ContentHash(r.array()?);
            let len = r.u32()? as usize;
            let data = r.take(len)?.to_vec();
            if hash_module(&data) != hash {
                return Err(SessionError::HashMismatch);
            }
            if modules.last().is_some_and(|(h, _)| *h >= hash) {
                return Err(malformed("modules not in ascending hash order"));
            }
            modules.push((hash, data));
        }

        let mut pipelines: Vec<(u64, ContentHash, String)> = Vec::new();
        for _ in 0..r.u32()? {
            let id = r.u64()?;
            let hash = ContentHash(r.array()?);
            let len = r.u16()? as usize;
            let entry = std::str::from_utf8(r.take(len)?)
                .map_err(|_| malformed("entry name is not UTF-8"))?
                .to_string();
            if pipelines.last().is_some_and(|(p, _, _)| *p >= id) {
                return Err(malformed("pipelines not in ascending id order"));
            }
            if modules.binary_search_by(|(h, _)| h.cmp(&hash)).is_err() {
                return Err(malformed("pipeline refers to a module not in the snapshot"));
            }
            pipelines.push((id, hash, entry));
        }

        let mut buffers: Vec<(u64, Vec<u8>)> = Vec::new();
        for _ in 0..r.u32()? {
            let id = r.u64()?;
            let size = usize::try_from(r.u64()?).map_err(|_| malformed("buffer size overflows"))?;
            let data = r.take(size)?.to_vec();
            if buffers.last().is_some_and(|(b, _)| *b >= id) {
                return Err(malformed("buffers not in ascending id order"));
            }
            buffers.push((id, data));
        }
        if r.pos != body.len() {
            return Err(malformed("trailing bytes before digest"));
        }
        Ok(SessionSnapshot {
            session_id,
            epoch,
            modules,
            pipelines,
            buffers,
        })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SessionError> {
        if n > self.buf.len() - self.pos {
            return Err(malformed("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], SessionError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn u16(&mut self) -> Result<u16, SessionError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, SessionError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, SessionError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}
