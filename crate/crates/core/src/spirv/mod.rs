//! SPIR-V container handling: the module type transacted between peers,
//! header parsing, content hashing and word-level reflection.

pub mod builder;
pub mod consts;
mod reflect;

use std::fmt;

use sha2::{Digest, Sha256};

pub use reflect::{
    reflect, BindingKind, BindingSlot, DescriptorSlot, EntryPoint, ExecutionModel, ModuleInfo,
};

/// SHA-256 of a module's exact bytes. Used as the cache key everywhere.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Self(out))
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.to_hex())
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn hash_module(bytes: &[u8]) -> ContentHash {
    ContentHash(Sha256::digest(bytes).into())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReflectError {
    #[error("TooShort: module is {0} bytes, header needs 20")]
    TooShort(usize),
    #[error("BadMagic: first word is {0:#010x}")]
    BadMagic(u32),
    #[error("BadSchema: schema word is {0}")]
    BadSchema(u32),
    #[error("Misaligned: {0} bytes is not a multiple of 4")]
    Misaligned(usize),
    #[error("UnsupportedVersion: {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("ZeroWordCount at word {0}")]
    ZeroWordCount(usize),
    #[error("TruncatedInstruction at word {offset}: declares {declared} words, {remaining} remain")]
    TruncatedInstruction {
        offset: usize,
        declared: usize,
        remaining: usize,
    },
    #[error("DuplicateEntryPointName: {0:?}")]
    DuplicateEntryPointName(String),
    #[error("DuplicateBinding: set {0} binding {1}")]
    DuplicateBinding(u32, u32),
    #[error("MalformedInstruction: opcode {opcode}: {reason}")]
    MalformedInstruction { opcode: u16, reason: &'static str },
}

/// Fields of the five-word module header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: (u8, u8),
    pub generator: u32,
    pub bound: u32,
}

pub fn parse_header(bytes: &[u8]) -> Result<Header, ReflectError> {
    if bytes.len() < 20 {
        return Err(ReflectError::TooShort(bytes.len()));
    }
    if bytes.len() % 4 != 0 {
        return Err(ReflectError::Misaligned(bytes.len()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap());
    header_from_words(&[word(0), word(1), word(2), word(3), word(4)])
}

fn header_from_words(w: &[u32]) -> Result<Header, ReflectError> {
    if w[0] != consts::MAGIC {
        return Err(ReflectError::BadMagic(w[0]));
    }
    if w[4] != 0 {
        return Err(ReflectError::BadSchema(w[4]));
    }
    let major = ((w[1] >> 16) & 0xff) as u8;
    let minor = ((w[1] >> 8) & 0xff) as u8;
    if major < 1 {
        return Err(ReflectError::UnsupportedVersion(major, minor));
    }
    Ok(Header {
        version: (major, minor),
        generator: w[2],
        bound: w[3],
    })
}

/// A SPIR-V binary with a validated header and its content hash.
#[derive(Clone, PartialEq, Eq)]
pub struct SpirvModule {
    words: Vec<u32>,
    hash: ContentHash,
}

impl fmt::Debug for SpirvModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpirvModule")
            .field("byte_len", &self.byte_len())
            .field("content_hash", &self.hash)
            .finish()
    }
}

impl SpirvModule {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ReflectError> {
        parse_header(bytes)?;
        let words = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            words,
            hash: hash_module(bytes),
        })
    }

    pub fn from_words(words: Vec<u32>) -> Result<Self, ReflectError> {
        if words.len() < consts::HEADER_WORDS {
            return Err(ReflectError::TooShort(words.len() * 4));
        }
        header_from_words(&words[..consts::HEADER_WORDS])?;
        let hash = hash_module(&words_to_bytes(&words));
        Ok(Self { words, hash })
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn byte_len(&self) -> usize {
        self.words.len() * 4
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        words_to_bytes(&self.words)
    }

    pub fn content_hash(&self) -> ContentHash {
        self.hash
    }

    pub fn header(&self) -> Header {
        header_from_words(&self.words[..consts::HEADER_WORDS]).expect("validated at construction")
    }

    /// Walks the instruction stream after the header.
    pub fn instructions(&self) -> Instructions<'_> {
        Instructions {
            words: &self.words,
            pos: consts::HEADER_WORDS,
        }
    }
}

fn words_to_bytes(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

/// One instruction: its opcode, the word offset where it starts, and its
/// operand words (everything after the leading opcode/word-count word).
#[derive(Debug, Clone, Copy)]
pub struct Instruction<'a> {
    pub opcode: u16,
    pub offset: usize,
    pub operands: &'a [u32],
}

impl<'a> Instruction<'a> {
    pub fn operand(&self, i: usize) -> Result<u32, ReflectError> {
        self.operands
            .get(i)
            .copied()
            .ok_or(ReflectError::MalformedInstruction {
                opcode: self.opcode,
                reason: "missing operand",
            })
    }
}

pub struct Instructions<'a> {
    words: &'a [u32],
    pos: usize,
}

impl<'a> Iterator for Instructions<'a> {
    type Item = Result<Instruction<'a>, ReflectError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.words.len() {
            return None;
        }
        let first = self.words[self.pos];
        let count = (first >> 16) as usize;
        let opcode = (first & 0xffff) as u16;
        let offset = self.pos;
        if count == 0 {
            self.pos = self.words.len();
            return Some(Err(ReflectError::ZeroWordCount(offset)));
        }
        let remaining = self.words.len() - offset;
        if count > remaining {
            self.pos = self.words.len();
            return Some(Err(ReflectError::TruncatedInstruction {
                offset,
                declared: count,
                remaining,
            }));
        }
        self.pos += count;
        Some(Ok(Instruction {
            opcode,
            offset,
            operands: &self.words[offset + 1..offset + count],
        }))
    }
}

/// Decodes a nul-terminated UTF-8 literal string packed into words.
/// Returns the string and the number of words it occupied.
pub fn decode_literal_string(words: &[u32]) -> Option<(String, usize)> {
    let mut bytes = Vec::new();
    for (i, w) in words.iter().enumerate() {
        for b in w.to_le_bytes() {
            if b == 0 {
                return String::from_utf8(bytes).ok().map(|s| (s, i + 1));
            }
            bytes.push(b);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_bytes(magic: u32, version: u32, schema: u32) -> Vec<u8> {
        [magic, version, 0, 1, schema]
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .collect()
    }

    #[test]
    fn header_version_one_zero() {
        let h = parse_header(&header_bytes(MAGIC_LE, 0x0001_0000, 0)).unwrap();
        assert_eq!(h.version, (1, 0));
        assert_eq!(h.bound, 1);
    }

    const MAGIC_LE: u32 = consts::MAGIC;

    #[test]
    fn header_errors() {
        assert_eq!(parse_header(&[0u8; 19]), Err(ReflectError::TooShort(19)));
        assert_eq!(parse_header(&[0u8; 20]), Err(ReflectError::BadMagic(0)));
        assert_eq!(parse_header(&[0u8; 22]), Err(ReflectError::Misaligned(22)));
        assert_eq!(
            parse_header(&header_bytes(MAGIC_LE, 0x0001_0000, 7)),
            Err(ReflectError::BadSchema(7))
        );
        assert_eq!(
            parse_header(&header_bytes(MAGIC_LE, 0x0000_0900, 0)),
            Err(ReflectError::UnsupportedVersion(0, 9))
        );
    }

    #[test]
    fn big_endian_module_is_bad_magic() {
        let mut b = header_bytes(MAGIC_LE, 0x0001_0000, 0);
        b[..4].copy_from_slice(&consts::MAGIC.to_be_bytes());
        assert!(matches!(parse_header(&b), Err(ReflectError::BadMagic(_))));
    }

    #[test]
    fn newer_versions_are_recorded() {
        let h = parse_header(&header_bytes(MAGIC_LE, 0x0001_0600, 0)).unwrap();
        assert_eq!(h.version, (1, 6));
    }

    #[test]
    fn empty_hash_vector() {
        assert_eq!(
            hash_module(&[]).to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn hash_is_deterministic_and_sensitive() {
        let a = header_bytes(MAGIC_LE, 0x0001_0000, 0);
        let mut b = a.clone();
        b[12] ^= 1;
        assert_eq!(hash_module(&a), hash_module(&a));
        assert_ne!(hash_module(&a), hash_module(&b));
    }

    #[test]
    fn literal_string_padding() {
        // "main" fills one word exactly, so the terminator needs a second word.
        let words = [u32::from_le_bytes(*b"main"), 0];
        assert_eq!(decode_literal_string(&words), Some(("main".into(), 2)));
        let words = [u32::from_le_bytes(*b"ab\0\0")];
        assert_eq!(decode_literal_string(&words), Some(("ab".into(), 1)));
        assert_eq!(decode_literal_string(&[u32::from_le_bytes(*b"abcd")]), None);
    }

    #[test]
    fn hex_roundtrip() {
        let h = hash_module(b"x");
        assert_eq!(ContentHash::from_hex(&h.to_hex()), Some(h));
        assert_eq!(ContentHash::from_hex("zz"), None);
    }
}
