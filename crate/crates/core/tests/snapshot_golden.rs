//! Snapshot byte format: golden files, a hand-assembled empty snapshot, and
//! the order in which a bad snapshot is diagnosed.
//!
//! Set `GIRP_BLESS=1` to rewrite `tests/golden/snapshot/*.hex`.

use std::path::PathBuf;

use girp::executor::InterpreterExecutor;
use girp::fixtures;
use girp::session::{Session, SessionError, SessionSnapshot};
use girp::wire::{BindingEntry, SessionId};
use sha2::{Digest, Sha256};

fn golden(name: &str, bytes: &[u8]) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/snapshot").join(name);
    if std::env::var_os("GIRP_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, hex::encode(bytes) + "\n").unwrap();
    }
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e} (run with GIRP_BLESS=1)", path.display()));
    assert_eq!(hex::encode(bytes), text.trim(), "{} differs", path.display());
}

fn session(id: u8) -> Session {
    Session::new(SessionId([id; 16]), Box::new(InterpreterExecutor::default()))
}

/// fill kernel, one pipeline, one 8x8 workgroup over a 512-element buffer.
fn filled_session() -> Session {
    let mut s = session(0x33);
    let m = fixtures::fill();
    s.load_module(m.content_hash(), &m.to_bytes()).unwrap();
    let pid = s.create_pipeline(m.content_hash(), "main").unwrap().id;
    s.alloc_buffer(1, 2048).unwrap();
    s.alloc_buffer(2, 8).unwrap();
    s.write_buffer(2, 0, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
    s.dispatch(pid, [1, 1, 1], &[BindingEntry { set: 0, binding: 0, buffer_id: 1 }])
        .unwrap();
    s
}

#[test]
fn empty_snapshot_matches_hand_built_bytes() {
    let mut expect = 1u16.to_le_bytes().to_vec();
    expect.extend([0x33; 16]);
    expect.extend(0u64.to_le_bytes());
    for _ in 0..3 {
        expect.extend(0u32.to_le_bytes());
    }
    let digest = Sha256::digest(&expect);
    expect.extend(digest);

    let bytes = session(0x33).export();
    assert_eq!(bytes, expect);
    golden("empty.hex", &bytes);
}

#[test]
fn populated_snapshot_matches_golden() {
    let bytes = filled_session().export();
    golden("fill.hex", &bytes);
    let snap = SessionSnapshot::from_bytes(&bytes).unwrap();
    assert_eq!(snap.modules.len(), 1);
    assert_eq!(snap.pipelines.len(), 1);
    assert_eq!(snap.pipelines[0].0, 1);
    let fb = &snap.buffers[0].1;
    assert_eq!(fb.len(), 2048);
    for (i, w) in fb.chunks(4).enumerate() {
        let expect = if i % 64 < 8 { fixtures::FILL_VALUE } else { 0 };
        assert_eq!(w, expect.to_le_bytes(), "element {i}");
    }
    assert_eq!(snap.buffers[1], (2, vec![1, 2, 3, 4, 5, 6, 7, 8]));
}

#[test]
fn digest_is_checked_before_version() {
    let snap = filled_session().snapshot();
    let mut future = snap.to_bytes_with_version(2);
    assert_eq!(
        SessionSnapshot::from_bytes(&future),
        Err(SessionError::FormatVersionUnsupported(2))
    );
    future[0] = 3;
    assert_eq!(SessionSnapshot::from_bytes(&future), Err(SessionError::DigestMismatch));
}

#[test]
fn every_single_bit_flip_is_rejected() {
    let bytes = filled_session().export();
    for i in 0..bytes.len() {
        for bit in [0x01u8, 0x80] {
            let mut bad = bytes.clone();
            bad[i] ^= bit;
            assert_eq!(
                SessionSnapshot::from_bytes(&bad),
                Err(SessionError::DigestMismatch),
                "byte {i} bit {bit:#x}"
            );
        }
    }
}

#[test]
fn truncation_is_rejected() {
    let bytes = filled_session().export();
    for n in [0, 1, 31, 32, bytes.len() - 1] {
        assert!(SessionSnapshot::from_bytes(&bytes[..n]).is_err(), "{n} bytes accepted");
    }
}
