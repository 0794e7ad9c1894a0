//! Random request scripts over the fixture kernels, and helpers that run
//! them on one server or split across two with a migration in between.
//!
//! Shared by the core migration tests and the acceptance suite.

#![allow(dead_code)]

use girp::bench::{Link, Target};
use girp::client::ClientError;
use girp::fixtures;
use girp::interp::InterpLimits;
use girp::session::SessionSnapshot;
use girp::spirv::SpirvModule;
use girp::wire::{BindingEntry, Message};
use proptest::collection::vec;
use proptest::prelude::*;

pub fn kernels() -> [SpirvModule; 3] {
    [fixtures::multiply(), fixtures::saxpy(), fixtures::fill()]
}

fn request() -> impl Strategy<Value = Message> {
    let hashes = kernels().map(|k| k.content_hash().0);
    let loads = kernels().map(|k| Message::load_module(&k));
    prop_oneof![
        2 => (0..3usize).prop_map(move |k| loads[k].clone()),
        2 => (0..3usize).prop_map(move |k| Message::CreatePipeline { hash: hashes[k], entry: "main".into() }),
        2 => (1..5u64, 1..5u64).prop_map(|(id, blocks)| Message::AllocBuffer { buffer_id: id, size: blocks * 256 }),
        3 => (1..5u64, 0..64u64, vec(any::<u8>(), 0..512)).prop_map(|(id, word, data)| Message::WriteBuffer {
            buffer_id: id,
            offset: word * 4,
            data,
        }),
        4 => (1..5u64, 1..4u32, 1..3u32, 1..5u64, 1..5u64).prop_map(|(p, gx, gy, b0, b1)| Message::Dispatch {
            pipeline_id: p,
            groups: [gx, gy, 1],
            bindings: vec![
                BindingEntry { set: 0, binding: 0, buffer_id: b0 },
                BindingEntry { set: 0, binding: 1, buffer_id: b1 },
            ],
        }),
        2 => (1..5u64, 0..256u64, 0..512u32).prop_map(|(id, offset, len)| Message::ReadBuffer {
            buffer_id: id,
            offset,
            len,
        }),
    ]
}

/// Loads every kernel (pipelines 1, 2, 3 in `kernels()` order) and
/// allocates buffers 1 to 4 with random sizes, so that the random body
/// has something to dispatch against.
fn prelude() -> impl Strategy<Value = Vec<Message>> {
    vec(1..5u64, 4).prop_map(|blocks| {
        let mut out = Vec::new();
        for k in kernels() {
            out.push(Message::load_module(&k));
            out.push(Message::CreatePipeline {
                hash: k.content_hash().0,
                entry: "main".into(),
            });
        }
        for (i, b) in blocks.into_iter().enumerate() {
            out.push(Message::AllocBuffer {
                buffer_id: i as u64 + 1,
                size: b * 256,
            });
        }
        out
    })
}

/// A script and a split point within it (0 ..= len).
pub fn script_and_split() -> impl Strategy<Value = (Vec<Message>, usize)> {
    (prelude(), vec(request(), 1..24)).prop_map(|(mut p, body)| {
        p.extend(body);
        p
    })
    .prop_flat_map(|s| {
        let n = s.len();
        (Just(s), 0..=n)
    })
}

pub fn local_link() -> Link {
    Target::Local(InterpLimits::default()).link().expect("in-process server")
}

/// Outcome of one request with timing fields zeroed, so that runs on
/// different servers compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Ok(Message),
    Err(String),
}

fn outcome(r: Result<Message, ClientError>) -> Outcome {
    match r {
        Ok(Message::Ack { value, .. }) => Outcome::Ok(Message::Ack { value, elapsed_ns: 0 }),
        Ok(Message::DispatchAck { .. }) => Outcome::Ok(Message::DispatchAck {
            prepare_ns: 0,
            execute_ns: 0,
            readback_ns: 0,
        }),
        Ok(m) => Outcome::Ok(m),
        Err(ClientError::Remote { name, .. }) => Outcome::Err(name.to_string()),
        Err(e) => panic!("transport failure: {e}"),
    }
}

pub fn run_on(link: &mut Link, script: &[Message]) -> Vec<Outcome> {
    script.iter().map(|m| outcome(link.call(m.clone()))).collect()
}

/// Final state without id and epoch, which legitimately differ.
pub fn state(link: &mut Link) -> SessionSnapshot {
    let mut s = SessionSnapshot::from_bytes(&link.export().unwrap()).unwrap();
    s.session_id = Default::default();
    s.epoch = 0;
    s
}

pub struct SplitRun {
    pub outcomes: Vec<Outcome>,
    pub state: SessionSnapshot,
    pub snapshot: Vec<u8>,
}

pub fn run_whole(script: &[Message]) -> (Vec<Outcome>, SessionSnapshot) {
    let mut a = local_link();
    let outcomes = run_on(&mut a, script);
    (outcomes, state(&mut a))
}

/// Runs `script[..split]` on one server, moves the session to a second
/// server and runs the rest there.
pub fn run_split(script: &[Message], split: usize) -> SplitRun {
    let mut a = local_link();
    let mut b = local_link();
    let mut outcomes = run_on(&mut a, &script[..split]);
    let snapshot = a.export().unwrap();
    b.import(snapshot.clone()).unwrap();
    a.close_session().unwrap();
    outcomes.extend(run_on(&mut b, &script[split..]));
    SplitRun {
        outcomes,
        state: state(&mut b),
        snapshot,
    }
}

/// Imports `snapshot` with byte `at` flipped into a fresh session and
/// returns the error name the server answers with.
pub fn import_tampered(snapshot: &[u8], at: usize) -> Option<&'static str> {
    let mut bad = snapshot.to_vec();
    bad[at % snapshot.len()] ^= 0x01;
    let mut c = local_link();
    match c.import(bad) {
        Ok(_) => None,
        Err(ClientError::Remote { name, .. }) => Some(name),
        Err(e) => panic!("transport failure: {e}"),
    }
}
