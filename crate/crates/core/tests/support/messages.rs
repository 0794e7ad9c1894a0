//! Message generators and the golden frame set, shared by the codec tests
//! and the acceptance suite.

#![allow(dead_code)]

use std::path::PathBuf;

use girp::wire::{BindingEntry, ClientKind, Message, MsgType, SessionId};
use proptest::collection::vec;
use proptest::prelude::*;

/// Session id and request numbering used for every golden frame.
pub const GOLDEN_SESSION: SessionId = SessionId([0x5A; 16]);

fn bytes(max: usize) -> impl Strategy<Value = Vec<u8>> {
    vec(any::<u8>(), 0..max)
}

fn text() -> impl Strategy<Value = String> {
    "\\PC{0,40}"
}

pub fn strategy_for(t: MsgType) -> BoxedStrategy<Message> {
    use Message as M;
    match t {
        MsgType::Hello => (any::<bool>(), any::<u32>(), any::<u32>(), text())
            .prop_map(|(server, spirv_min, spirv_max, backend)| M::Hello {
                client_kind: if server { ClientKind::Server } else { ClientKind::Ue },
                spirv_min,
                spirv_max,
                backend,
            })
            .boxed(),
        MsgType::HelloAck => (any::<[u8; 16]>(), text())
            .prop_map(|(s, capabilities)| M::HelloAck {
                session_id: SessionId(s),
                capabilities,
            })
            .boxed(),
        MsgType::LoadModule => (any::<[u8; 32]>(), bytes(512))
            .prop_map(|(hash, module)| M::LoadModule { hash, module })
            .boxed(),
        MsgType::ModuleAck => (any::<[u8; 32]>(), any::<bool>())
            .prop_map(|(hash, already_cached)| M::ModuleAck { hash, already_cached })
            .boxed(),
        MsgType::CreatePipeline => (any::<[u8; 32]>(), text())
            .prop_map(|(hash, entry)| M::CreatePipeline { hash, entry })
            .boxed(),
        MsgType::PipelineAck => any::<u64>().prop_map(|pipeline_id| M::PipelineAck { pipeline_id }).boxed(),
        MsgType::AllocBuffer => (any::<u64>(), any::<u64>())
            .prop_map(|(buffer_id, size)| M::AllocBuffer { buffer_id, size })
            .boxed(),
        MsgType::WriteBuffer => (any::<u64>(), any::<u64>(), bytes(1024))
            .prop_map(|(buffer_id, offset, data)| M::WriteBuffer { buffer_id, offset, data })
            .boxed(),
        MsgType::Dispatch => (
            any::<u64>(),
            any::<[u32; 3]>(),
            vec((any::<u32>(), any::<u32>(), any::<u64>()), 0..16),
        )
            .prop_map(|(pipeline_id, groups, b)| M::Dispatch {
                pipeline_id,
                groups,
                bindings: b
                    .into_iter()
                    .map(|(set, binding, buffer_id)| BindingEntry { set, binding, buffer_id })
                    .collect(),
            })
            .boxed(),
        MsgType::DispatchAck => any::<[u64; 3]>()
            .prop_map(|[prepare_ns, execute_ns, readback_ns]| M::DispatchAck {
                prepare_ns,
                execute_ns,
                readback_ns,
            })
            .boxed(),
        MsgType::ReadBuffer => (any::<u64>(), any::<u64>(), any::<u32>())
            .prop_map(|(buffer_id, offset, len)| M::ReadBuffer { buffer_id, offset, len })
            .boxed(),
        MsgType::BufferData => bytes(1024).prop_map(|data| M::BufferData { data }).boxed(),
        MsgType::ExportSession => Just(M::ExportSession).boxed(),
        MsgType::SessionSnapshot => bytes(1024).prop_map(|snapshot| M::SessionSnapshot { snapshot }).boxed(),
        MsgType::ImportSession => bytes(1024).prop_map(|snapshot| M::ImportSession { snapshot }).boxed(),
        MsgType::Ping => any::<u64>().prop_map(|token| M::Ping { token }).boxed(),
        MsgType::Pong => any::<u64>().prop_map(|token| M::Pong { token }).boxed(),
        MsgType::Error => (any::<u16>(), text())
            .prop_map(|(code, message)| M::Error { code, message })
            .boxed(),
        MsgType::Ack => (any::<u64>(), any::<u64>())
            .prop_map(|(value, elapsed_ns)| M::Ack { value, elapsed_ns })
            .boxed(),
        MsgType::CloseSession => Just(M::CloseSession).boxed(),
    }
}

/// One fixed instance of each type, with distinctive field values so that a
/// swapped field shows up in the diff.
pub fn golden_messages() -> Vec<Message> {
    use Message as M;
    let hash: [u8; 32] = std::array::from_fn(|i| i as u8);
    vec![
        M::Hello {
            client_kind: ClientKind::Ue,
            spirv_min: 0x0001_0000,
            spirv_max: 0x0001_0600,
            backend: "interp".into(),
        },
        M::HelloAck {
            session_id: SessionId([0xAB; 16]),
            capabilities: "backend=interp".into(),
        },
        M::LoadModule {
            hash,
            module: vec![0x03, 0x02, 0x23, 0x07],
        },
        M::ModuleAck { hash, already_cached: true },
        M::CreatePipeline { hash, entry: "main".into() },
        M::PipelineAck { pipeline_id: 0x0102_0304_0506_0708 },
        M::AllocBuffer { buffer_id: 1, size: 262_144 },
        M::WriteBuffer {
            buffer_id: 2,
            offset: 16,
            data: vec![1, 2, 3],
        },
        M::Dispatch {
            pipeline_id: 1,
            groups: [1024, 1, 1],
            bindings: vec![
                BindingEntry { set: 0, binding: 0, buffer_id: 1 },
                BindingEntry { set: 0, binding: 1, buffer_id: 2 },
            ],
        },
        M::DispatchAck {
            prepare_ns: 10,
            execute_ns: 20,
            readback_ns: 30,
        },
        M::ReadBuffer {
            buffer_id: 2,
            offset: 0,
            len: 262_144,
        },
        M::BufferData { data: vec![0xFF; 5] },
        M::ExportSession,
        M::SessionSnapshot { snapshot: vec![1, 0] },
        M::ImportSession { snapshot: vec![1, 0] },
        M::Ping { token: 0 },
        M::Pong { token: u64::MAX },
        M::Error {
            code: 0x42,
            message: "UnknownBuffer: 9".into(),
        },
        M::Ack { value: 7, elapsed_ns: 1500 },
        M::CloseSession,
    ]
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/wire")
}

pub fn to_hex(b: &[u8]) -> String {
    let mut s = String::new();
    for (i, chunk) in b.chunks(16).enumerate() {
        if i > 0 {
            s.push('\n');
        }
        s.extend(chunk.iter().map(|x| format!("{x:02x}")));
    }
    s.push('\n');
    s
}

pub fn from_hex(s: &str) -> Vec<u8> {
    let digits: Vec<u8> = s.bytes().filter(u8::is_ascii_hexdigit).collect();
    digits
        .chunks(2)
        .map(|p| u8::from_str_radix(std::str::from_utf8(p).unwrap(), 16).unwrap())
        .collect()
}

/// Golden file path for a message type.
pub fn golden_path(t: MsgType) -> PathBuf {
    golden_dir().join(format!("{}.hex", t.name().to_ascii_lowercase()))
}
