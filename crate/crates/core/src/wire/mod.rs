//! Framing and typed messages for client-server and server-server traffic.
//!
//! Every frame is a fixed 38-byte header followed by the payload. All
//! integers are little-endian.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "GIRP"
//!      4     1  version (1)
//!      5     1  msg_type
//!      6     2  flags (bit 0: DEGRADED)
//!      8     2  reserved (0)
//!     10    16  session_id
//!     26     8  request_id
//!     34     4  payload_len
//!     38     n  payload
//! ```

mod codec;
pub mod rtt;
pub mod transport;

use std::fmt;

pub use codec::{decode, decode_payload, encode, encode_payload, FrameHeader};

pub const MAGIC: [u8; 4] = *b"GIRP";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 38;
/// Largest payload a frame may carry (64 MiB).
pub const MAX_PAYLOAD: u32 = 64 << 20;

/// Marks data produced while the client was cut off from its server.
pub const FLAG_DEGRADED: u16 = 0x0001;
const FLAG_MASK: u16 = FLAG_DEGRADED;

#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SessionId(pub [u8; 16]);

impl SessionId {
    pub const ZERO: SessionId = SessionId([0; 16]);

    pub fn random() -> Self {
        let mut id = [0u8; 16];
        rand::Rng::fill(&mut rand::thread_rng(), &mut id[..]);
        // The all-zero id means "no session" in HELLO.
        if id == [0; 16] {
            id[15] = 1;
        }
        SessionId(id)
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; 16]
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut id = [0u8; 16];
        hex::decode_to_slice(s, &mut id).ok()?;
        Some(SessionId(id))
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionId({})", self.to_hex())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientKind {
    Ue = 0,
    Server = 1,
}

/// A (set, binding) to buffer association inside DISPATCH.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BindingEntry {
    pub set: u32,
    pub binding: u32,
    pub buffer_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello {
        client_kind: ClientKind,
        spirv_min: u32,
        spirv_max: u32,
        backend: String,
    },
    HelloAck {
        session_id: SessionId,
        capabilities: String,
    },
    LoadModule {
        hash: [u8; 32],
        module: Vec<u8>,
    },
    ModuleAck {
        hash: [u8; 32],
        already_cached: bool,
    },
    CreatePipeline {
        hash: [u8; 32],
        entry: String,
    },
    PipelineAck {
        pipeline_id: u64,
    },
    AllocBuffer {
        buffer_id: u64,
        size: u64,
    },
    WriteBuffer {
        buffer_id: u64,
        offset: u64,
        data: Vec<u8>,
    },
    Dispatch {
        pipeline_id: u64,
        groups: [u32; 3],
        bindings: Vec<BindingEntry>,
    },
    DispatchAck {
        prepare_ns: u64,
        execute_ns: u64,
        readback_ns: u64,
    },
    ReadBuffer {
        buffer_id: u64,
        offset: u64,
        len: u32,
    },
    BufferData {
        data: Vec<u8>,
    },
    ExportSession,
    SessionSnapshot {
        snapshot: Vec<u8>,
    },
    ImportSession {
        snapshot: Vec<u8>,
    },
    Ping {
        token: u64,
    },
    Pong {
        token: u64,
    },
    Error {
        code: u16,
        message: String,
    },
    /// Generic acknowledgement: `value` is the allocated buffer id, the
    /// number of bytes written, or the new epoch, depending on the request.
    Ack {
        value: u64,
        elapsed_ns: u64,
    },
    CloseSession,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    HelloAck = 0x02,
    LoadModule = 0x03,
    ModuleAck = 0x04,
    CreatePipeline = 0x05,
    PipelineAck = 0x06,
    AllocBuffer = 0x07,
    WriteBuffer = 0x08,
    Dispatch = 0x09,
    DispatchAck = 0x0A,
    ReadBuffer = 0x0B,
    BufferData = 0x0C,
    ExportSession = 0x0D,
    SessionSnapshot = 0x0E,
    ImportSession = 0x0F,
    Ping = 0x10,
    Pong = 0x11,
    Error = 0x12,
    Ack = 0x13,
    CloseSession = 0x14,
}

impl MsgType {
    pub const ALL: [MsgType; 20] = [
        Self::Hello,
        Self::HelloAck,
        Self::LoadModule,
        Self::ModuleAck,
        Self::CreatePipeline,
        Self::PipelineAck,
        Self::AllocBuffer,
        Self::WriteBuffer,
        Self::Dispatch,
        Self::DispatchAck,
        Self::ReadBuffer,
        Self::BufferData,
        Self::ExportSession,
        Self::SessionSnapshot,
        Self::ImportSession,
        Self::Ping,
        Self::Pong,
        Self::Error,
        Self::Ack,
        Self::CloseSession,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| *t as u8 == b)
    }

    /// The one legal success response to a request type, or `None` if the
    /// type is itself a response. ERROR may always replace it.
    pub fn response(self) -> Option<MsgType> {
        use MsgType::*;
        Some(match self {
            Hello => HelloAck,
            LoadModule => ModuleAck,
            CreatePipeline => PipelineAck,
            AllocBuffer | WriteBuffer | ImportSession | CloseSession => Ack,
            Dispatch => DispatchAck,
            ReadBuffer => BufferData,
            ExportSession => SessionSnapshot,
            Ping => Pong,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        use MsgType::*;
        match self {
            Hello => "HELLO",
            HelloAck => "HELLO_ACK",
            LoadModule => "LOAD_MODULE",
            ModuleAck => "MODULE_ACK",
            CreatePipeline => "CREATE_PIPELINE",
            PipelineAck => "PIPELINE_ACK",
            AllocBuffer => "ALLOC_BUFFER",
            WriteBuffer => "WRITE_BUFFER",
            Dispatch => "DISPATCH",
            DispatchAck => "DISPATCH_ACK",
            ReadBuffer => "READ_BUFFER",
            BufferData => "BUFFER_DATA",
            ExportSession => "EXPORT_SESSION",
            SessionSnapshot => "SESSION_SNAPSHOT",
            ImportSession => "IMPORT_SESSION",
            Ping => "PING",
            Pong => "PONG",
            Error => "ERROR",
            Ack => "ACK",
            CloseSession => "CLOSE_SESSION",
        }
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello { .. } => MsgType::Hello,
            Message::HelloAck { .. } => MsgType::HelloAck,
            Message::LoadModule { .. } => MsgType::LoadModule,
            Message::ModuleAck { .. } => MsgType::ModuleAck,
            Message::CreatePipeline { .. } => MsgType::CreatePipeline,
            Message::PipelineAck { .. } => MsgType::PipelineAck,
            Message::AllocBuffer { .. } => MsgType::AllocBuffer,
            Message::WriteBuffer { .. } => MsgType::WriteBuffer,
            Message::Dispatch { .. } => MsgType::Dispatch,
            Message::DispatchAck { .. } => MsgType::DispatchAck,
            Message::ReadBuffer { .. } => MsgType::ReadBuffer,
            Message::BufferData { .. } => MsgType::BufferData,
            Message::ExportSession => MsgType::ExportSession,
            Message::SessionSnapshot { .. } => MsgType::SessionSnapshot,
            Message::ImportSession { .. } => MsgType::ImportSession,
            Message::Ping { .. } => MsgType::Ping,
            Message::Pong { .. } => MsgType::Pong,
            Message::Error { .. } => MsgType::Error,
            Message::Ack { .. } => MsgType::Ack,
            Message::CloseSession => MsgType::CloseSession,
        }
    }

    /// LOAD_MODULE for `module`, with its content hash filled in.
    pub fn load_module(module: &crate::spirv::SpirvModule) -> Self {
        Message::LoadModule {
            hash: module.content_hash().0,
            module: module.to_bytes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("BadMagic: {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("BadVersion: {0}")]
    BadVersion(u8),
    #[error("UnknownMsgType: 0x{0:02x}")]
    UnknownMsgType(u8),
    #[error("Truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: u64, available: u64 },
    #[error("TrailingBytes: {0} unconsumed")]
    TrailingBytes(u64),
    #[error("Oversize: payload of {0} bytes exceeds the frame cap")]
    Oversize(u64),
    #[error("InvalidField: {0}")]
    InvalidField(&'static str),
}
