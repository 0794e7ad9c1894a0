use std::time::Duration;

use crate::client::{ClientError, CHUNK_BYTES};
use crate::error::{name_of, Registered};
use crate::session::SessionError;
use crate::spirv::{hash_module, ContentHash};
use crate::wire::transport::{call, TcpTransport, Transport};
use crate::wire::{BindingEntry, ClientKind, Message, SessionId};

/// A bare protocol connection bound to one server session, without the
/// client runtime's mirror or heartbeat. Benchmarks use it so that the
/// measured section contains nothing but protocol traffic.
pub struct Link {
    transport: Box<dyn Transport>,
    session: SessionId,
    next_request: u64,
    timeout: Duration,
}

impl Link {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, ClientError> {
        let t = TcpTransport::connect(addr, timeout)?;
        Self::open(Box::new(t), timeout)
    }

    /// Sends HELLO over `transport` and binds to the new session.
    pub fn open(transport: Box<dyn Transport>, timeout: Duration) -> Result<Self, ClientError> {
        let mut link = Link {
            transport,
            session: SessionId::ZERO,
            next_request: 1,
            timeout,
        };
        link.new_session()?;
        Ok(link)
    }

    /// Sends HELLO asking for an existing session. Fails with
    /// UnknownSession if the server does not hold it.
    pub fn resume(transport: Box<dyn Transport>, session: SessionId, timeout: Duration) -> Result<Self, ClientError> {
        let mut link = Link {
            transport,
            session,
            next_request: 1,
            timeout,
        };
        let reply = link.call(hello())?;
        let Message::HelloAck { session_id, .. } = reply else {
            return Err(unexpected(&reply));
        };
        if session_id != session {
            link.session = session_id;
            let _ = link.close_session();
            return Err(SessionError::UnknownSession(session).into());
        }
        Ok(link)
    }

    pub fn session(&self) -> SessionId {
        self.session
    }

    /// Opens a fresh session on the same connection.
    pub fn new_session(&mut self) -> Result<SessionId, ClientError> {
        self.session = SessionId::ZERO;
        let reply = self.call(hello())?;
        let Message::HelloAck { session_id, .. } = reply else {
            return Err(unexpected(&reply));
        };
        self.session = session_id;
        Ok(session_id)
    }

    pub fn call(&mut self, msg: Message) -> Result<Message, ClientError> {
        let id = self.next_request;
        self.next_request += 1;
        let (_, reply) = call(self.transport.as_mut(), &msg, self.session, id, 0, self.timeout)?;
        match reply {
            Message::Error { code, message } => Err(ClientError::Remote {
                code,
                name: name_of(code),
                message,
            }),
            reply => Ok(reply),
        }
    }

    pub fn load_module(&mut self, bytes: &[u8]) -> Result<ContentHash, ClientError> {
        let hash = hash_module(bytes);
        self.call(Message::LoadModule {
            hash: hash.0,
            module: bytes.to_vec(),
        })?;
        Ok(hash)
    }

    pub fn create_pipeline(&mut self, hash: ContentHash, entry: &str) -> Result<u64, ClientError> {
        match self.call(Message::CreatePipeline {
            hash: hash.0,
            entry: entry.to_string(),
        })? {
            Message::PipelineAck { pipeline_id } => Ok(pipeline_id),
            m => Err(unexpected(&m)),
        }
    }

    pub fn alloc(&mut self, buffer_id: u64, size: u64) -> Result<(), ClientError> {
        self.call(Message::AllocBuffer { buffer_id, size }).map(drop)
    }

    pub fn write(&mut self, buffer_id: u64, offset: u64, data: &[u8]) -> Result<(), ClientError> {
        for (i, chunk) in data.chunks(CHUNK_BYTES).enumerate() {
            self.call(Message::WriteBuffer {
                buffer_id,
                offset: offset + (i * CHUNK_BYTES) as u64,
                data: chunk.to_vec(),
            })?;
        }
        Ok(())
    }

    pub fn read(&mut self, buffer_id: u64, offset: u64, len: u64) -> Result<Vec<u8>, ClientError> {
        let mut out = Vec::with_capacity(len as usize);
        while (out.len() as u64) < len {
            let n = (len - out.len() as u64).min(CHUNK_BYTES as u64) as u32;
            match self.call(Message::ReadBuffer {
                buffer_id,
                offset: offset + out.len() as u64,
                len: n,
            })? {
                Message::BufferData { data } => out.extend_from_slice(&data),
                m => return Err(unexpected(&m)),
            }
        }
        Ok(out)
    }

    pub fn dispatch(&mut self, pipeline_id: u64, groups: [u32; 3], bindings: &[BindingEntry]) -> Result<(), ClientError> {
        match self.call(Message::Dispatch {
            pipeline_id,
            groups,
            bindings: bindings.to_vec(),
        })? {
            Message::DispatchAck { .. } => Ok(()),
            m => Err(unexpected(&m)),
        }
    }

    pub fn export(&mut self) -> Result<Vec<u8>, ClientError> {
        match self.call(Message::ExportSession)? {
            Message::SessionSnapshot { snapshot } => Ok(snapshot),
            m => Err(unexpected(&m)),
        }
    }

    /// Imports into the bound session. Returns the server-side import time.
    pub fn import(&mut self, snapshot: Vec<u8>) -> Result<u64, ClientError> {
        match self.call(Message::ImportSession { snapshot })? {
            Message::Ack { elapsed_ns, .. } => Ok(elapsed_ns),
            m => Err(unexpected(&m)),
        }
    }

    pub fn close_session(&mut self) -> Result<(), ClientError> {
        self.call(Message::CloseSession).map(drop)
    }

    pub fn transport(&mut self) -> &mut dyn Transport {
        self.transport.as_mut()
    }

    pub fn next_request_id(&mut self) -> u64 {
        self.next_request += 1;
        self.next_request - 1
    }
}

fn hello() -> Message {
    Message::Hello {
        client_kind: ClientKind::Ue,
        spirv_min: 0x0001_0000,
        spirv_max: 0x0001_0600,
        backend: String::new(),
    }
}

fn unexpected(m: &Message) -> ClientError {
    let e = SessionError::UnexpectedMessage(m.msg_type());
    ClientError::Remote {
        code: e.code(),
        name: e.name(),
        message: e.to_string(),
    }
}
