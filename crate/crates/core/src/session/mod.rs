//! Server-side session state and request handling.
//!
//! A session owns a content-addressed module cache, pipelines, zero-filled
//! buffers and one executor. Every request either succeeds or leaves all of
//! that untouched.

mod server;
pub mod snapshot;

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use crate::error::Registered;
use crate::executor::{Executor, ExecutorError, PipelineHandle};
use crate::spirv::{hash_module, ContentHash, DescriptorSlot, ReflectError, SpirvModule};
use crate::wire::{BindingEntry, Message, MsgType, SessionId};

pub use server::{Server, ServerConfig, ServerHandle};
pub use snapshot::SessionSnapshot;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error("UnexpectedMessage: {0} is not a request")]
    UnexpectedMessage(MsgType),
    #[error("UnknownSession: {0}")]
    UnknownSession(SessionId),
    #[error("UnknownBuffer: {0}")]
    UnknownBuffer(u64),
    #[error("OutOfRange: buffer {buffer_id} has {size} bytes, access {offset}+{len}")]
    OutOfRange {
        buffer_id: u64,
        size: u64,
        offset: u64,
        len: u64,
    },
    #[error("Busy: a request is in flight")]
    Busy,
    #[error("DigestMismatch")]
    DigestMismatch,
    #[error("FormatVersionUnsupported: {0}")]
    FormatVersionUnsupported(u16),
    #[error("BufferExists: {0}")]
    BufferExists(u64),
    #[error("AliasedBuffer: {0}")]
    AliasedBuffer(String),
    #[error("HashMismatch: content hash does not match module bytes")]
    HashMismatch,
    #[error("SnapshotMalformed: {0}")]
    SnapshotMalformed(&'static str),
    #[error("BufferTooLarge: {requested} bytes > {limit}")]
    BufferTooLarge { requested: u64, limit: u64 },
}

impl From<ReflectError> for SessionError {
    fn from(e: ReflectError) -> Self {
        SessionError::Executor(ExecutorError::Reflect(e))
    }
}

impl Registered for SessionError {
    fn code(&self) -> u16 {
        match self {
            SessionError::Executor(e) => e.code(),
            SessionError::UnexpectedMessage(_) => 0x40,
            SessionError::UnknownSession(_) => 0x41,
            SessionError::UnknownBuffer(_) => 0x42,
            SessionError::OutOfRange { .. } => 0x43,
            SessionError::Busy => 0x44,
            SessionError::DigestMismatch => 0x45,
            SessionError::FormatVersionUnsupported(_) => 0x46,
            SessionError::BufferExists(_) => 0x47,
            SessionError::AliasedBuffer(_) => 0x48,
            SessionError::HashMismatch => 0x49,
            SessionError::SnapshotMalformed(_) => 0x4A,
            SessionError::BufferTooLarge { .. } => 0x4B,
        }
    }
}

impl SessionError {
    pub fn to_message(&self) -> Message {
        Message::Error {
            code: self.code(),
            message: self.to_string(),
        }
    }
}

struct Pipeline {
    handle: PipelineHandle,
    /// Id of the same pipeline inside the executor.
    executor_id: u64,
}

pub struct Session {
    id: SessionId,
    epoch: u64,
    modules: BTreeMap<ContentHash, SpirvModule>,
    pipelines: BTreeMap<u64, Pipeline>,
    buffers: BTreeMap<u64, Vec<u8>>,
    next_pipeline: u64,
    executor: Box<dyn Executor>,
    last_export_ns: Option<u64>,
    last_import_ns: Option<u64>,
}

fn elapsed_ns(start: Instant) -> u64 {
    start.elapsed().as_nanos() as u64
}

fn check_range(buffer_id: u64, size: usize, offset: u64, len: u64) -> Result<(), SessionError> {
    let fits = offset.checked_add(len).is_some_and(|end| end <= size as u64);
    if fits {
        Ok(())
    } else {
        Err(SessionError::OutOfRange {
            buffer_id,
            size: size as u64,
            offset,
            len,
        })
    }
}

impl Session {
    pub fn new(id: SessionId, executor: Box<dyn Executor>) -> Self {
        Self {
            id,
            epoch: 0,
            modules: BTreeMap::new(),
            pipelines: BTreeMap::new(),
            buffers: BTreeMap::new(),
            next_pipeline: 1,
            executor,
            last_export_ns: None,
            last_import_ns: None,
        }
    }

    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn module_count(&self) -> usize {
        self.modules.len()
    }

    pub fn pipeline(&self, id: u64) -> Option<&PipelineHandle> {
        self.pipelines.get(&id).map(|p| &p.handle)
    }

    pub fn buffer(&self, id: u64) -> Option<&[u8]> {
        self.buffers.get(&id).map(Vec::as_slice)
    }

    pub fn buffer_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.buffers.keys().copied()
    }

    pub fn last_export_ns(&self) -> Option<u64> {
        self.last_export_ns
    }

    pub fn last_import_ns(&self) -> Option<u64> {
        self.last_import_ns
    }

    pub fn capabilities(&self) -> String {
        self.executor.capabilities().to_string()
    }

    /// Returns whether the module was already cached.
    pub fn load_module(&mut self, hash: ContentHash, bytes: &[u8]) -> Result<bool, SessionError> {
        if hash_module(bytes) != hash {
            return Err(SessionError::HashMismatch);
        }
        if self.modules.contains_key(&hash) {
            return Ok(true);
        }
        let module = SpirvModule::from_bytes(bytes)?;
        self.executor.load(&module)?;
        self.modules.insert(hash, module);
        Ok(false)
    }

    pub fn create_pipeline(&mut self, hash: ContentHash, entry: &str) -> Result<PipelineHandle, SessionError> {
        if !self.modules.contains_key(&hash) {
            return Err(ExecutorError::UnknownModule(hash).into());
        }
        let exec = self.executor.create_pipeline(&hash, entry)?;
        let id = self.next_pipeline;
        self.next_pipeline += 1;
        let handle = PipelineHandle { id, ..exec.clone() };
        self.pipelines.insert(
            id,
            Pipeline {
                handle: handle.clone(),
                executor_id: exec.id,
            },
        );
        Ok(handle)
    }

    pub fn alloc_buffer(&mut self, id: u64, size: u64) -> Result<(), SessionError> {
        if self.buffers.contains_key(&id) {
            return Err(SessionError::BufferExists(id));
        }
        let limit = self.executor.capabilities().max_buffer_bytes;
        if size > limit {
            return Err(SessionError::BufferTooLarge { requested: size, limit });
        }
        self.buffers.insert(id, vec![0; size as usize]);
        Ok(())
    }

    pub fn write_buffer(&mut self, id: u64, offset: u64, data: &[u8]) -> Result<(), SessionError> {
        let buf = self.buffers.get_mut(&id).ok_or(SessionError::UnknownBuffer(id))?;
        check_range(id, buf.len(), offset, data.len() as u64)?;
        buf[offset as usize..offset as usize + data.len()].copy_from_slice(data);
        Ok(())
    }

    pub fn read_buffer(&self, id: u64, offset: u64, len: u64) -> Result<&[u8], SessionError> {
        let buf = self.buffers.get(&id).ok_or(SessionError::UnknownBuffer(id))?;
        check_range(id, buf.len(), offset, len)?;
        Ok(&buf[offset as usize..(offset + len) as usize])
    }

    pub fn dispatch(
        &mut self,
        pipeline: u64,
        groups: [u32; 3],
        bindings: &[BindingEntry],
    ) -> Result<crate::executor::TimingBreakdown, SessionError> {
        let exec_id = self
            .pipelines
            .get(&pipeline)
            .ok_or(ExecutorError::UnknownPipeline(pipeline))?
            .executor_id;
        let mut seen_slots = HashMap::new();
        let mut seen_buffers = HashMap::new();
        for b in bindings {
            if !self.buffers.contains_key(&b.buffer_id) {
                return Err(SessionError::UnknownBuffer(b.buffer_id));
            }
            let slot = DescriptorSlot::new(b.set, b.binding);
            if seen_slots.insert(slot, b.buffer_id).is_some() {
                return Err(SessionError::AliasedBuffer(format!("slot {slot} bound twice")));
            }
            if let Some(prev) = seen_buffers.insert(b.buffer_id, slot) {
                return Err(SessionError::AliasedBuffer(format!(
                    "buffer {} bound at {prev} and {slot}",
                    b.buffer_id
                )));
            }
        }
        let mut taken: Vec<(DescriptorSlot, u64, Vec<u8>)> = bindings
            .iter()
            .map(|b| {
                let data = self.buffers.remove(&b.buffer_id).expect("checked above");
                (DescriptorSlot::new(b.set, b.binding), b.buffer_id, data)
            })
            .collect();
        let mut views: Vec<(DescriptorSlot, &mut [u8])> =
            taken.iter_mut().map(|(s, _, d)| (*s, d.as_mut_slice())).collect();
        let result = self.executor.dispatch(exec_id, groups, &mut views);
        drop(views);
        for (_, id, data) in taken {
            self.buffers.insert(id, data);
        }
        Ok(result?)
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            session_id: self.id,
            epoch: self.epoch,
            modules: self.modules.iter().map(|(h, m)| (*h, m.to_bytes())).collect(),
            pipelines: self
                .pipelines
                .iter()
                .map(|(id, p)| (*id, p.handle.module_hash, p.handle.entry.clone()))
                .collect(),
            buffers: self.buffers.iter().map(|(id, b)| (*id, b.clone())).collect(),
        }
    }

    pub fn export(&mut self) -> Vec<u8> {
        let start = Instant::now();
        let bytes = self.snapshot().to_bytes();
        self.last_export_ns = Some(elapsed_ns(start));
        bytes
    }

    /// Replaces this session's state with a snapshot's, keeping this
    /// session's id. `fresh` supplies the executor for the new state, so a
    /// rejected snapshot leaves the current executor alone.
    pub fn import(&mut self, bytes: &[u8], fresh: Box<dyn Executor>) -> Result<u64, SessionError> {
        let start = Instant::now();
        let snap = SessionSnapshot::from_bytes(bytes)?;
        let mut next = Session::new(self.id, fresh);
        for (hash, data) in &snap.modules {
            next.load_module(*hash, data)?;
        }
        for (id, hash, entry) in &snap.pipelines {
            next.next_pipeline = *id;
            next.create_pipeline(*hash, entry)?;
        }
        for (id, data) in snap.buffers {
            next.buffers.insert(id, data);
        }
        next.epoch = snap.epoch + 1;
        next.last_export_ns = self.last_export_ns;
        *self = next;
        self.last_import_ns = Some(elapsed_ns(start));
        Ok(self.epoch)
    }

    /// Services one request. `fresh_executor` is only called by IMPORT.
    pub fn handle(
        &mut self,
        msg: Message,
        fresh_executor: &dyn Fn() -> Result<Box<dyn Executor>, ExecutorError>,
    ) -> Result<Message, SessionError> {
        Ok(match msg {
            Message::LoadModule { hash, module } => {
                let already_cached = self.load_module(ContentHash(hash), &module)?;
                Message::ModuleAck { hash, already_cached }
            }
            Message::CreatePipeline { hash, entry } => Message::PipelineAck {
                pipeline_id: self.create_pipeline(ContentHash(hash), &entry)?.id,
            },
            Message::AllocBuffer { buffer_id, size } => {
                let start = Instant::now();
                self.alloc_buffer(buffer_id, size)?;
                Message::Ack {
                    value: buffer_id,
                    elapsed_ns: elapsed_ns(start),
                }
            }
            Message::WriteBuffer { buffer_id, offset, data } => {
                let start = Instant::now();
                self.write_buffer(buffer_id, offset, &data)?;
                Message::Ack {
                    value: data.len() as u64,
                    elapsed_ns: elapsed_ns(start),
                }
            }
            Message::Dispatch {
                pipeline_id,
                groups,
                bindings,
            } => {
                let t = self.dispatch(pipeline_id, groups, &bindings)?;
                Message::DispatchAck {
                    prepare_ns: t.prepare_ns,
                    execute_ns: t.execute_ns,
                    readback_ns: t.readback_ns,
                }
            }
            Message::ReadBuffer { buffer_id, offset, len } => Message::BufferData {
                data: self.read_buffer(buffer_id, offset, len as u64)?.to_vec(),
            },
            Message::ExportSession => Message::SessionSnapshot { snapshot: self.export() },
            Message::ImportSession { snapshot } => {
                let epoch = self.import(&snapshot, fresh_executor()?)?;
                Message::Ack {
                    value: epoch,
                    elapsed_ns: self.last_import_ns.unwrap_or(0),
                }
            }
            Message::Ping { token } => Message::Pong { token },
            other => return Err(SessionError::UnexpectedMessage(other.msg_type())),
        })
    }
}

#[cfg(test)]
mod tests;
