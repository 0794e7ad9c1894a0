//! Client-side runtime: offloads work to a server, mirrors modules and
//! buffers locally, and keeps working on the local interpreter when the
//! server goes away.
//!
//! The connection is a small state machine:
//!
//! ```text
//! Connected --(missed heartbeats / failed request)--> Degraded
//! Degraded  --(reconnect + resync)------------------> Connected
//! any       --(close)-------------------------------> Closed
//! ```
//!
//! Every result produced while degraded carries the sync epoch of the data
//! it was computed from.

pub mod heartbeat;
pub mod script;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, TryLockError};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::error::Registered;
use crate::executor::{ExecutorError, InterpreterExecutor, TimingBreakdown};
use crate::interp::InterpLimits;
use crate::session::{Session, SessionError};
use crate::spirv::{hash_module, ContentHash, DescriptorSlot, SpirvModule};
use crate::wire::rtt::measure_rtt;
use crate::wire::transport::{call, TcpTransport, Transport, TransportError};
use crate::wire::{BindingEntry, ClientKind, Message, SessionId, FLAG_DEGRADED};

pub use heartbeat::{HeartbeatConfig, MissDetector};

/// Largest slice moved by one WRITE_BUFFER or READ_BUFFER.
pub const CHUNK_BYTES: usize = 32 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionState {
    Connected,
    Degraded,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Remote,
    LocalDegraded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateEvent {
    pub from: ConnectionState,
    pub to: ConnectionState,
    pub reason: String,
    /// `miss_threshold × interval` for heartbeat-detected disconnects.
    pub nominal_detection: Option<Duration>,
    /// Time since the last answered heartbeat, when known.
    pub measured_detection: Option<Duration>,
    pub at: Instant,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("Timeout")]
    Timeout,
    #[error("ConnectionClosed")]
    ConnectionClosed,
    #[error("NoLocalMirror: module {0} was never cached on this client")]
    NoLocalMirror(ContentHash),
    #[error("Remote: {name} (0x{code:02x}): {message}")]
    Remote {
        code: u16,
        name: &'static str,
        message: String,
    },
    #[error(transparent)]
    Local(#[from] SessionError),
    #[error("Io: {0}")]
    Io(String),
    #[error("ScriptError: line {line}: {message}")]
    Script { line: usize, message: String },
}

impl From<ExecutorError> for ClientError {
    fn from(e: ExecutorError) -> Self {
        ClientError::Local(SessionError::Executor(e))
    }
}

impl From<TransportError> for ClientError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout => ClientError::Timeout,
            TransportError::Closed => ClientError::ConnectionClosed,
            TransportError::Io(e) => ClientError::Io(e.to_string()),
            TransportError::Wire(e) => ClientError::Remote {
                code: e.code(),
                name: e.name(),
                message: e.to_string(),
            },
        }
    }
}

impl Registered for ClientError {
    fn code(&self) -> u16 {
        match self {
            ClientError::Timeout => 0x50,
            ClientError::ConnectionClosed => 0x51,
            ClientError::NoLocalMirror(_) => 0x52,
            ClientError::Remote { code, .. } => *code,
            ClientError::Local(e) => e.code(),
            ClientError::Io(_) => 0x54,
            ClientError::Script { .. } => 0x55,
        }
    }
}

impl ClientError {
    /// True when the request never got an answer, as opposed to being
    /// answered with an error.
    fn is_link_failure(&self) -> bool {
        matches!(self, ClientError::Timeout | ClientError::ConnectionClosed | ClientError::Io(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientConfig {
    pub heartbeat: HeartbeatConfig,
    pub request_timeout: Duration,
    pub connect_timeout: Duration,
    pub local_limits: InterpLimits,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            heartbeat: HeartbeatConfig::default(),
            request_timeout: Duration::from_secs(5),
            connect_timeout: Duration::from_secs(1),
            local_limits: InterpLimits::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DispatchOutcome {
    /// Contents of every bound buffer after the dispatch, by buffer id.
    pub buffers: Vec<(u64, Vec<u8>)>,
    pub timing: TimingBreakdown,
    pub origin: Origin,
    /// Oldest sync epoch among the inputs. Set iff `origin` is
    /// [`Origin::LocalDegraded`].
    pub staleness: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Fetched {
    pub data: Vec<u8>,
    pub origin: Origin,
    pub staleness: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferSync {
    /// Client sync epoch at which these bytes last matched the server.
    pub sync_epoch: u64,
    /// Written locally since then.
    pub dirty: bool,
    /// The current server session has this buffer allocated.
    pub on_server: bool,
}

#[derive(Debug, Clone)]
struct PipelineRecord {
    hash: ContentHash,
    entry: String,
    remote: Option<u64>,
    local: Option<u64>,
}

pub type Connector = Box<dyn FnMut() -> Result<Box<dyn Transport>, TransportError> + Send>;

pub fn tcp_connector(addr: String, timeout: Duration) -> Connector {
    Box::new(move || Ok(Box::new(TcpTransport::connect(addr.as_str(), timeout)?) as Box<dyn Transport>))
}

struct Shared {
    link: Mutex<Option<Box<dyn Transport>>>,
    state: Mutex<ConnectionState>,
    state_changed: Condvar,
    events: Mutex<Vec<StateEvent>>,
    session: Mutex<SessionId>,
    next_request: AtomicU64,
    last_ok: Mutex<Instant>,
    stop: AtomicBool,
}

impl Shared {
    fn request_id(&self) -> u64 {
        self.next_request.fetch_add(1, Ordering::Relaxed)
    }

    fn state(&self) -> ConnectionState {
        *self.state.lock().unwrap()
    }

    fn transition(
        &self,
        to: ConnectionState,
        reason: &str,
        nominal: Option<Duration>,
        measured: Option<Duration>,
    ) -> bool {
        let mut state = self.state.lock().unwrap();
        let from = *state;
        let legal = matches!(
            (from, to),
            (ConnectionState::Connected, ConnectionState::Degraded)
                | (ConnectionState::Degraded, ConnectionState::Connected)
                | (ConnectionState::Connected | ConnectionState::Degraded, ConnectionState::Closed)
        );
        if !legal {
            return false;
        }
        *state = to;
        log::info!("connection {from:?} -> {to:?}: {reason}");
        self.events.lock().unwrap().push(StateEvent {
            from,
            to,
            reason: reason.to_string(),
            nominal_detection: nominal,
            measured_detection: measured,
            at: Instant::now(),
        });
        self.state_changed.notify_all();
        true
    }

    fn declare_lost(&self, reason: &str, nominal: Option<Duration>) {
        let measured = self.last_ok.lock().unwrap().elapsed();
        self.transition(ConnectionState::Degraded, reason, nominal, Some(measured));
    }
}

fn heartbeat_loop(shared: Arc<Shared>, config: HeartbeatConfig) {
    let mut detector = MissDetector::new(config.miss_threshold, Instant::now());
    let mut next = Instant::now() + config.interval;
    loop {
        loop {
            if shared.stop.load(Ordering::SeqCst) {
                return;
            }
            let now = Instant::now();
            if next <= now {
                break;
            }
            std::thread::park_timeout(next - now);
        }
        next += config.interval;
        match shared.state() {
            ConnectionState::Closed => return,
            ConnectionState::Degraded => {
                detector.reset(Instant::now());
                continue;
            }
            ConnectionState::Connected => {}
        }
        let answered = match shared.link.try_lock() {
            Ok(mut guard) => match guard.as_mut() {
                Some(t) => {
                    let id = shared.request_id();
                    let session = *shared.session.lock().unwrap();
                    let wait = next.saturating_duration_since(Instant::now()).max(Duration::from_millis(1));
                    measure_rtt(t.as_mut(), session, id, id, wait).is_ok()
                }
                None => false,
            },
            // A request is in flight on the link, which is proof of life.
            Err(TryLockError::WouldBlock) => true,
            Err(TryLockError::Poisoned(_)) => false,
        };
        let now = Instant::now();
        if answered {
            detector.ok(now);
            *shared.last_ok.lock().unwrap() = now;
        } else if detector.miss(now).is_some() {
            shared.declare_lost(
                &format!("{} consecutive heartbeats unanswered", config.miss_threshold),
                Some(config.nominal_detection()),
            );
        }
    }
}

pub struct OffloadClient {
    shared: Arc<Shared>,
    heartbeat: Option<JoinHandle<()>>,
    config: ClientConfig,
    connector: Option<Connector>,
    /// Mirror of the server session, executed by the local interpreter.
    mirror: Session,
    /// Every module this client has loaded, including ones the local
    /// interpreter cannot run.
    module_bytes: BTreeMap<ContentHash, Vec<u8>>,
    pipelines: BTreeMap<u64, PipelineRecord>,
    next_pipeline: u64,
    buffers: BTreeMap<u64, BufferSync>,
    sync_epoch: u64,
}

impl OffloadClient {
    /// Connects over TCP and opens a session.
    pub fn connect(addr: &str, config: ClientConfig) -> Result<Self, ClientError> {
        Self::with_connector(tcp_connector(addr.to_string(), config.connect_timeout), config)
    }

    pub fn with_connector(mut connector: Connector, config: ClientConfig) -> Result<Self, ClientError> {
        let transport = connector()?;
        let mut client = Self::with_transport(transport, config)?;
        client.connector = Some(connector);
        Ok(client)
    }

    /// Opens a session over an existing transport. Without a connector the
    /// client cannot reconnect on its own; use [`OffloadClient::reconnect_with`].
    pub fn with_transport(transport: Box<dyn Transport>, config: ClientConfig) -> Result<Self, ClientError> {
        let shared = Arc::new(Shared {
            link: Mutex::new(Some(transport)),
            state: Mutex::new(ConnectionState::Connected),
            state_changed: Condvar::new(),
            events: Mutex::new(Vec::new()),
            session: Mutex::new(SessionId::ZERO),
            next_request: AtomicU64::new(1),
            last_ok: Mutex::new(Instant::now()),
            stop: AtomicBool::new(false),
        });
        let mut client = OffloadClient {
            shared,
            heartbeat: None,
            config,
            connector: None,
            mirror: Session::new(SessionId::ZERO, Box::new(InterpreterExecutor::new(config.local_limits))),
            module_bytes: BTreeMap::new(),
            pipelines: BTreeMap::new(),
            next_pipeline: 1,
            buffers: BTreeMap::new(),
            sync_epoch: 0,
        };
        client.hello()?;
        let shared = client.shared.clone();
        let hb = config.heartbeat;
        client.heartbeat = Some(std::thread::spawn(move || heartbeat_loop(shared, hb)));
        Ok(client)
    }

    fn hello(&mut self) -> Result<bool, ClientError> {
        let requested = *self.shared.session.lock().unwrap();
        let caps = self.mirror.capabilities();
        let reply = self.remote_raw(
            Message::Hello {
                client_kind: ClientKind::Ue,
                spirv_min: 0x0001_0000,
                spirv_max: 0x0001_0600,
                backend: caps,
            },
            0,
        )?;
        let Message::HelloAck { session_id, capabilities } = reply else {
            return Err(unexpected(&reply));
        };
        log::info!("session {session_id} on {capabilities}");
        *self.shared.session.lock().unwrap() = session_id;
        *self.shared.last_ok.lock().unwrap() = Instant::now();
        Ok(session_id == requested)
    }

    pub fn state(&self) -> ConnectionState {
        self.shared.state()
    }

    pub fn session_id(&self) -> SessionId {
        *self.shared.session.lock().unwrap()
    }

    pub fn sync_epoch(&self) -> u64 {
        self.sync_epoch
    }

    pub fn events(&self) -> Vec<StateEvent> {
        self.shared.events.lock().unwrap().clone()
    }

    /// Blocks until the connection reaches `state` or `timeout` passes.
    pub fn wait_for_state(&self, state: ConnectionState, timeout: Duration) -> bool {
        let guard = self.shared.state.lock().unwrap();
        let (guard, _) = self
            .shared
            .state_changed
            .wait_timeout_while(guard, timeout, |s| *s != state)
            .unwrap();
        *guard == state
    }

    pub fn mirror_buffer(&self, id: u64) -> Option<(&[u8], BufferSync)> {
        Some((self.mirror.buffer(id)?, *self.buffers.get(&id)?))
    }

    pub fn mirrored_module(&self, hash: &ContentHash) -> Option<&[u8]> {
        self.module_bytes.get(hash).map(Vec::as_slice)
    }

    fn remote_raw(&self, msg: Message, flags: u16) -> Result<Message, ClientError> {
        let mut guard = self.shared.link.lock().unwrap();
        let t = guard.as_mut().ok_or(ClientError::ConnectionClosed)?;
        let session = *self.shared.session.lock().unwrap();
        let id = self.shared.request_id();
        let (_, reply) = call(t.as_mut(), &msg, session, id, flags, self.config.request_timeout)?;
        if let Message::Error { code, message } = reply {
            return Err(ClientError::Remote {
                code,
                name: crate::error::name_of(code),
                message,
            });
        }
        Ok(reply)
    }

    /// Sends a request if connected. `Ok(None)` means the link is down and
    /// the caller should fall back to the mirror.
    fn remote(&self, msg: Message) -> Result<Option<Message>, ClientError> {
        if self.state() != ConnectionState::Connected {
            return Ok(None);
        }
        match self.remote_raw(msg, 0) {
            Ok(m) => {
                *self.shared.last_ok.lock().unwrap() = Instant::now();
                Ok(Some(m))
            }
            Err(e) if e.is_link_failure() => {
                self.shared.declare_lost(&format!("request failed: {e}"), None);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    fn ensure_open(&self) -> Result<(), ClientError> {
        if self.state() == ConnectionState::Closed {
            return Err(ClientError::ConnectionClosed);
        }
        Ok(())
    }

    fn next_sync(&mut self) -> u64 {
        self.sync_epoch += 1;
        self.sync_epoch
    }

    /// Loads a module on the server and into the local mirror.
    pub fn load_module(&mut self, bytes: &[u8]) -> Result<ContentHash, ClientError> {
        self.ensure_open()?;
        let module = SpirvModule::from_bytes(bytes).map_err(ExecutorError::from)?;
        let hash = module.content_hash();
        self.remote(Message::load_module(&module))?;
        self.module_bytes.insert(hash, bytes.to_vec());
        if let Err(e) = self.mirror.load_module(hash, bytes) {
            log::warn!("module {hash} cannot run locally, degraded mode will refuse it: {e}");
        }
        Ok(hash)
    }

    /// Returns a client-side pipeline reference.
    pub fn create_pipeline(&mut self, hash: ContentHash, entry: &str) -> Result<u64, ClientError> {
        self.ensure_open()?;
        let remote = match self.remote(Message::CreatePipeline {
            hash: hash.0,
            entry: entry.to_string(),
        })? {
            Some(Message::PipelineAck { pipeline_id }) => Some(pipeline_id),
            Some(other) => return Err(unexpected(&other)),
            None => {
                if !self.module_bytes.contains_key(&hash) {
                    return Err(ClientError::NoLocalMirror(hash));
                }
                None
            }
        };
        let local = self.mirror.create_pipeline(hash, entry).ok().map(|p| p.id);
        let id = self.next_pipeline;
        self.next_pipeline += 1;
        self.pipelines.insert(
            id,
            PipelineRecord {
                hash,
                entry: entry.to_string(),
                remote,
                local,
            },
        );
        Ok(id)
    }

    pub fn alloc_buffer(&mut self, id: u64, size: u64) -> Result<(), ClientError> {
        self.ensure_open()?;
        if self.buffers.contains_key(&id) {
            return Err(SessionError::BufferExists(id).into());
        }
        let on_server = self.remote(Message::AllocBuffer { buffer_id: id, size })?.is_some();
        self.mirror.alloc_buffer(id, size)?;
        let sync_epoch = if on_server { self.next_sync() } else { self.sync_epoch };
        self.buffers.insert(
            id,
            BufferSync {
                sync_epoch,
                dirty: !on_server,
                on_server,
            },
        );
        Ok(())
    }

    pub fn write_buffer(&mut self, id: u64, offset: u64, data: &[u8]) -> Result<(), ClientError> {
        self.ensure_open()?;
        // Validate against the mirror first so both sides agree on errors.
        self.mirror.read_buffer(id, offset, data.len() as u64)?;
        let mut remote_ok = self.state() == ConnectionState::Connected;
        for (i, chunk) in data.chunks(CHUNK_BYTES).enumerate() {
            if !remote_ok {
                break;
            }
            let msg = Message::WriteBuffer {
                buffer_id: id,
                offset: offset + (i * CHUNK_BYTES) as u64,
                data: chunk.to_vec(),
            };
            remote_ok = self.remote(msg)?.is_some();
        }
        self.mirror.write_buffer(id, offset, data)?;
        let epoch = if remote_ok { Some(self.next_sync()) } else { None };
        let meta = self.buffers.get_mut(&id).expect("mirror has it");
        match epoch {
            Some(e) if !meta.dirty => meta.sync_epoch = e,
            Some(_) => {}
            None => meta.dirty = true,
        }
        Ok(())
    }

    fn fetch_remote(&mut self, id: u64, offset: u64, len: u64) -> Result<Option<Vec<u8>>, ClientError> {
        let mut out = Vec::with_capacity(len as usize);
        while (out.len() as u64) < len {
            let n = (len - out.len() as u64).min(CHUNK_BYTES as u64) as u32;
            match self.remote(Message::ReadBuffer {
                buffer_id: id,
                offset: offset + out.len() as u64,
                len: n,
            })? {
                Some(Message::BufferData { data }) => out.extend_from_slice(&data),
                Some(other) => return Err(unexpected(&other)),
                None => return Ok(None),
            }
        }
        Ok(Some(out))
    }

    pub fn read_buffer(&mut self, id: u64, offset: u64, len: u64) -> Result<Fetched, ClientError> {
        self.ensure_open()?;
        self.mirror.read_buffer(id, offset, len)?;
        let meta = self.buffers[&id];
        if meta.on_server && !meta.dirty {
            if let Some(data) = self.fetch_remote(id, offset, len)? {
                if offset == 0 && len == self.mirror.buffer(id).unwrap().len() as u64 {
                    self.mirror.write_buffer(id, 0, &data)?;
                    let e = self.next_sync();
                    self.buffers.get_mut(&id).unwrap().sync_epoch = e;
                }
                return Ok(Fetched {
                    data,
                    origin: Origin::Remote,
                    staleness: None,
                });
            }
        }
        Ok(Fetched {
            data: self.mirror.read_buffer(id, offset, len)?.to_vec(),
            origin: Origin::LocalDegraded,
            staleness: Some(self.buffers[&id].sync_epoch),
        })
    }

    /// Runs a pipeline on the server, or on the local interpreter over the
    /// mirrored buffers when the server is unreachable.
    pub fn offload_dispatch(
        &mut self,
        pipeline: u64,
        groups: [u32; 3],
        bindings: &[BindingEntry],
    ) -> Result<DispatchOutcome, ClientError> {
        self.ensure_open()?;
        let record = self
            .pipelines
            .get(&pipeline)
            .cloned()
            .ok_or(ExecutorError::UnknownPipeline(pipeline))?;
        for b in bindings {
            if !self.buffers.contains_key(&b.buffer_id) {
                return Err(SessionError::UnknownBuffer(b.buffer_id).into());
            }
        }
        let remote_ready = record.remote.is_some()
            && bindings.iter().all(|b| {
                let m = self.buffers[&b.buffer_id];
                m.on_server && !m.dirty
            });
        if remote_ready {
            let msg = Message::Dispatch {
                pipeline_id: record.remote.unwrap(),
                groups,
                bindings: bindings.to_vec(),
            };
            if let Some(reply) = self.remote(msg)? {
                let Message::DispatchAck {
                    prepare_ns,
                    execute_ns,
                    readback_ns,
                } = reply
                else {
                    return Err(unexpected(&reply));
                };
                let mut buffers = Vec::with_capacity(bindings.len());
                let mut all_fetched = true;
                for b in bindings {
                    let len = self.mirror.buffer(b.buffer_id).unwrap().len() as u64;
                    match self.fetch_remote(b.buffer_id, 0, len)? {
                        Some(data) => {
                            self.mirror.write_buffer(b.buffer_id, 0, &data)?;
                            let e = self.next_sync();
                            self.buffers.get_mut(&b.buffer_id).unwrap().sync_epoch = e;
                            buffers.push((b.buffer_id, data));
                        }
                        None => {
                            all_fetched = false;
                            break;
                        }
                    }
                }
                if all_fetched {
                    return Ok(DispatchOutcome {
                        buffers,
                        timing: TimingBreakdown {
                            prepare_ns,
                            execute_ns,
                            readback_ns,
                        },
                        origin: Origin::Remote,
                        staleness: None,
                    });
                }
                // The server ran the dispatch but its results never
                // arrived; rerun locally on what the mirror holds.
            }
        }
        self.dispatch_local(pipeline, &record, groups, bindings)
    }

    fn dispatch_local(
        &mut self,
        pipeline: u64,
        record: &PipelineRecord,
        groups: [u32; 3],
        bindings: &[BindingEntry],
    ) -> Result<DispatchOutcome, ClientError> {
        if !self.module_bytes.contains_key(&record.hash) {
            return Err(ClientError::NoLocalMirror(record.hash));
        }
        let local = match record.local {
            Some(id) => id,
            None => {
                // Surfaces the interpreter's rejection if the module is
                // outside its subset.
                self.mirror.load_module(record.hash, &self.module_bytes[&record.hash])?;
                let id = self.mirror.create_pipeline(record.hash, &record.entry)?.id;
                self.pipelines.get_mut(&pipeline).unwrap().local = Some(id);
                id
            }
        };
        let staleness = bindings
            .iter()
            .map(|b| self.buffers[&b.buffer_id].sync_epoch)
            .min()
            .unwrap_or(self.sync_epoch);
        let timing = self.mirror.dispatch(local, groups, bindings)?;
        let mut buffers = Vec::with_capacity(bindings.len());
        for b in bindings {
            self.buffers.get_mut(&b.buffer_id).unwrap().dirty = true;
            buffers.push((b.buffer_id, self.mirror.buffer(b.buffer_id).unwrap().to_vec()));
        }
        Ok(DispatchOutcome {
            buffers,
            timing,
            origin: Origin::LocalDegraded,
            staleness: Some(staleness),
        })
    }

    /// Round-trip time of one PING.
    pub fn rtt(&mut self) -> Result<u64, ClientError> {
        let mut guard = self.shared.link.lock().unwrap();
        let t = guard.as_mut().ok_or(ClientError::ConnectionClosed)?;
        let id = self.shared.request_id();
        let session = *self.shared.session.lock().unwrap();
        Ok(measure_rtt(t.as_mut(), session, id, id, self.config.request_timeout)?)
    }

    /// Reconnects with the stored connector and resynchronizes.
    pub fn reconnect(&mut self) -> Result<(), ClientError> {
        let connector = self.connector.as_mut().ok_or(ClientError::ConnectionClosed)?;
        let t = connector()?;
        self.reconnect_with(t)
    }

    /// Switches to a new server address, then reconnects.
    pub fn reconnect_to(&mut self, addr: &str) -> Result<(), ClientError> {
        self.connector = Some(tcp_connector(addr.to_string(), self.config.connect_timeout));
        self.reconnect()
    }

    /// Resynchronizes over `transport` and returns to Connected.
    ///
    /// If the server still holds this session, buffers written locally
    /// while degraded are uploaded and the rest are re-read from the
    /// server (the most recent writer wins). Otherwise the session is
    /// rebuilt from the mirror.
    pub fn reconnect_with(&mut self, transport: Box<dyn Transport>) -> Result<(), ClientError> {
        if self.state() != ConnectionState::Degraded {
            return Err(ClientError::Io(format!("cannot reconnect from {:?}", self.state())));
        }
        if let Some(mut old) = self.shared.link.lock().unwrap().replace(transport) {
            old.close();
        }
        let resumed = self.hello()?;
        if !resumed {
            for p in self.pipelines.values_mut() {
                p.remote = None;
            }
            for b in self.buffers.values_mut() {
                b.on_server = false;
            }
        }
        let hashes: Vec<ContentHash> = self.module_bytes.keys().copied().collect();
        for hash in hashes {
            let msg = Message::LoadModule {
                hash: hash.0,
                module: self.module_bytes[&hash].clone(),
            };
            self.remote_raw(msg, 0)?;
        }
        let ids: Vec<u64> = self.pipelines.keys().copied().collect();
        for id in ids {
            if self.pipelines[&id].remote.is_some() {
                continue;
            }
            let p = &self.pipelines[&id];
            let reply = self.remote_raw(
                Message::CreatePipeline {
                    hash: p.hash.0,
                    entry: p.entry.clone(),
                },
                0,
            )?;
            let Message::PipelineAck { pipeline_id } = reply else {
                return Err(unexpected(&reply));
            };
            self.pipelines.get_mut(&id).unwrap().remote = Some(pipeline_id);
        }
        let epoch = self.sync_epoch + 1;
        let ids: Vec<u64> = self.buffers.keys().copied().collect();
        for id in ids {
            let meta = self.buffers[&id];
            let size = self.mirror.buffer(id).unwrap().len();
            if !meta.on_server {
                self.remote_raw(Message::AllocBuffer { buffer_id: id, size: size as u64 }, 0)?;
            }
            if meta.dirty || !meta.on_server {
                let data = self.mirror.buffer(id).unwrap().to_vec();
                let flags = if meta.dirty { FLAG_DEGRADED } else { 0 };
                for (i, chunk) in data.chunks(CHUNK_BYTES).enumerate() {
                    let msg = Message::WriteBuffer {
                        buffer_id: id,
                        offset: (i * CHUNK_BYTES) as u64,
                        data: chunk.to_vec(),
                    };
                    self.remote_raw(msg, flags)?;
                }
            } else {
                let mut data = Vec::with_capacity(size);
                while data.len() < size {
                    let n = (size - data.len()).min(CHUNK_BYTES) as u32;
                    let reply = self.remote_raw(
                        Message::ReadBuffer {
                            buffer_id: id,
                            offset: data.len() as u64,
                            len: n,
                        },
                        0,
                    )?;
                    let Message::BufferData { data: d } = reply else {
                        return Err(unexpected(&reply));
                    };
                    data.extend_from_slice(&d);
                }
                self.mirror.write_buffer(id, 0, &data)?;
            }
            self.buffers.insert(
                id,
                BufferSync {
                    sync_epoch: epoch,
                    dirty: false,
                    on_server: true,
                },
            );
        }
        self.sync_epoch = epoch;
        self.shared.transition(
            ConnectionState::Connected,
            if resumed { "reconnected, session resumed" } else { "reconnected, session rebuilt" },
            None,
            None,
        );
        Ok(())
    }

    /// Ends the session. The client cannot be used afterwards.
    pub fn close(&mut self) {
        if self.state() == ConnectionState::Connected {
            let _ = self.remote_raw(Message::CloseSession, 0);
        }
        self.shared.transition(ConnectionState::Closed, "closed by user", None, None);
        if let Some(mut t) = self.shared.link.lock().unwrap().take() {
            t.close();
        }
        self.stop_heartbeat();
    }

    fn stop_heartbeat(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.heartbeat.take() {
            h.thread().unpark();
            let _ = h.join();
        }
    }
}

impl Drop for OffloadClient {
    fn drop(&mut self) {
        self.stop_heartbeat();
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

/// Runs a module entirely on the local interpreter and times the whole
/// sequence: reflect, load, pipeline, dispatch and readback.
pub fn cold_start_local(
    module_bytes: &[u8],
    entry: &str,
    groups: [u32; 3],
    inputs: &[(DescriptorSlot, Vec<u8>)],
    limits: InterpLimits,
) -> Result<(Vec<(DescriptorSlot, Vec<u8>)>, u64), ClientError> {
    use crate::executor::Executor;
    let start = Instant::now();
    let module = SpirvModule::from_bytes(module_bytes).map_err(ExecutorError::from)?;
    crate::spirv::reflect(&module).map_err(ExecutorError::from)?;
    let mut ex = InterpreterExecutor::new(limits);
    let hash = ex.load(&module)?;
    debug_assert_eq!(hash, hash_module(module_bytes));
    let p = ex.create_pipeline(&hash, entry)?;
    let mut outputs: Vec<(DescriptorSlot, Vec<u8>)> = inputs.to_vec();
    let mut views: Vec<(DescriptorSlot, &mut [u8])> =
        outputs.iter_mut().map(|(s, d)| (*s, d.as_mut_slice())).collect();
    ex.dispatch(p.id, groups, &mut views)?;
    drop(views);
    let elapsed = start.elapsed().as_nanos().max(1) as u64;
    Ok((outputs, elapsed))
}

#[cfg(test)]
mod tests;
