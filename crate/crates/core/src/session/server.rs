//! The session registry and its TCP front end.

use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, TryLockError};
use std::thread::JoinHandle;
use std::time::Duration;

use super::{Session, SessionError};
use crate::error::Registered;
use crate::executor::{open_backend, BackendKind, Executor, ExecutorError};
use crate::interp::InterpLimits;
use crate::wire::transport::{recv_message, send_message, TcpTransport, Transport, TransportError};
use crate::wire::{FrameHeader, Message, SessionId, WireError, MAX_PAYLOAD};

#[derive(Debug, Clone, Copy)]
pub struct ServerConfig {
    pub backend: BackendKind,
    pub limits: InterpLimits,
    /// Largest accepted request payload. Requests above it are answered
    /// with Oversize and the connection is closed.
    pub max_payload: u32,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::default(),
            limits: InterpLimits::default(),
            max_payload: MAX_PAYLOAD,
        }
    }
}

/// Hosts many independent sessions, each behind its own lock.
pub struct Server {
    config: ServerConfig,
    sessions: Mutex<HashMap<SessionId, Arc<Mutex<Session>>>>,
}

impl Server {
    /// Fails if the configured backend cannot be opened.
    pub fn new(config: ServerConfig) -> Result<Self, ExecutorError> {
        open_backend(config.backend, config.limits)?;
        Ok(Self {
            config,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    fn executor(&self) -> Result<Box<dyn Executor>, ExecutorError> {
        open_backend(self.config.backend, self.config.limits)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    pub fn session(&self, id: SessionId) -> Option<Arc<Mutex<Session>>> {
        self.sessions.lock().unwrap().get(&id).cloned()
    }

    /// Resumes `requested` if it exists, otherwise opens a new session.
    pub fn hello(&self, requested: SessionId) -> Result<(SessionId, String), SessionError> {
        let mut sessions = self.sessions.lock().unwrap();
        if let Some(s) = sessions.get(&requested) {
            let caps = s.lock().unwrap().capabilities();
            return Ok((requested, caps));
        }
        let mut id = SessionId::random();
        while sessions.contains_key(&id) {
            id = SessionId::random();
        }
        let session = Session::new(id, self.executor()?);
        let caps = session.capabilities();
        sessions.insert(id, Arc::new(Mutex::new(session)));
        log::info!("opened session {id}");
        Ok((id, caps))
    }

    /// Answers one decoded frame. The returned session id goes into the
    /// response header.
    pub fn handle(&self, header: &FrameHeader, msg: Message) -> (SessionId, Message) {
        let sid = header.session_id;
        if msg.msg_type().response().is_none() {
            return (sid, SessionError::UnexpectedMessage(msg.msg_type()).to_message());
        }
        let result = match msg {
            Message::Hello { .. } => {
                return match self.hello(sid) {
                    Ok((id, capabilities)) => (
                        id,
                        Message::HelloAck {
                            session_id: id,
                            capabilities,
                        },
                    ),
                    Err(e) => (sid, e.to_message()),
                }
            }
            Message::Ping { token } => Ok(Message::Pong { token }),
            Message::CloseSession => match self.sessions.lock().unwrap().remove(&sid) {
                Some(_) => {
                    log::info!("closed session {sid}");
                    Ok(Message::Ack {
                        value: 0,
                        elapsed_ns: 0,
                    })
                }
                None => Err(SessionError::UnknownSession(sid)),
            },
            msg => match self.session(sid) {
                None => Err(SessionError::UnknownSession(sid)),
                Some(s) => {
                    let guard = if matches!(msg, Message::ExportSession) {
                        match s.try_lock() {
                            Ok(g) => Ok(g),
                            Err(TryLockError::WouldBlock) => Err(SessionError::Busy),
                            Err(TryLockError::Poisoned(p)) => Ok(p.into_inner()),
                        }
                    } else {
                        Ok(s.lock().unwrap_or_else(|p| p.into_inner()))
                    };
                    guard.and_then(|mut g| g.handle(msg, &|| self.executor()))
                }
            },
        };
        (sid, result.unwrap_or_else(|e| e.to_message()))
    }

    /// Serves one connection until the peer disconnects or sends a frame
    /// whose header cannot be trusted.
    pub fn serve_connection(&self, t: &mut dyn Transport) {
        loop {
            let r = match recv_message(t, None) {
                Ok(r) => r,
                Err(TransportError::Wire(e)) => {
                    log::warn!("dropping connection after bad frame: {e}");
                    let err = Message::Error {
                        code: e.code(),
                        message: e.to_string(),
                    };
                    let _ = send_message(t, &err, SessionId::ZERO, 0, 0);
                    break;
                }
                Err(_) => break,
            };
            if r.header.payload_len > self.config.max_payload {
                let e = WireError::Oversize(r.header.payload_len as u64);
                log::warn!("dropping connection: {e}");
                let err = Message::Error {
                    code: e.code(),
                    message: e.to_string(),
                };
                let _ = send_message(t, &err, r.header.session_id, r.header.request_id, 0);
                break;
            }
            let (sid, response) = match r.message {
                Ok(msg) => {
                    log::debug!("{} request {} for {}", msg.msg_type(), r.header.request_id, r.header.session_id);
                    self.handle(&r.header, msg)
                }
                Err(e) => (
                    r.header.session_id,
                    Message::Error {
                        code: e.code(),
                        message: e.to_string(),
                    },
                ),
            };
            let sent = match send_message(t, &response, sid, r.header.request_id, 0) {
                Err(TransportError::Wire(e)) => {
                    let err = Message::Error {
                        code: e.code(),
                        message: e.to_string(),
                    };
                    send_message(t, &err, sid, r.header.request_id, 0)
                }
                other => other,
            };
            if sent.is_err() {
                break;
            }
        }
        t.close();
    }

    /// Binds `addr` and serves connections on background threads.
    pub fn spawn_tcp(self: Arc<Self>, addr: &str) -> io::Result<ServerHandle> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let stop = stop.clone();
            std::thread::spawn(move || {
                let mut workers: Vec<(JoinHandle<()>, TcpStream)> = Vec::new();
                while !stop.load(Ordering::SeqCst) {
                    match listener.accept() {
                        Ok((stream, peer)) => {
                            log::info!("connection from {peer}");
                            let _ = stream.set_nonblocking(false);
                            let Ok(control) = stream.try_clone() else { continue };
                            let server = self.clone();
                            let worker = std::thread::spawn(move || {
                                server.serve_connection(&mut TcpTransport::from_stream(stream));
                            });
                            workers.push((worker, control));
                        }
                        Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(5));
                        }
                        Err(e) => log::warn!("accept failed: {e}"),
                    }
                    workers.retain(|(w, _)| !w.is_finished());
                }
                for (_, c) in &workers {
                    let _ = c.shutdown(std::net::Shutdown::Both);
                }
                for (w, _) in workers {
                    let _ = w.join();
                }
            })
        };
        Ok(ServerHandle {
            addr: local,
            stop,
            thread: Some(thread),
        })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, drops every open connection and waits for the
    /// worker threads.
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}
