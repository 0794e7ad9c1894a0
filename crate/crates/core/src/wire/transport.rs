//! Reliable, ordered frame transports: TCP and an in-process channel pair.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use super::{decode_payload, encode, FrameHeader, Message, SessionId, WireError, HEADER_LEN};

pub const DEFAULT_PORT: u16 = 47001;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("Timeout")]
    Timeout,
    #[error("ConnectionClosed")]
    Closed,
    #[error("Io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// A bidirectional stream of whole frames.
pub trait Transport: Send {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError>;

    /// Waits for the next complete frame. `None` waits forever.
    fn recv_frame(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, TransportError>;

    fn close(&mut self) {}
}

/// A received frame whose payload may or may not have parsed.
pub struct Received {
    pub header: FrameHeader,
    pub message: Result<Message, WireError>,
}

pub fn send_message(
    t: &mut dyn Transport,
    msg: &Message,
    session: SessionId,
    request_id: u64,
    flags: u16,
) -> Result<(), TransportError> {
    let frame = encode(msg, session, request_id, flags)?;
    t.send_frame(&frame)
}

/// Receives one frame. Header errors are returned as errors because the
/// stream can no longer be trusted; payload errors are handed back inside
/// [`Received`] so the caller can answer them.
pub fn recv_message(t: &mut dyn Transport, timeout: Option<Duration>) -> Result<Received, TransportError> {
    let frame = t.recv_frame(timeout)?;
    let header = FrameHeader::parse(&frame)?;
    let message = decode_payload(header.msg_type, &frame[HEADER_LEN..]);
    Ok(Received { header, message })
}

/// Sends `msg` and waits for the frame answering `request_id`, discarding
/// any unrelated frames that arrive first.
pub fn call(
    t: &mut dyn Transport,
    msg: &Message,
    session: SessionId,
    request_id: u64,
    flags: u16,
    timeout: Duration,
) -> Result<(FrameHeader, Message), TransportError> {
    send_message(t, msg, session, request_id, flags)?;
    let deadline = Instant::now() + timeout;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Err(TransportError::Timeout);
        }
        let r = recv_message(t, Some(left))?;
        if r.header.request_id == request_id {
            return Ok((r.header, r.message?));
        }
        log::debug!("discarding stale frame for request {}", r.header.request_id);
    }
}

pub struct TcpTransport {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, TransportError> {
        let mut last = None;
        for a in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(s) => return Ok(Self::from_stream(s)),
                Err(e) => last = Some(e),
            }
        }
        Err(last
            .unwrap_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "address resolved to nothing"))
            .into())
    }

    pub fn from_stream(stream: TcpStream) -> Self {
        let _ = stream.set_nodelay(true);
        Self {
            stream,
            buf: Vec::new(),
        }
    }

    /// Length of the first complete frame in the buffer, if there is one.
    fn complete_frame(&self) -> Result<Option<usize>, WireError> {
        if self.buf.len() < HEADER_LEN {
            return Ok(None);
        }
        let h = FrameHeader::parse(&self.buf)?;
        Ok((self.buf.len() >= h.frame_len()).then(|| h.frame_len()))
    }
}

impl Transport for TcpTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.stream.write_all(frame).map_err(|e| match e.kind() {
            io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted => {
                TransportError::Closed
            }
            _ => TransportError::Io(e),
        })
    }

    fn recv_frame(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, TransportError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut chunk = [0u8; 64 * 1024];
        loop {
            if let Some(n) = self.complete_frame()? {
                let rest = self.buf.split_off(n);
                return Ok(std::mem::replace(&mut self.buf, rest));
            }
            let wait = match deadline {
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    if left.is_zero() {
                        return Err(TransportError::Timeout);
                    }
                    Some(left)
                }
                None => None,
            };
            self.stream.set_read_timeout(wait)?;
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(TransportError::Closed),
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Err(TransportError::Timeout)
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) if matches!(e.kind(), io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted) => {
                    return Err(TransportError::Closed)
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn close(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// One end of an in-process transport.
pub struct ChannelTransport {
    tx: Option<Sender<Vec<u8>>>,
    rx: Receiver<Vec<u8>>,
}

/// Two connected in-process endpoints.
pub fn channel_pair() -> (ChannelTransport, ChannelTransport) {
    let (atx, brx) = mpsc::channel();
    let (btx, arx) = mpsc::channel();
    (
        ChannelTransport { tx: Some(atx), rx: arx },
        ChannelTransport { tx: Some(btx), rx: brx },
    )
}

impl Transport for ChannelTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        let tx = self.tx.as_ref().ok_or(TransportError::Closed)?;
        tx.send(frame.to_vec()).map_err(|_| TransportError::Closed)
    }

    fn recv_frame(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, TransportError> {
        match timeout {
            Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => TransportError::Timeout,
                RecvTimeoutError::Disconnected => TransportError::Closed,
            }),
            None => self.rx.recv().map_err(|_| TransportError::Closed),
        }
    }

    fn close(&mut self) {
        self.tx = None;
    }
}
