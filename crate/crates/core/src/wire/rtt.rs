use std::time::{Duration, Instant};

use super::transport::{recv_message, send_message, Transport, TransportError};
use super::{Message, SessionId};

pub const DEFAULT_RTT_TIMEOUT: Duration = Duration::from_secs(1);

/// Round-trip time of one PING, in nanoseconds. Replies carrying another
/// token are discarded.
pub fn measure_rtt(
    t: &mut dyn Transport,
    session: SessionId,
    request_id: u64,
    token: u64,
    timeout: Duration,
) -> Result<u64, TransportError> {
    let start = Instant::now();
    let deadline = start + timeout;
    send_message(t, &Message::Ping { token }, session, request_id, 0)?;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Err(TransportError::Timeout);
        }
        let r = recv_message(t, Some(left))?;
        if let Ok(Message::Pong { token: got }) = r.message {
            if got == token {
                return Ok(start.elapsed().as_nanos().max(1) as u64);
            }
        }
    }
}

/// Answers PINGs with PONGs until the peer goes away.
pub fn echo_peer(mut t: impl Transport) {
    while let Ok(r) = recv_message(&mut t, None) {
        if let Ok(Message::Ping { token }) = r.message {
            if send_message(&mut t, &Message::Pong { token }, r.header.session_id, r.header.request_id, 0).is_err() {
                break;
            }
        }
    }
}
