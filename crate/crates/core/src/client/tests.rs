use std::sync::atomic::AtomicBool;

use super::*;
use crate::fixtures;
use crate::session::{Server, ServerConfig};
use crate::wire::transport::{channel_pair, ChannelTransport};

fn le(v: impl IntoIterator<Item = u32>) -> Vec<u8> {
    v.into_iter().flat_map(u32::to_le_bytes).collect()
}

fn u32s(b: &[u8]) -> Vec<u32> {
    b.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()
}

fn fast_config() -> ClientConfig {
    ClientConfig {
        heartbeat: HeartbeatConfig {
            interval: Duration::from_millis(20),
            miss_threshold: 3,
        },
        request_timeout: Duration::from_secs(2),
        ..ClientConfig::default()
    }
}

fn serve_channel(server: Arc<Server>) -> ChannelTransport {
    let (a, mut b) = channel_pair();
    std::thread::spawn(move || server.serve_connection(&mut b));
    a
}

/// A transport that can be cut from outside, leaving the server alive.
struct Cuttable {
    inner: ChannelTransport,
    cut: Arc<AtomicBool>,
}

impl Transport for Cuttable {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        if self.cut.load(Ordering::SeqCst) {
            return Err(TransportError::Closed);
        }
        self.inner.send_frame(frame)
    }
    fn recv_frame(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, TransportError> {
        if self.cut.load(Ordering::SeqCst) {
            return Err(TransportError::Closed);
        }
        self.inner.recv_frame(timeout)
    }
}

const N: u32 = 256;

/// Loads multiply with a = i, b = 3 over N elements and returns the
/// pipeline reference.
fn setup_multiply(c: &mut OffloadClient) -> u64 {
    let h = c.load_module(&fixtures::multiply().to_bytes()).unwrap();
    let p = c.create_pipeline(h, "main").unwrap();
    c.alloc_buffer(1, N as u64 * 4).unwrap();
    c.alloc_buffer(2, N as u64 * 4).unwrap();
    c.write_buffer(1, 0, &le(0..N)).unwrap();
    c.write_buffer(2, 0, &le(std::iter::repeat(3).take(N as usize))).unwrap();
    p
}

fn bindings() -> Vec<BindingEntry> {
    vec![
        BindingEntry { set: 0, binding: 0, buffer_id: 1 },
        BindingEntry { set: 0, binding: 1, buffer_id: 2 },
    ]
}

fn groups() -> [u32; 3] {
    [N / 64, 1, 1]
}

#[test]
fn connected_dispatch_is_remote_and_correct() {
    let server = Arc::new(Server::new(ServerConfig::default()).unwrap());
    let mut c = OffloadClient::with_transport(Box::new(serve_channel(server.clone())), fast_config()).unwrap();
    let p = setup_multiply(&mut c);
    let out = c.offload_dispatch(p, groups(), &bindings()).unwrap();
    assert_eq!(out.origin, Origin::Remote);
    assert_eq!(out.staleness, None);
    let b = &out.buffers.iter().find(|(id, _)| *id == 2).unwrap().1;
    assert_eq!(u32s(b), (0..N).map(|i| i.wrapping_mul(3)).collect::<Vec<_>>());
    // The mirror holds what the server acknowledged.
    let sid = c.session_id();
    let s = server.session(sid).unwrap();
    assert_eq!(c.mirror_buffer(2).unwrap().0, s.lock().unwrap().buffer(2).unwrap());
    assert_eq!(c.state(), ConnectionState::Connected);
    c.close();
    assert_eq!(c.state(), ConnectionState::Closed);
    assert!(server.session(sid).is_none());
    assert!(matches!(c.alloc_buffer(9, 4), Err(ClientError::ConnectionClosed)));
}

#[test]
fn killed_server_falls_back_to_local_with_staleness() {
    let server = Arc::new(Server::new(ServerConfig::default()).unwrap());
    let handle = server.clone().spawn_tcp("127.0.0.1:0").unwrap();
    let addr = handle.addr().to_string();
    let mut c = OffloadClient::connect(&addr, ClientConfig::default()).unwrap();
    let p = setup_multiply(&mut c);
    let synced = [1, 2].map(|id| c.mirror_buffer(id).unwrap().1.sync_epoch).into_iter().min();

    let killed = Instant::now();
    handle.shutdown();
    assert!(c.wait_for_state(ConnectionState::Degraded, Duration::from_millis(500)));
    assert!(killed.elapsed() < Duration::from_millis(500), "{:?}", killed.elapsed());
    let ev = c.events().pop().unwrap();
    assert_eq!((ev.from, ev.to), (ConnectionState::Connected, ConnectionState::Degraded));
    assert_eq!(ev.nominal_detection, Some(Duration::from_millis(300)));

    let a = u32s(c.mirror_buffer(1).unwrap().0);
    let b = u32s(c.mirror_buffer(2).unwrap().0);
    let out = c.offload_dispatch(p, groups(), &bindings()).unwrap();
    assert_eq!(out.origin, Origin::LocalDegraded);
    assert_eq!(out.staleness, synced);
    let expect: Vec<u32> = a.iter().zip(&b).map(|(x, y)| x.wrapping_mul(*y)).collect();
    assert_eq!(u32s(&out.buffers[1].1), expect);

    let r = c.read_buffer(2, 0, 8).unwrap();
    assert_eq!(r.origin, Origin::LocalDegraded);
    assert!(r.staleness.is_some());

    assert!(matches!(
        c.create_pipeline(ContentHash([9; 32]), "main"),
        Err(ClientError::NoLocalMirror(_))
    ));
}

#[test]
fn healthy_peer_never_transitions() {
    let server = Arc::new(Server::new(ServerConfig::default()).unwrap());
    let c = OffloadClient::with_transport(Box::new(serve_channel(server)), fast_config()).unwrap();
    std::thread::sleep(Duration::from_millis(600));
    assert_eq!(c.state(), ConnectionState::Connected);
    assert!(c.events().is_empty());
}

#[test]
fn resume_uploads_locally_written_buffers() {
    let server = Arc::new(Server::new(ServerConfig::default()).unwrap());
    let cut = Arc::new(AtomicBool::new(false));
    let link = Cuttable {
        inner: serve_channel(server.clone()),
        cut: cut.clone(),
    };
    let mut c = OffloadClient::with_transport(Box::new(link), fast_config()).unwrap();
    let p = setup_multiply(&mut c);
    let sid = c.session_id();

    cut.store(true, Ordering::SeqCst);
    assert!(c.wait_for_state(ConnectionState::Degraded, Duration::from_secs(1)));
    let local = c.offload_dispatch(p, groups(), &bindings()).unwrap();
    assert_eq!(local.origin, Origin::LocalDegraded);
    assert!(c.mirror_buffer(2).unwrap().1.dirty);

    c.reconnect_with(Box::new(serve_channel(server.clone()))).unwrap();
    assert_eq!(c.state(), ConnectionState::Connected);
    assert_eq!(c.session_id(), sid);
    let s = server.session(sid).unwrap();
    assert_eq!(s.lock().unwrap().buffer(2).unwrap(), local.buffers[1].1.as_slice());
    let meta = c.mirror_buffer(2).unwrap().1;
    assert!(!meta.dirty && meta.on_server);
    let last = c.events().pop().unwrap();
    assert_eq!(last.to, ConnectionState::Connected);

    // Back on the server with the resynchronized data: b = a * 3a.
    let out = c.offload_dispatch(p, groups(), &bindings()).unwrap();
    assert_eq!(out.origin, Origin::Remote);
    let expect: Vec<u32> = (0..N).map(|i| i.wrapping_mul(i.wrapping_mul(3))).collect();
    assert_eq!(u32s(&out.buffers[1].1), expect);
}

#[test]
fn reconnect_to_fresh_server_rebuilds_session() {
    let first = Arc::new(Server::new(ServerConfig::default()).unwrap());
    let handle = first.clone().spawn_tcp("127.0.0.1:0").unwrap();
    let mut c = OffloadClient::connect(&handle.addr().to_string(), fast_config()).unwrap();
    let p = setup_multiply(&mut c);
    let old_sid = c.session_id();
    handle.shutdown();
    assert!(c.wait_for_state(ConnectionState::Degraded, Duration::from_secs(1)));
    // Writes while degraded stay local and mark the buffer.
    c.write_buffer(1, 0, &le([7])).unwrap();
    c.alloc_buffer(3, 16).unwrap();

    let second = Arc::new(Server::new(ServerConfig::default()).unwrap());
    let handle2 = second.clone().spawn_tcp("127.0.0.1:0").unwrap();
    c.reconnect_to(&handle2.addr().to_string()).unwrap();
    assert_ne!(c.session_id(), old_sid);
    let s = second.session(c.session_id()).unwrap();
    for id in [1, 2, 3] {
        assert_eq!(s.lock().unwrap().buffer(id).unwrap(), c.mirror_buffer(id).unwrap().0);
    }
    let out = c.offload_dispatch(p, groups(), &bindings()).unwrap();
    assert_eq!(out.origin, Origin::Remote);
    assert_eq!(u32s(&out.buffers[1].1)[0], 21);
}

#[test]
fn requests_fail_over_without_waiting_for_heartbeats() {
    let server = Arc::new(Server::new(ServerConfig::default()).unwrap());
    let cut = Arc::new(AtomicBool::new(false));
    let link = Cuttable {
        inner: serve_channel(server),
        cut: cut.clone(),
    };
    let mut config = fast_config();
    config.heartbeat.interval = Duration::from_secs(3600);
    let mut c = OffloadClient::with_transport(Box::new(link), config).unwrap();
    let p = setup_multiply(&mut c);
    cut.store(true, Ordering::SeqCst);
    let out = c.offload_dispatch(p, groups(), &bindings()).unwrap();
    assert_eq!(out.origin, Origin::LocalDegraded);
    assert_eq!(c.state(), ConnectionState::Degraded);
}

#[test]
fn cold_start_local_runs_multiply() {
    let n = fixtures::MULTIPLY_ELEMENTS as u32;
    let inputs = vec![
        (DescriptorSlot::new(0, 0), le(0..n)),
        (DescriptorSlot::new(0, 1), le(std::iter::repeat(3).take(n as usize))),
    ];
    let (out, ns) = cold_start_local(
        &fixtures::multiply().to_bytes(),
        "main",
        fixtures::MULTIPLY_GROUPS,
        &inputs,
        InterpLimits::default(),
    )
    .unwrap();
    assert!(ns > 0);
    assert_eq!(u32s(&out[1].1), (0..n).map(|i| i.wrapping_mul(3)).collect::<Vec<_>>());

    let (same, _) = cold_start_local(
        &fixtures::multiply().to_bytes(),
        "main",
        [0, 1, 1],
        &inputs,
        InterpLimits::default(),
    )
    .unwrap();
    assert_eq!(same, inputs);

    let err = cold_start_local(
        &fixtures::bounded_multiply().to_bytes(),
        "main",
        [1, 1, 1],
        &inputs,
        InterpLimits::default(),
    )
    .unwrap_err();
    assert_eq!(err.name(), "BackendReject");
}
