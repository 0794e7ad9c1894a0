use super::*;
use crate::executor::{open_backend, BackendKind, InterpreterExecutor};
use crate::fixtures;
use crate::interp::InterpLimits;

fn new_session() -> Session {
    Session::new(SessionId([1; 16]), Box::new(InterpreterExecutor::default()))
}

fn fresh() -> Result<Box<dyn Executor>, ExecutorError> {
    open_backend(BackendKind::Interp, InterpLimits::default())
}

fn le(v: impl IntoIterator<Item = u32>) -> Vec<u8> {
    v.into_iter().flat_map(u32::to_le_bytes).collect()
}

/// Loads multiply, creates its pipeline and fills a = i, b = 3.
fn multiply_session() -> (Session, u64) {
    let mut s = new_session();
    let m = fixtures::multiply();
    s.handle(Message::load_module(&m), &fresh).unwrap();
    let pid = s.create_pipeline(m.content_hash(), "main").unwrap().id;
    let n = fixtures::MULTIPLY_ELEMENTS as u64;
    s.alloc_buffer(1, n * 4).unwrap();
    s.alloc_buffer(2, n * 4).unwrap();
    s.write_buffer(1, 0, &le(0..n as u32)).unwrap();
    s.write_buffer(2, 0, &le(std::iter::repeat(3).take(n as usize))).unwrap();
    (s, pid)
}

fn multiply_bindings() -> Vec<BindingEntry> {
    vec![
        BindingEntry { set: 0, binding: 0, buffer_id: 1 },
        BindingEntry { set: 0, binding: 1, buffer_id: 2 },
    ]
}

#[test]
fn load_twice_reports_cached() {
    let mut s = new_session();
    let m = fixtures::multiply();
    let first = s.handle(Message::load_module(&m), &fresh).unwrap();
    let second = s.handle(Message::load_module(&m), &fresh).unwrap();
    assert_eq!(
        first,
        Message::ModuleAck { hash: m.content_hash().0, already_cached: false }
    );
    assert_eq!(
        second,
        Message::ModuleAck { hash: m.content_hash().0, already_cached: true }
    );
    assert_eq!(s.module_count(), 1);
}

#[test]
fn load_with_wrong_hash_is_rejected() {
    let mut s = new_session();
    let m = fixtures::multiply();
    let err = s.load_module(ContentHash([0; 32]), &m.to_bytes()).unwrap_err();
    assert_eq!(err, SessionError::HashMismatch);
    assert_eq!(s.module_count(), 0);
}

#[test]
fn alloc_zero_fills_and_rejects_duplicates() {
    let mut s = new_session();
    s.alloc_buffer(5, 16).unwrap();
    assert_eq!(s.buffer(5).unwrap(), &[0u8; 16]);
    assert_eq!(s.alloc_buffer(5, 4), Err(SessionError::BufferExists(5)));
    assert_eq!(s.buffer(5).unwrap().len(), 16);
}

#[test]
fn read_beyond_size_is_out_of_range() {
    let mut s = new_session();
    s.alloc_buffer(1, 8).unwrap();
    s.write_buffer(1, 0, &[9; 8]).unwrap();
    let before = s.snapshot().to_bytes();
    let r = s.handle(Message::ReadBuffer { buffer_id: 1, offset: 4, len: 8 }, &fresh);
    assert!(matches!(r, Err(SessionError::OutOfRange { .. })));
    assert_eq!(r.unwrap_err().name(), "OutOfRange");
    assert_eq!(s.snapshot().to_bytes(), before);
    assert!(matches!(
        s.write_buffer(1, u64::MAX, &[1]),
        Err(SessionError::OutOfRange { .. })
    ));
}

#[test]
fn full_script_matches_oracle() {
    let (mut s, pid) = multiply_session();
    let ack = s
        .handle(
            Message::Dispatch {
                pipeline_id: pid,
                groups: fixtures::MULTIPLY_GROUPS,
                bindings: multiply_bindings(),
            },
            &fresh,
        )
        .unwrap();
    assert!(matches!(ack, Message::DispatchAck { .. }));
    let n = fixtures::MULTIPLY_ELEMENTS as u32;
    let out = s
        .handle(Message::ReadBuffer { buffer_id: 2, offset: 0, len: n * 4 }, &fresh)
        .unwrap();
    assert_eq!(out, Message::BufferData { data: le((0..n).map(|i| i.wrapping_mul(3))) });
}

#[test]
fn failed_requests_leave_state_unchanged() {
    let (mut s, pid) = multiply_session();
    let before = s.snapshot().to_bytes();
    let failing = vec![
        Message::CreatePipeline { hash: [0; 32], entry: "main".into() },
        Message::CreatePipeline { hash: fixtures::multiply().content_hash().0, entry: "nope".into() },
        Message::Dispatch { pipeline_id: 99, groups: [1, 1, 1], bindings: multiply_bindings() },
        Message::Dispatch { pipeline_id: pid, groups: [1, 1, 1], bindings: multiply_bindings()[..1].to_vec() },
        Message::Dispatch {
            pipeline_id: pid,
            groups: [1, 1, 1],
            bindings: vec![
                BindingEntry { set: 0, binding: 0, buffer_id: 1 },
                BindingEntry { set: 0, binding: 1, buffer_id: 1 },
            ],
        },
        Message::Dispatch {
            pipeline_id: pid,
            groups: [1, 1, 1],
            bindings: vec![BindingEntry { set: 0, binding: 0, buffer_id: 77 }],
        },
        // Twice the elements the buffers hold: traps half way through.
        Message::Dispatch { pipeline_id: pid, groups: [2048, 1, 1], bindings: multiply_bindings() },
        Message::WriteBuffer { buffer_id: 1, offset: 262_140, data: vec![1; 8] },
        Message::AllocBuffer { buffer_id: 1, size: 4 },
        Message::LoadModule { hash: [1; 32], module: vec![1, 2, 3] },
        Message::load_module(&fixtures::bounded_multiply()),
        Message::ImportSession { snapshot: vec![0; 80] },
        Message::HelloAck { session_id: SessionId::ZERO, capabilities: String::new() },
    ];
    for msg in failing {
        let t = msg.msg_type();
        assert!(s.handle(msg, &fresh).is_err(), "{t} succeeded");
        assert_eq!(s.snapshot().to_bytes(), before, "{t} changed state");
    }
}

#[test]
fn fresh_export_is_empty_and_valid() {
    let mut s = new_session();
    let snap = SessionSnapshot::from_bytes(&s.export()).unwrap();
    assert!(snap.modules.is_empty() && snap.pipelines.is_empty() && snap.buffers.is_empty());
    assert!(s.last_export_ns().is_some());
}

#[test]
fn export_is_deterministic_and_matches_live_reads() {
    let (mut s, pid) = multiply_session();
    s.dispatch(pid, fixtures::MULTIPLY_GROUPS, &multiply_bindings()).unwrap();
    let a = s.export();
    let b = s.export();
    assert_eq!(a, b);
    let snap = SessionSnapshot::from_bytes(&a).unwrap();
    let live = s.read_buffer(2, 0, s.buffer(2).unwrap().len() as u64).unwrap();
    assert_eq!(snap.buffers[1], (2, live.to_vec()));
}

#[test]
fn import_reproduces_state_and_dispatch() {
    let (mut a, pid) = multiply_session();
    let snap = a.export();
    let mut b = Session::new(SessionId([2; 16]), Box::new(InterpreterExecutor::default()));
    let epoch = b.import(&snap, fresh().unwrap()).unwrap();
    assert_eq!(epoch, 1);
    assert_eq!(b.id(), SessionId([2; 16]));
    assert!(b.last_import_ns().is_some());
    for id in [1, 2] {
        assert_eq!(a.buffer(id), b.buffer(id));
    }
    assert_eq!(b.pipeline(pid).unwrap().local_size, [64, 1, 1]);
    a.dispatch(pid, fixtures::MULTIPLY_GROUPS, &multiply_bindings()).unwrap();
    b.dispatch(pid, fixtures::MULTIPLY_GROUPS, &multiply_bindings()).unwrap();
    assert_eq!(a.buffer(2), b.buffer(2));
    // A second migration bumps the epoch again.
    let mut c = new_session();
    assert_eq!(c.import(&b.export(), fresh().unwrap()).unwrap(), 2);
}

#[test]
fn pipeline_ids_continue_after_import() {
    let (mut a, pid) = multiply_session();
    let mut b = new_session();
    b.import(&a.export(), fresh().unwrap()).unwrap();
    let h = fixtures::multiply().content_hash();
    assert_eq!(
        a.create_pipeline(h, "main").unwrap().id,
        b.create_pipeline(h, "main").unwrap().id
    );
    assert!(b.pipeline(pid).is_some());
}

#[test]
fn tampered_snapshot_is_rejected() {
    let (mut a, _) = multiply_session();
    let mut snap = a.export();
    let mid = snap.len() / 2;
    snap[mid] ^= 0x80;
    let mut b = new_session();
    assert_eq!(b.import(&snap, fresh().unwrap()), Err(SessionError::DigestMismatch));
    assert_eq!(b.epoch(), 0);
    assert_eq!(b.module_count(), 0);
}
