use std::sync::Arc;
use std::time::{Duration, Instant};

use super::{BenchError, LatencyReport, Link, Scenario};
use crate::client::ClientError;
use crate::executor::InterpreterExecutor;
use crate::fixtures;
use crate::interp::InterpLimits;
use crate::session::{Server, ServerConfig, Session, SessionSnapshot};
use crate::spirv::{hash_module, ContentHash};
use crate::wire::rtt::measure_rtt;
use crate::wire::transport::channel_pair;
use crate::wire::{BindingEntry, SessionId};

pub const DEFAULT_RESOLUTION: (u32, u32) = (1280, 720);

/// Where the measured work runs.
#[derive(Debug, Clone)]
pub enum Target {
    /// The reference interpreter in this process, with no protocol in
    /// between.
    Local(InterpLimits),
    /// A server reached over TCP.
    Remote { addr: String, timeout: Duration },
}

impl Target {
    /// A protocol link to the target. For a local target this starts a
    /// private in-process server reached over an in-memory channel.
    pub fn link(&self) -> Result<Link, ClientError> {
        match self {
            Target::Local(limits) => {
                let server = Arc::new(
                    Server::new(ServerConfig {
                        limits: *limits,
                        ..ServerConfig::default()
                    })
                    .map_err(ClientError::from)?,
                );
                let (a, mut b) = channel_pair();
                std::thread::spawn(move || server.serve_connection(&mut b));
                Link::open(Box::new(a), Duration::from_secs(60))
            }
            Target::Remote { addr, timeout } => Link::connect(addr, *timeout),
        }
    }
}

/// Session operations common to in-process and remote execution.
trait Ops {
    /// Replaces the current session with an empty one.
    fn fresh(&mut self) -> Result<(), BenchError>;
    fn load(&mut self, bytes: &[u8]) -> Result<ContentHash, BenchError>;
    fn pipeline(&mut self, hash: ContentHash, entry: &str) -> Result<u64, BenchError>;
    fn alloc(&mut self, id: u64, size: u64) -> Result<(), BenchError>;
    fn write(&mut self, id: u64, offset: u64, data: &[u8]) -> Result<(), BenchError>;
    fn dispatch(&mut self, pipeline: u64, groups: [u32; 3], bindings: &[BindingEntry]) -> Result<(), BenchError>;
    fn read(&mut self, id: u64, len: u64) -> Result<Vec<u8>, BenchError>;
    fn finish(&mut self) -> Result<(), BenchError>;
}

struct InProcess {
    session: Session,
    limits: InterpLimits,
}

impl InProcess {
    fn new(limits: InterpLimits) -> Self {
        Self {
            session: Session::new(SessionId::random(), Box::new(InterpreterExecutor::new(limits))),
            limits,
        }
    }
}

impl Ops for InProcess {
    fn fresh(&mut self) -> Result<(), BenchError> {
        *self = InProcess::new(self.limits);
        Ok(())
    }
    fn load(&mut self, bytes: &[u8]) -> Result<ContentHash, BenchError> {
        let h = hash_module(bytes);
        self.session.load_module(h, bytes)?;
        Ok(h)
    }
    fn pipeline(&mut self, hash: ContentHash, entry: &str) -> Result<u64, BenchError> {
        Ok(self.session.create_pipeline(hash, entry)?.id)
    }
    fn alloc(&mut self, id: u64, size: u64) -> Result<(), BenchError> {
        Ok(self.session.alloc_buffer(id, size)?)
    }
    fn write(&mut self, id: u64, offset: u64, data: &[u8]) -> Result<(), BenchError> {
        Ok(self.session.write_buffer(id, offset, data)?)
    }
    fn dispatch(&mut self, pipeline: u64, groups: [u32; 3], bindings: &[BindingEntry]) -> Result<(), BenchError> {
        self.session.dispatch(pipeline, groups, bindings)?;
        Ok(())
    }
    fn read(&mut self, id: u64, len: u64) -> Result<Vec<u8>, BenchError> {
        Ok(self.session.read_buffer(id, 0, len)?.to_vec())
    }
    fn finish(&mut self) -> Result<(), BenchError> {
        Ok(())
    }
}

impl Ops for Link {
    fn fresh(&mut self) -> Result<(), BenchError> {
        self.new_session()?;
        Ok(())
    }
    fn load(&mut self, bytes: &[u8]) -> Result<ContentHash, BenchError> {
        Ok(self.load_module(bytes)?)
    }
    fn pipeline(&mut self, hash: ContentHash, entry: &str) -> Result<u64, BenchError> {
        Ok(self.create_pipeline(hash, entry)?)
    }
    fn alloc(&mut self, id: u64, size: u64) -> Result<(), BenchError> {
        Ok(Link::alloc(self, id, size)?)
    }
    fn write(&mut self, id: u64, offset: u64, data: &[u8]) -> Result<(), BenchError> {
        Ok(Link::write(self, id, offset, data)?)
    }
    fn dispatch(&mut self, pipeline: u64, groups: [u32; 3], bindings: &[BindingEntry]) -> Result<(), BenchError> {
        Ok(Link::dispatch(self, pipeline, groups, bindings)?)
    }
    fn read(&mut self, id: u64, len: u64) -> Result<Vec<u8>, BenchError> {
        Ok(Link::read(self, id, 0, len)?)
    }
    fn finish(&mut self) -> Result<(), BenchError> {
        Ok(self.close_session()?)
    }
}

fn ops_for(target: &Target) -> Result<Box<dyn Ops>, BenchError> {
    Ok(match target {
        Target::Local(limits) => Box::new(InProcess::new(*limits)),
        Target::Remote { .. } => Box::new(target.link()?),
    })
}

fn le_words(v: impl IntoIterator<Item = u32>) -> Vec<u8> {
    v.into_iter().flat_map(u32::to_le_bytes).collect()
}

fn elapsed_ns(start: Instant) -> u64 {
    start.elapsed().as_nanos().max(1) as u64
}

fn binding(b: u32, buffer_id: u64) -> BindingEntry {
    BindingEntry {
        set: 0,
        binding: b,
        buffer_id,
    }
}

/// Times pipeline creation, buffer setup, dispatch and readback of the
/// 64k-element multiply, starting each iteration from an empty session
/// that only holds the uploaded module.
pub fn run_cold_start(target: &Target, iterations: usize, warmup: usize) -> Result<LatencyReport, BenchError> {
    if iterations == 0 {
        return Err(BenchError::Empty);
    }
    let module = fixtures::multiply().to_bytes();
    let n = fixtures::MULTIPLY_ELEMENTS as u32;
    let a = le_words(0..n);
    let b = le_words(std::iter::repeat_n(3, n as usize));
    let expect = le_words((0..n).map(|i| i.wrapping_mul(3)));
    let bytes = n as u64 * 4;
    let bindings = [binding(0, 1), binding(1, 2)];
    let mut ops = ops_for(target)?;
    let mut samples = Vec::with_capacity(iterations);
    for i in 0..warmup + iterations {
        if i > 0 {
            ops.fresh()?;
        }
        let hash = ops.load(&module)?;
        let start = Instant::now();
        let p = ops.pipeline(hash, "main")?;
        ops.alloc(1, bytes)?;
        ops.alloc(2, bytes)?;
        ops.write(1, 0, &a)?;
        ops.write(2, 0, &b)?;
        ops.dispatch(p, fixtures::MULTIPLY_GROUPS, &bindings)?;
        let out = ops.read(2, bytes)?;
        let ns = elapsed_ns(start);
        ops.finish()?;
        if out != expect {
            return Err(BenchError::OutputMismatch(format!("cold start iteration {i}")));
        }
        if i >= warmup {
            samples.push(ns);
        }
    }
    LatencyReport::new(Scenario::ColdStart, None, samples)
}

/// Expected framebuffer word `i` of frame `f`.
pub fn frame_pixel(i: u32, f: u32) -> u32 {
    i.wrapping_mul(fixtures::FRAME_PIXEL_MUL)
        .wrapping_add(f.wrapping_mul(fixtures::FRAME_INDEX_MUL))
}

/// Times per-frame parameter upload, dispatch and framebuffer readback on a
/// warm pipeline.
pub fn run_frame_draw(
    target: &Target,
    frames: usize,
    warmup: usize,
    (width, height): (u32, u32),
) -> Result<LatencyReport, BenchError> {
    if frames == 0 {
        return Err(BenchError::Empty);
    }
    let pixels = width as u64 * height as u64;
    let fb_bytes = pixels * 4;
    let groups = fixtures::frame_groups(width, height);
    let mut ops = ops_for(target)?;
    let hash = ops.load(&fixtures::frame().to_bytes())?;
    let p = ops.pipeline(hash, "main")?;
    ops.alloc(1, 4)?;
    ops.alloc(2, fb_bytes)?;
    let bindings = [binding(0, 1), binding(1, 2)];
    let mut samples = Vec::with_capacity(frames);
    for f in 0..(warmup + frames) as u32 {
        let start = Instant::now();
        ops.write(1, 0, &f.to_le_bytes())?;
        ops.dispatch(p, groups, &bindings)?;
        let fb = ops.read(2, fb_bytes)?;
        let ns = elapsed_ns(start);
        let ok = fb
            .chunks_exact(4)
            .enumerate()
            .all(|(i, w)| u32::from_le_bytes(w.try_into().unwrap()) == frame_pixel(i as u32, f));
        if !ok {
            return Err(BenchError::OutputMismatch(format!("frame {f}")));
        }
        if f as usize >= warmup {
            samples.push(ns);
        }
    }
    ops.finish()?;
    LatencyReport::new(Scenario::FrameDraw, None, samples)
}

/// Round-trip time of PING frames.
pub fn run_rtt(target: &Target, iterations: usize, warmup: usize) -> Result<LatencyReport, BenchError> {
    if iterations == 0 {
        return Err(BenchError::Empty);
    }
    let mut link = target.link()?;
    let session = link.session();
    let mut samples = Vec::with_capacity(iterations);
    for i in 0..warmup + iterations {
        let id = link.next_request_id();
        let ns = measure_rtt(link.transport(), session, id, id, Duration::from_secs(5))?;
        if i >= warmup {
            samples.push(ns);
        }
    }
    link.close_session()?;
    LatencyReport::new(Scenario::Rtt, None, samples)
}

/// Elements per buffer in the migration session: two buffers of 128 KiB.
pub const MIGRATION_ELEMENTS: u32 = 32 * 1024;

/// Fills the link's session with the multiply kernel, its pipeline and
/// 256 KiB of buffers holding the result of one dispatch.
pub fn populate_migration_session(link: &mut Link) -> Result<(), BenchError> {
    let n = MIGRATION_ELEMENTS;
    let h = link.load_module(&fixtures::multiply().to_bytes())?;
    let p = link.create_pipeline(h, "main")?;
    link.alloc(1, n as u64 * 4)?;
    link.alloc(2, n as u64 * 4)?;
    link.write(1, 0, &le_words(0..n))?;
    link.write(2, 0, &le_words(std::iter::repeat_n(3, n as usize)))?;
    link.dispatch(p, [n / 64, 1, 1], &[binding(0, 1), binding(1, 2)])?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MigrationReport {
    pub export: LatencyReport,
    pub transfer: LatencyReport,
    pub import: LatencyReport,
    pub total: LatencyReport,
    /// Tampered imports, all of which were rejected. They are excluded
    /// from the distributions.
    pub rejected: usize,
    pub snapshot_bytes: usize,
}

impl MigrationReport {
    pub fn phases(&self) -> [&LatencyReport; 4] {
        [&self.export, &self.transfer, &self.import, &self.total]
    }
}

/// Repeats export from `a`, transfer and import into a fresh session on
/// `b`. Export is the EXPORT round trip, import is the time the receiving
/// server spent importing, and transfer is the rest of the IMPORT round
/// trip. Every `tamper_every`-th cycle flips one snapshot byte and must
/// be rejected.
pub fn run_migration_bench(
    a: &mut Link,
    b: &mut Link,
    iterations: usize,
    warmup: usize,
    tamper_every: Option<usize>,
) -> Result<MigrationReport, BenchError> {
    if iterations == 0 {
        return Err(BenchError::Empty);
    }
    let mut export = Vec::with_capacity(iterations);
    let mut transfer = Vec::with_capacity(iterations);
    let mut import = Vec::with_capacity(iterations);
    let mut total = Vec::with_capacity(iterations);
    let mut rejected = 0;
    let mut snapshot_bytes = 0;
    let mut cycle = 0usize;
    let mut verified = false;
    while total.len() < iterations {
        cycle += 1;
        let tamper = tamper_every.is_some_and(|k| k > 0 && cycle % k == 0);
        b.new_session()?;
        let t0 = Instant::now();
        let mut snap = a.export()?;
        let t1 = Instant::now();
        snapshot_bytes = snap.len();
        if tamper {
            let mid = snap.len() / 2;
            snap[mid] ^= 0x01;
            match b.import(snap) {
                Err(ClientError::Remote { name: "DigestMismatch", .. }) => rejected += 1,
                Err(e) => return Err(e.into()),
                Ok(_) => return Err(BenchError::OutputMismatch("tampered snapshot was accepted".into())),
            }
            b.close_session()?;
            continue;
        }
        let import_ns = b.import(snap.clone())?;
        let t2 = Instant::now();
        if !verified {
            let there = SessionSnapshot::from_bytes(&b.export()?)?;
            let here = SessionSnapshot::from_bytes(&snap)?;
            if (there.modules, there.pipelines, there.buffers) != (here.modules, here.pipelines, here.buffers) {
                return Err(BenchError::OutputMismatch("imported session differs from export".into()));
            }
            verified = true;
        }
        b.close_session()?;
        if cycle > warmup {
            let round_trip = (t2 - t1).as_nanos() as u64;
            export.push((t1 - t0).as_nanos().max(1) as u64);
            import.push(import_ns.max(1));
            transfer.push(round_trip.saturating_sub(import_ns).max(1));
            total.push((t2 - t0).as_nanos().max(1) as u64);
        }
    }
    Ok(MigrationReport {
        export: LatencyReport::new(Scenario::Migration, Some("export"), export)?,
        transfer: LatencyReport::new(Scenario::Migration, Some("transfer"), transfer)?,
        import: LatencyReport::new(Scenario::Migration, Some("import"), import)?,
        total: LatencyReport::new(Scenario::Migration, Some("total"), total)?,
        rejected,
        snapshot_bytes,
    })
}
