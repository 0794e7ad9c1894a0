//! Remoting of SPIR-V compute work between a thin client and an edge server.
//!
//! Peers exchange SPIR-V modules, buffers and dispatch commands over a small
//! binary protocol instead of streaming rendered video. The crate contains
//! every layer: module reflection, a reference interpreter, the executor
//! boundary, the wire codec, server sessions with snapshot-based migration,
//! the client runtime with degraded-mode fallback, and the latency harness.

pub mod bench;
pub mod client;
pub mod error;
pub mod executor;
pub mod fixtures;
pub mod interp;
pub mod session;
pub mod spirv;
pub mod wire;
