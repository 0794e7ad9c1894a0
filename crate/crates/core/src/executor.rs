//! The boundary between sessions and compute backends.
//!
//! An executor hosts modules and pipelines. Buffers are owned by the caller
//! and handed over per dispatch, so the session layer is the one place that
//! serializes them for migration.

use std::collections::HashMap;
use std::time::Instant;

use crate::interp::{dry_run, InterpError, InterpLimits, Program, SubsetReport};
use crate::spirv::{reflect, ContentHash, DescriptorSlot, ExecutionModel, ReflectError, SpirvModule};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capabilities {
    pub backend: String,
    /// False when only a subset of SPIR-V is executable.
    pub full: bool,
    pub max_buffer_bytes: u64,
    pub max_invocations: u64,
}

impl std::fmt::Display for Capabilities {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} max_buffer_bytes={} max_invocations={}",
            self.backend,
            if self.full { "full" } else { "subset" },
            self.max_buffer_bytes,
            self.max_invocations
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineHandle {
    pub id: u64,
    pub module_hash: ContentHash,
    pub entry: String,
    pub local_size: [u32; 3],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TimingBreakdown {
    pub prepare_ns: u64,
    pub execute_ns: u64,
    pub readback_ns: u64,
}

impl TimingBreakdown {
    pub fn total_ns(&self) -> u64 {
        self.prepare_ns + self.execute_ns + self.readback_ns
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecutorError {
    #[error(transparent)]
    Reflect(#[from] ReflectError),
    #[error("BackendReject: {0}")]
    BackendReject(String),
    #[error("UnknownModule: {0}")]
    UnknownModule(ContentHash),
    #[error("EntryNotFound: {0:?}")]
    EntryNotFound(String),
    #[error("NotCompute: {0:?} is not a GLCompute entry point")]
    NotCompute(String),
    #[error("UnknownPipeline: {0}")]
    UnknownPipeline(u64),
    #[error("MissingBinding: set {} binding {}", .0.set, .0.binding)]
    MissingBinding(DescriptorSlot),
    #[error("ExecError: {0}")]
    ExecError(InterpError),
    #[error("BackendUnavailable: {0}")]
    BackendUnavailable(String),
}

pub trait Executor: Send {
    fn capabilities(&self) -> Capabilities;

    /// Makes `module` resident. Loading the same bytes again is a no-op.
    fn load(&mut self, module: &SpirvModule) -> Result<ContentHash, ExecutorError>;

    fn resident_modules(&self) -> usize;

    fn create_pipeline(&mut self, hash: &ContentHash, entry: &str) -> Result<PipelineHandle, ExecutorError>;

    /// Time spent in [`Executor::create_pipeline`] for pipeline `id`.
    fn pipeline_creation_ns(&self, id: u64) -> Option<u64>;

    fn destroy_pipeline(&mut self, id: u64) -> bool;

    /// Runs a pipeline to completion. Results are visible in `bindings` on
    /// return; on error the buffers are left untouched.
    fn dispatch(
        &mut self,
        pipeline: u64,
        groups: [u32; 3],
        bindings: &mut [(DescriptorSlot, &mut [u8])],
    ) -> Result<TimingBreakdown, ExecutorError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendKind {
    #[default]
    Interp,
    Gpu,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "interp" => Ok(Self::Interp),
            "gpu" => Ok(Self::Gpu),
            other => Err(format!("unknown backend {other:?} (expected interp or gpu)")),
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Interp => "interp",
            Self::Gpu => "gpu",
        })
    }
}

/// Opens a fresh executor of the given kind. This build has no GPU backend.
pub fn open_backend(kind: BackendKind, limits: InterpLimits) -> Result<Box<dyn Executor>, ExecutorError> {
    match kind {
        BackendKind::Interp => Ok(Box::new(InterpreterExecutor::new(limits))),
        BackendKind::Gpu => Err(ExecutorError::BackendUnavailable(
            "this build has no GPU backend".into(),
        )),
    }
}

struct Pipeline {
    program: Program,
    created_ns: u64,
}

pub struct InterpreterExecutor {
    limits: InterpLimits,
    max_buffer_bytes: u64,
    modules: HashMap<ContentHash, SpirvModule>,
    pipelines: HashMap<u64, Pipeline>,
    next_pipeline: u64,
}

pub const DEFAULT_MAX_BUFFER_BYTES: u64 = 1 << 28;

fn elapsed_ns(since: Instant) -> u64 {
    since.elapsed().as_nanos().min(u64::MAX as u128) as u64
}

impl InterpreterExecutor {
    pub fn new(limits: InterpLimits) -> Self {
        Self {
            limits,
            max_buffer_bytes: DEFAULT_MAX_BUFFER_BYTES,
            modules: HashMap::new(),
            pipelines: HashMap::new(),
            next_pipeline: 1,
        }
    }

    pub fn limits(&self) -> &InterpLimits {
        &self.limits
    }
}

impl Default for InterpreterExecutor {
    fn default() -> Self {
        Self::new(InterpLimits::default())
    }
}

impl Executor for InterpreterExecutor {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            backend: "reference-interp".into(),
            full: false,
            max_buffer_bytes: self.max_buffer_bytes,
            max_invocations: self.limits.max_invocations,
        }
    }

    fn load(&mut self, module: &SpirvModule) -> Result<ContentHash, ExecutorError> {
        let hash = module.content_hash();
        if self.modules.contains_key(&hash) {
            return Ok(hash);
        }
        let info = reflect(module)?;
        let mut rejected: Vec<u16> = Vec::new();
        for ep in info
            .entry_points
            .iter()
            .filter(|e| e.execution_model == ExecutionModel::GLCompute)
        {
            match dry_run(module, &ep.name) {
                Ok(SubsetReport::Compliant) => {}
                Ok(SubsetReport::NonCompliant(ops)) => {
                    for op in ops {
                        if !rejected.contains(&op) {
                            rejected.push(op);
                        }
                    }
                }
                Err(e) => return Err(ExecutorError::BackendReject(e.to_string())),
            }
        }
        if !rejected.is_empty() {
            let list: Vec<String> = rejected.iter().map(u16::to_string).collect();
            return Err(ExecutorError::BackendReject(format!(
                "unsupported opcodes {}",
                list.join(",")
            )));
        }
        self.modules.insert(hash, module.clone());
        Ok(hash)
    }

    fn resident_modules(&self) -> usize {
        self.modules.len()
    }

    fn create_pipeline(&mut self, hash: &ContentHash, entry: &str) -> Result<PipelineHandle, ExecutorError> {
        let start = Instant::now();
        let module = self
            .modules
            .get(hash)
            .ok_or(ExecutorError::UnknownModule(*hash))?;
        let program = Program::compile(module, entry).map_err(|e| match e {
            InterpError::EntryNotFound(n) => ExecutorError::EntryNotFound(n),
            InterpError::NotCompute(n) => ExecutorError::NotCompute(n),
            InterpError::Reflect(r) => ExecutorError::Reflect(r),
            other => ExecutorError::BackendReject(other.to_string()),
        })?;
        let id = self.next_pipeline;
        self.next_pipeline += 1;
        let handle = PipelineHandle {
            id,
            module_hash: *hash,
            entry: entry.to_string(),
            local_size: program.local_size(),
        };
        self.pipelines.insert(
            id,
            Pipeline {
                program,
                created_ns: elapsed_ns(start),
            },
        );
        Ok(handle)
    }

    fn pipeline_creation_ns(&self, id: u64) -> Option<u64> {
        self.pipelines.get(&id).map(|p| p.created_ns)
    }

    fn destroy_pipeline(&mut self, id: u64) -> bool {
        self.pipelines.remove(&id).is_some()
    }

    fn dispatch(
        &mut self,
        pipeline: u64,
        groups: [u32; 3],
        bindings: &mut [(DescriptorSlot, &mut [u8])],
    ) -> Result<TimingBreakdown, ExecutorError> {
        let p = self
            .pipelines
            .get(&pipeline)
            .ok_or(ExecutorError::UnknownPipeline(pipeline))?;

        // Stage the bound buffers into executor-owned memory, run there and
        // copy results back only when the run succeeds.
        let start = Instant::now();
        let slots = p.program.buffer_slots();
        let mut staged: Vec<(DescriptorSlot, usize, Vec<u8>)> = Vec::with_capacity(slots.len());
        for slot in slots {
            let idx = bindings
                .iter()
                .position(|(s, _)| s == slot)
                .ok_or(ExecutorError::MissingBinding(*slot))?;
            let data = &bindings[idx].1;
            if data.len() as u64 > self.max_buffer_bytes {
                return Err(ExecutorError::ExecError(InterpError::LimitExceeded {
                    what: "buffer bytes",
                    requested: data.len() as u128,
                    limit: self.max_buffer_bytes,
                }));
            }
            staged.push((*slot, idx, data.to_vec()));
        }
        let prepare_ns = elapsed_ns(start);

        let start = Instant::now();
        let mut views: Vec<(DescriptorSlot, &mut [u8])> = staged
            .iter_mut()
            .map(|(s, _, d)| (*s, d.as_mut_slice()))
            .collect();
        p.program
            .run(groups, &mut views, &self.limits)
            .map_err(|e| match e {
                InterpError::MissingBinding(s) => ExecutorError::MissingBinding(s),
                other => ExecutorError::ExecError(other),
            })?;
        let execute_ns = elapsed_ns(start);

        let start = Instant::now();
        for (_, idx, data) in &staged {
            bindings[*idx].1.copy_from_slice(data);
        }
        let readback_ns = elapsed_ns(start);

        Ok(TimingBreakdown {
            prepare_ns,
            execute_ns,
            readback_ns,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn words_le(v: &[u32]) -> Vec<u8> {
        v.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    #[test]
    fn load_is_idempotent() {
        let mut ex = InterpreterExecutor::default();
        let m = fixtures::multiply();
        let h1 = ex.load(&m).unwrap();
        let h2 = ex.load(&m).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1, m.content_hash());
        assert_eq!(ex.resident_modules(), 1);
    }

    #[test]
    fn control_flow_is_rejected_with_opcode() {
        let mut ex = InterpreterExecutor::default();
        match ex.load(&fixtures::bounded_multiply()) {
            Err(ExecutorError::BackendReject(msg)) => assert!(msg.contains("250"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert_eq!(ex.resident_modules(), 0);
    }

    #[test]
    fn corrupted_magic_is_a_reflect_error() {
        let mut bytes = fixtures::multiply().to_bytes();
        bytes[0] ^= 1;
        let err: ExecutorError = SpirvModule::from_bytes(&bytes).unwrap_err().into();
        assert!(matches!(err, ExecutorError::Reflect(ReflectError::BadMagic(_))));
    }

    #[test]
    fn pipeline_errors() {
        let mut ex = InterpreterExecutor::default();
        let h = ex.load(&fixtures::multiply()).unwrap();
        let p = ex.create_pipeline(&h, "main").unwrap();
        assert_eq!(p.local_size, [64, 1, 1]);
        assert!(ex.pipeline_creation_ns(p.id).is_some());
        let q = ex.create_pipeline(&h, "main").unwrap();
        assert_ne!(p.id, q.id);
        assert_eq!(
            ex.create_pipeline(&ContentHash([7; 32]), "main"),
            Err(ExecutorError::UnknownModule(ContentHash([7; 32])))
        );
        assert_eq!(
            ex.create_pipeline(&h, "absent"),
            Err(ExecutorError::EntryNotFound("absent".into()))
        );
    }

    #[test]
    fn multiply_dispatch_matches_oracle() {
        let mut ex = InterpreterExecutor::default();
        let h = ex.load(&fixtures::multiply()).unwrap();
        let p = ex.create_pipeline(&h, "main").unwrap();
        let n = fixtures::MULTIPLY_ELEMENTS;
        let mut a = words_le(&(0..n as u32).collect::<Vec<_>>());
        let mut b = words_le(&vec![3u32; n]);
        let t = ex
            .dispatch(
                p.id,
                fixtures::MULTIPLY_GROUPS,
                &mut [(DescriptorSlot::new(0, 0), &mut a), (DescriptorSlot::new(0, 1), &mut b)],
            )
            .unwrap();
        let expect = words_le(&(0..n as u32).map(|i| i.wrapping_mul(3)).collect::<Vec<_>>());
        assert_eq!(b, expect);
        assert!(t.prepare_ns > 0 && t.execute_ns > 0 && t.readback_ns > 0, "{t:?}");
        assert_eq!(t.total_ns(), t.prepare_ns + t.execute_ns + t.readback_ns);
    }

    #[test]
    fn empty_dispatch_and_missing_binding() {
        let mut ex = InterpreterExecutor::default();
        let h = ex.load(&fixtures::multiply()).unwrap();
        let p = ex.create_pipeline(&h, "main").unwrap();
        let mut a = vec![1u8; 16];
        let mut b = vec![2u8; 16];
        ex.dispatch(
            p.id,
            [0, 1, 1],
            &mut [(DescriptorSlot::new(0, 0), &mut a), (DescriptorSlot::new(0, 1), &mut b)],
        )
        .unwrap();
        assert_eq!((a, b.clone()), (vec![1u8; 16], vec![2u8; 16]));
        let mut a = vec![0u8; 16];
        assert_eq!(
            ex.dispatch(p.id, [1, 1, 1], &mut [(DescriptorSlot::new(0, 0), &mut a)]),
            Err(ExecutorError::MissingBinding(DescriptorSlot::new(0, 1)))
        );
    }

    #[test]
    fn failed_dispatch_leaves_buffers_untouched() {
        let mut ex = InterpreterExecutor::default();
        let h = ex.load(&fixtures::multiply()).unwrap();
        let p = ex.create_pipeline(&h, "main").unwrap();
        // 64 invocations but only 32 elements in b: the run traps midway.
        let mut a = words_le(&[5u32; 64]);
        let mut b = words_le(&[7u32; 32]);
        let before = b.clone();
        let err = ex
            .dispatch(
                p.id,
                [1, 1, 1],
                &mut [(DescriptorSlot::new(0, 0), &mut a), (DescriptorSlot::new(0, 1), &mut b)],
            )
            .unwrap_err();
        assert!(matches!(err, ExecutorError::ExecError(InterpError::OutOfBoundsAccess { .. })));
        assert_eq!(b, before);
    }

    #[test]
    fn capabilities_are_constant() {
        let ex = InterpreterExecutor::default();
        let c = ex.capabilities();
        assert_eq!(c, ex.capabilities());
        assert_eq!(c.backend, "reference-interp");
        assert!(!c.full);
        assert_eq!(c.max_invocations, InterpLimits::default().max_invocations);
    }

    #[test]
    fn gpu_backend_is_unavailable() {
        assert!(matches!(
            open_backend(BackendKind::Gpu, InterpLimits::default()),
            Err(ExecutorError::BackendUnavailable(_))
        ));
    }
}
