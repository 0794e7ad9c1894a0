//! Deterministic reference interpreter for a straight-line compute subset
//! of SPIR-V.
//!
//! Invocations run one at a time: workgroups in x-fastest order, and inside
//! each workgroup the local invocations in x-fastest order. Kernels whose
//! invocations write disjoint buffer ranges therefore produce exactly what a
//! GPU produces; racy kernels get this particular serialization.
//!
//! Shared memory, barriers and atomics are not modelled. Adding them would
//! need a per-workgroup scheduler instead of the flat loop in
//! [`Program::run`].

mod program;

use crate::spirv::consts::op;
use crate::spirv::{DescriptorSlot, ReflectError, SpirvModule};

pub use program::{ExecStats, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterpLimits {
    pub max_invocations: u64,
    pub max_instructions_per_invocation: u64,
}

impl Default for InterpLimits {
    fn default() -> Self {
        Self {
            max_invocations: 1 << 20,
            max_instructions_per_invocation: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InterpError {
    #[error("UnsupportedOpcode: {0}")]
    UnsupportedOpcode(u16),
    #[error("UnsupportedFeature: {0}")]
    UnsupportedFeature(String),
    #[error("MissingBinding: set {} binding {}", .0.set, .0.binding)]
    MissingBinding(DescriptorSlot),
    #[error("OutOfBoundsAccess: {target} offset {offset} (invocation {invocation:?})")]
    OutOfBoundsAccess {
        target: MemoryTarget,
        offset: i128,
        invocation: [u32; 3],
    },
    #[error("LimitExceeded: {what} {requested} > {limit}")]
    LimitExceeded {
        what: &'static str,
        requested: u128,
        limit: u64,
    },
    #[error("EntryNotFound: {0:?}")]
    EntryNotFound(String),
    #[error("NotCompute: {0:?} is not a GLCompute entry point")]
    NotCompute(String),
    #[error("DivideByZero (invocation {0:?})")]
    DivideByZero([u32; 3]),
    #[error("Malformed: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Reflect(#[from] ReflectError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryTarget {
    Buffer(DescriptorSlot),
    Input,
    Function,
}

impl std::fmt::Display for MemoryTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Buffer(s) => write!(f, "buffer {s}"),
            Self::Input => f.write_str("input variable"),
            Self::Function => f.write_str("function variable"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubsetReport {
    Compliant,
    /// Distinct unsupported opcodes in order of first appearance.
    NonCompliant(Vec<u16>),
}

impl SubsetReport {
    pub fn is_compliant(&self) -> bool {
        matches!(self, Self::Compliant)
    }
}

/// Module-level instructions the interpreter understands or can ignore.
pub(crate) fn declaration_supported(opcode: u16) -> bool {
    matches!(
        opcode,
        op::NOP
            | op::SOURCE_CONTINUED
            | op::SOURCE
            | op::SOURCE_EXTENSION
            | op::NAME
            | op::MEMBER_NAME
            | op::STRING
            | op::LINE
            | op::NO_LINE
            | op::MODULE_PROCESSED
            | op::EXTENSION
            | op::EXT_INST_IMPORT
            | op::MEMORY_MODEL
            | op::ENTRY_POINT
            | op::EXECUTION_MODE
            | op::CAPABILITY
            | op::DECORATE
            | op::MEMBER_DECORATE
            | op::TYPE_VOID
            | op::TYPE_BOOL
            | op::TYPE_INT
            | op::TYPE_FLOAT
            | op::TYPE_VECTOR
            | op::TYPE_ARRAY
            | op::TYPE_RUNTIME_ARRAY
            | op::TYPE_STRUCT
            | op::TYPE_POINTER
            | op::TYPE_FUNCTION
            | op::CONSTANT
            | op::CONSTANT_COMPOSITE
            | op::VARIABLE
            | op::FUNCTION
            | op::FUNCTION_END
    )
}

/// Instructions allowed inside the entry function body.
pub(crate) fn body_supported(opcode: u16) -> bool {
    matches!(
        opcode,
        op::NOP
            | op::LINE
            | op::NO_LINE
            | op::LABEL
            | op::VARIABLE
            | op::ACCESS_CHAIN
            | op::LOAD
            | op::STORE
            | op::COMPOSITE_EXTRACT
            | op::I_ADD
            | op::I_SUB
            | op::I_MUL
            | op::U_DIV
            | op::S_DIV
            | op::F_ADD
            | op::F_SUB
            | op::F_MUL
            | op::F_DIV
            | op::RETURN
            | op::FUNCTION_END
    )
}

/// Checks whether `entry` stays inside the supported subset, without
/// executing anything.
pub fn dry_run(module: &SpirvModule, entry: &str) -> Result<SubsetReport, InterpError> {
    let info = crate::spirv::reflect(module)?;
    let ep = info
        .entry_point(entry)
        .ok_or_else(|| InterpError::EntryNotFound(entry.to_string()))?;
    let mut unsupported: Vec<u16> = Vec::new();
    let mut note = |opcode: u16| {
        if !unsupported.contains(&opcode) {
            unsupported.push(opcode);
        }
    };
    // 0: module scope, 1: inside the entry function, 2: inside another function.
    let mut scope = 0;
    for inst in module.instructions() {
        let inst = inst?;
        match (scope, inst.opcode) {
            (0, op::FUNCTION) => {
                scope = if inst.operands.get(1) == Some(&ep.function_id) { 1 } else { 2 };
            }
            (0, opcode) if !declaration_supported(opcode) => note(opcode),
            (1, op::FUNCTION_END) | (2, op::FUNCTION_END) => scope = 0,
            (1, opcode) if !body_supported(opcode) => note(opcode),
            _ => {}
        }
    }
    Ok(if unsupported.is_empty() {
        SubsetReport::Compliant
    } else {
        SubsetReport::NonCompliant(unsupported)
    })
}

/// Compiles and runs `entry` once over `buffers`.
pub fn execute(
    module: &SpirvModule,
    entry: &str,
    groups: [u32; 3],
    buffers: &mut [(DescriptorSlot, &mut [u8])],
    limits: &InterpLimits,
) -> Result<ExecStats, InterpError> {
    Program::compile(module, entry)?.run(groups, buffers, limits)
}
