//! The closed table of error codes carried by ERROR frames and printed by
//! the CLI. Codes 0x0001..=0x00FF mirror the module error enums.

use crate::executor::ExecutorError;
use crate::interp::InterpError;
use crate::spirv::ReflectError;
use crate::wire::WireError;

/// (code, name, module)
pub const REGISTRY: &[(u16, &str, &str)] = &[
    (0x01, "TooShort", "spirv"),
    (0x02, "BadMagic", "spirv"),
    (0x03, "BadSchema", "spirv"),
    (0x04, "Misaligned", "spirv"),
    (0x05, "ZeroWordCount", "spirv"),
    (0x06, "TruncatedInstruction", "spirv"),
    (0x07, "DuplicateEntryPointName", "spirv"),
    (0x08, "DuplicateBinding", "spirv"),
    (0x09, "UnsupportedVersion", "spirv"),
    (0x0A, "MalformedInstruction", "spirv"),
    (0x10, "UnsupportedOpcode", "interp"),
    (0x11, "UnsupportedFeature", "interp"),
    (0x12, "MissingBinding", "interp"),
    (0x13, "OutOfBoundsAccess", "interp"),
    (0x14, "LimitExceeded", "interp"),
    (0x15, "EntryNotFound", "interp"),
    (0x16, "NotCompute", "interp"),
    (0x17, "DivideByZero", "interp"),
    (0x18, "Malformed", "interp"),
    (0x20, "BackendReject", "executor"),
    (0x21, "UnknownModule", "executor"),
    (0x22, "UnknownPipeline", "executor"),
    (0x23, "ExecError", "executor"),
    (0x24, "BackendUnavailable", "executor"),
    (0x30, "BadMagic", "wire"),
    (0x31, "BadVersion", "wire"),
    (0x32, "UnknownMsgType", "wire"),
    (0x33, "Truncated", "wire"),
    (0x34, "TrailingBytes", "wire"),
    (0x35, "Oversize", "wire"),
    (0x36, "InvalidField", "wire"),
    (0x40, "UnexpectedMessage", "session"),
    (0x41, "UnknownSession", "session"),
    (0x42, "UnknownBuffer", "session"),
    (0x43, "OutOfRange", "session"),
    (0x44, "Busy", "session"),
    (0x45, "DigestMismatch", "session"),
    (0x46, "FormatVersionUnsupported", "session"),
    (0x47, "BufferExists", "session"),
    (0x48, "AliasedBuffer", "session"),
    (0x49, "HashMismatch", "session"),
    (0x4A, "SnapshotMalformed", "session"),
    (0x4B, "BufferTooLarge", "session"),
    (0x50, "Timeout", "client"),
    (0x51, "ConnectionClosed", "client"),
    (0x52, "NoLocalMirror", "client"),
    (0x53, "Remote", "client"),
    (0x54, "Io", "client"),
    (0x55, "ScriptError", "client"),
    (0x60, "Empty", "bench"),
    (0x61, "InvalidModel", "bench"),
    (0x62, "OutputMismatch", "bench"),
    (0x70, "ConfigError", "cli"),
];

/// Fallback for codes outside the table (for example from a newer peer).
pub const UNKNOWN_NAME: &str = "UnknownError";

pub fn name_of(code: u16) -> &'static str {
    REGISTRY
        .iter()
        .find(|(c, _, _)| *c == code)
        .map(|(_, n, _)| *n)
        .unwrap_or(UNKNOWN_NAME)
}

/// An error with a registry code.
pub trait Registered {
    fn code(&self) -> u16;

    fn name(&self) -> &'static str {
        name_of(self.code())
    }
}

impl Registered for ReflectError {
    fn code(&self) -> u16 {
        match self {
            ReflectError::TooShort(_) => 0x01,
            ReflectError::BadMagic(_) => 0x02,
            ReflectError::BadSchema(_) => 0x03,
            ReflectError::Misaligned(_) => 0x04,
            ReflectError::ZeroWordCount(_) => 0x05,
            ReflectError::TruncatedInstruction { .. } => 0x06,
            ReflectError::DuplicateEntryPointName(_) => 0x07,
            ReflectError::DuplicateBinding(..) => 0x08,
            ReflectError::UnsupportedVersion(..) => 0x09,
            ReflectError::MalformedInstruction { .. } => 0x0A,
        }
    }
}

impl Registered for InterpError {
    fn code(&self) -> u16 {
        match self {
            InterpError::UnsupportedOpcode(_) => 0x10,
            InterpError::UnsupportedFeature(_) => 0x11,
            InterpError::MissingBinding(_) => 0x12,
            InterpError::OutOfBoundsAccess { .. } => 0x13,
            InterpError::LimitExceeded { .. } => 0x14,
            InterpError::EntryNotFound(_) => 0x15,
            InterpError::NotCompute(_) => 0x16,
            InterpError::DivideByZero(_) => 0x17,
            InterpError::Malformed(_) => 0x18,
            InterpError::Reflect(e) => e.code(),
        }
    }
}

impl Registered for ExecutorError {
    fn code(&self) -> u16 {
        match self {
            ExecutorError::Reflect(e) => e.code(),
            ExecutorError::BackendReject(_) => 0x20,
            ExecutorError::UnknownModule(_) => 0x21,
            ExecutorError::EntryNotFound(_) => 0x15,
            ExecutorError::NotCompute(_) => 0x16,
            ExecutorError::UnknownPipeline(_) => 0x22,
            ExecutorError::MissingBinding(_) => 0x12,
            ExecutorError::ExecError(_) => 0x23,
            ExecutorError::BackendUnavailable(_) => 0x24,
        }
    }
}

impl Registered for WireError {
    fn code(&self) -> u16 {
        match self {
            WireError::BadMagic(_) => 0x30,
            WireError::BadVersion(_) => 0x31,
            WireError::UnknownMsgType(_) => 0x32,
            WireError::Truncated { .. } => 0x33,
            WireError::TrailingBytes(_) => 0x34,
            WireError::Oversize(_) => 0x35,
            WireError::InvalidField(_) => 0x36,
        }
    }
}
