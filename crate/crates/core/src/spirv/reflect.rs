use std::collections::{BTreeSet, HashMap, HashSet};

use super::consts::{builtin, decoration, execution_mode, execution_model, op, storage_class};
use super::{decode_literal_string, ReflectError, SpirvModule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExecutionModel {
    GLCompute,
    Vertex,
    Fragment,
    Other(u32),
}

impl ExecutionModel {
    fn from_word(w: u32) -> Self {
        match w {
            execution_model::GL_COMPUTE => Self::GLCompute,
            execution_model::VERTEX => Self::Vertex,
            execution_model::FRAGMENT => Self::Fragment,
            other => Self::Other(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryPoint {
    pub name: String,
    pub execution_model: ExecutionModel,
    /// Present iff the entry point is a compute kernel.
    pub local_size: Option<[u32; 3]>,
    pub function_id: u32,
}

/// A (set, binding) descriptor address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DescriptorSlot {
    pub set: u32,
    pub binding: u32,
}

impl DescriptorSlot {
    pub const fn new(set: u32, binding: u32) -> Self {
        Self { set, binding }
    }
}

impl std::fmt::Display for DescriptorSlot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.set, self.binding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindingKind {
    StorageBuffer,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BindingSlot {
    pub set: u32,
    pub binding: u32,
    pub result_id: u32,
    pub kind: BindingKind,
}

impl BindingSlot {
    pub fn slot(&self) -> DescriptorSlot {
        DescriptorSlot::new(self.set, self.binding)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleInfo {
    pub version: (u8, u8),
    pub bound: u32,
    /// In declaration order.
    pub entry_points: Vec<EntryPoint>,
    /// Sorted by (set, binding).
    pub bindings: Vec<BindingSlot>,
}

impl ModuleInfo {
    pub fn entry_point(&self, name: &str) -> Option<&EntryPoint> {
        self.entry_points.iter().find(|e| e.name == name)
    }

    pub fn storage_bindings(&self) -> impl Iterator<Item = &BindingSlot> {
        self.bindings
            .iter()
            .filter(|b| b.kind == BindingKind::StorageBuffer)
    }
}

fn malformed(opcode: u16, reason: &'static str) -> ReflectError {
    ReflectError::MalformedInstruction { opcode, reason }
}

/// Extracts entry points, compute local sizes and descriptor bindings.
///
/// Opcodes the reflector does not care about are skipped by word count.
pub fn reflect(module: &SpirvModule) -> Result<ModuleInfo, ReflectError> {
    let header = module.header();

    let mut entries: Vec<(ExecutionModel, u32, String)> = Vec::new();
    let mut names = HashSet::new();
    let mut local_sizes: HashMap<u32, [u32; 3]> = HashMap::new();
    let mut sets: HashMap<u32, u32> = HashMap::new();
    let mut binds: HashMap<u32, u32> = HashMap::new();
    let mut buffer_blocks: HashSet<u32> = HashSet::new();
    let mut workgroup_size_id = None;
    let mut pointers: HashMap<u32, (u32, u32)> = HashMap::new();
    let mut variables: HashMap<u32, u32> = HashMap::new();
    let mut scalars: HashMap<u32, u32> = HashMap::new();
    let mut composites: HashMap<u32, Vec<u32>> = HashMap::new();

    for inst in module.instructions() {
        let inst = inst?;
        match inst.opcode {
            op::ENTRY_POINT => {
                let model = ExecutionModel::from_word(inst.operand(0)?);
                let func = inst.operand(1)?;
                let (name, _) = decode_literal_string(&inst.operands[2..])
                    .ok_or(malformed(inst.opcode, "entry point name is not a nul-terminated UTF-8 string"))?;
                if name.is_empty() {
                    return Err(malformed(inst.opcode, "empty entry point name"));
                }
                if !names.insert(name.clone()) {
                    return Err(ReflectError::DuplicateEntryPointName(name));
                }
                entries.push((model, func, name));
            }
            op::EXECUTION_MODE => {
                if inst.operand(1)? == execution_mode::LOCAL_SIZE {
                    let size = [inst.operand(2)?, inst.operand(3)?, inst.operand(4)?];
                    local_sizes.insert(inst.operand(0)?, size);
                }
            }
            op::DECORATE => {
                let target = inst.operand(0)?;
                match inst.operand(1)? {
                    decoration::DESCRIPTOR_SET => {
                        sets.insert(target, inst.operand(2)?);
                    }
                    decoration::BINDING => {
                        binds.insert(target, inst.operand(2)?);
                    }
                    decoration::BUFFER_BLOCK => {
                        buffer_blocks.insert(target);
                    }
                    decoration::BUILT_IN if inst.operand(2)? == builtin::WORKGROUP_SIZE => {
                        workgroup_size_id = Some(target);
                    }
                    _ => {}
                }
            }
            op::TYPE_POINTER => {
                pointers.insert(inst.operand(0)?, (inst.operand(1)?, inst.operand(2)?));
            }
            op::VARIABLE => {
                variables.insert(inst.operand(1)?, inst.operand(0)?);
            }
            op::CONSTANT => {
                scalars.insert(inst.operand(1)?, inst.operand(2)?);
            }
            op::CONSTANT_COMPOSITE => {
                if inst.operands.len() < 2 {
                    return Err(malformed(inst.opcode, "missing operand"));
                }
                composites.insert(inst.operand(1)?, inst.operands[2..].to_vec());
            }
            _ => {}
        }
    }

    // A WorkgroupSize built-in overrides LocalSize execution modes.
    let workgroup_size = match workgroup_size_id {
        Some(id) => {
            let parts = composites
                .get(&id)
                .ok_or(malformed(op::DECORATE, "WorkgroupSize is not a constant composite"))?;
            let dims: Option<Vec<u32>> = parts.iter().map(|c| scalars.get(c).copied()).collect();
            match dims.as_deref() {
                Some([x, y, z]) => Some([*x, *y, *z]),
                _ => return Err(malformed(op::CONSTANT_COMPOSITE, "WorkgroupSize needs three scalar constants")),
            }
        }
        None => None,
    };

    let mut entry_points = Vec::with_capacity(entries.len());
    for (model, func, name) in entries {
        let local_size = if model == ExecutionModel::GLCompute {
            let size = workgroup_size
                .or_else(|| local_sizes.get(&func).copied())
                .ok_or(malformed(op::ENTRY_POINT, "compute entry point without a local size"))?;
            if size.contains(&0) {
                return Err(malformed(op::EXECUTION_MODE, "local size component is zero"));
            }
            Some(size)
        } else {
            None
        };
        entry_points.push(EntryPoint {
            name,
            execution_model: model,
            local_size,
            function_id: func,
        });
    }

    let mut ids: BTreeSet<u32> = sets.keys().copied().collect();
    ids.extend(binds.keys().copied());
    let mut seen = HashSet::new();
    let mut bindings = Vec::with_capacity(ids.len());
    for id in ids {
        let set = sets.get(&id).copied().unwrap_or(0);
        let binding = binds.get(&id).copied().unwrap_or(0);
        if !seen.insert((set, binding)) {
            return Err(ReflectError::DuplicateBinding(set, binding));
        }
        let kind = match variables.get(&id).and_then(|ty| pointers.get(ty)) {
            Some(&(storage_class::STORAGE_BUFFER, _)) => BindingKind::StorageBuffer,
            Some(&(storage_class::UNIFORM, pointee)) if buffer_blocks.contains(&pointee) => {
                BindingKind::StorageBuffer
            }
            _ => BindingKind::Other,
        };
        bindings.push(BindingSlot {
            set,
            binding,
            result_id: id,
            kind,
        });
    }
    bindings.sort_by_key(|b| (b.set, b.binding));

    Ok(ModuleInfo {
        version: header.version,
        bound: header.bound,
        entry_points,
        bindings,
    })
}
