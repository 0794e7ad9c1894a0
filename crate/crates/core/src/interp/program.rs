use std::collections::HashMap;

use super::{body_supported, declaration_supported, InterpError, InterpLimits, MemoryTarget};
use crate::spirv::consts::{builtin, decoration, op, storage_class};
use crate::spirv::{reflect, DescriptorSlot, ExecutionModel, Instruction, SpirvModule};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub invocations: u64,
    pub instructions: u64,
}

#[derive(Debug, Clone)]
enum Ty {
    Void,
    Bool,
    Int { signed: bool },
    Float,
    Vector { elem: u32, n: u8 },
    Array { elem: u32, len: u32 },
    RuntimeArray { elem: u32 },
    Struct { members: Vec<u32> },
    Pointer { pointee: u32 },
    Function,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mem {
    Buffer(u16),
    Input,
    Function(u16),
}

#[derive(Debug, Clone, Copy)]
struct Ptr {
    mem: Mem,
    offset: i64,
}

#[derive(Debug, Clone, Copy)]
enum Val {
    Undef,
    Scalar(u32),
    Vector(u8, [u32; 4]),
    Ptr(Ptr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    IAdd,
    ISub,
    IMul,
    UDiv,
    SDiv,
    FAdd,
    FSub,
    FMul,
    FDiv,
}

#[derive(Debug, Clone, Copy)]
struct DynIndex {
    slot: u32,
    signed: bool,
    stride: i64,
    len: Option<u32>,
}

#[derive(Debug, Clone)]
enum Inst {
    Chain {
        result: u32,
        base: u32,
        offset: i64,
        dynamic: Box<[DynIndex]>,
    },
    Load {
        result: u32,
        ptr: u32,
        n: u8,
    },
    Store {
        ptr: u32,
        value: u32,
        n: u8,
    },
    Bin {
        result: u32,
        op: BinOp,
        a: u32,
        b: u32,
    },
    Extract {
        result: u32,
        composite: u32,
        index: u8,
    },
    Return,
}

/// An entry point lowered to a flat instruction list over dense value slots.
#[derive(Debug, Clone)]
pub struct Program {
    local_size: [u32; 3],
    buffer_slots: Vec<DescriptorSlot>,
    initial: Vec<Val>,
    function_vars: Vec<[u32; 4]>,
    insts: Vec<Inst>,
}

fn malformed(reason: &'static str) -> InterpError {
    InterpError::Malformed(reason)
}

/// Compile-time view of the module's declarations.
#[derive(Default)]
struct Decls {
    types: HashMap<u32, Ty>,
    array_strides: HashMap<u32, u32>,
    member_offsets: HashMap<(u32, u32), u32>,
    builtins: HashMap<u32, u32>,
    sets: HashMap<u32, u32>,
    bindings: HashMap<u32, u32>,
}

impl Decls {
    fn ty(&self, id: u32) -> Result<&Ty, InterpError> {
        self.types.get(&id).ok_or(malformed("reference to an undeclared type"))
    }

    /// Components of a loadable type: 1 for scalars, 2..=4 for vectors.
    fn width(&self, id: u32) -> Result<u8, InterpError> {
        match self.ty(id)? {
            Ty::Int { .. } | Ty::Float => Ok(1),
            Ty::Vector { n, .. } => Ok(*n),
            _ => Err(InterpError::UnsupportedFeature(
                "load or store of a non-scalar, non-vector type".into(),
            )),
        }
    }
}

struct Compiler<'m> {
    d: Decls,
    slots: HashMap<u32, u32>,
    initial: Vec<Val>,
    defined: Vec<bool>,
    value_types: HashMap<u32, u32>,
    pointee: HashMap<u32, u32>,
    constants: HashMap<u32, u32>,
    unsupported_globals: HashMap<u32, String>,
    buffer_slots: Vec<DescriptorSlot>,
    function_vars: Vec<[u32; 4]>,
    insts: Vec<Inst>,
    body: Vec<Instruction<'m>>,
}

impl<'m> Compiler<'m> {
    fn slot(&mut self, id: u32) -> u32 {
        if let Some(&s) = self.slots.get(&id) {
            return s;
        }
        let s = self.initial.len() as u32;
        self.slots.insert(id, s);
        self.initial.push(Val::Undef);
        self.defined.push(false);
        s
    }

    fn define(&mut self, id: u32, ty: u32, value: Val) -> Result<u32, InterpError> {
        let s = self.slot(id);
        if self.defined[s as usize] {
            return Err(malformed("result id defined twice"));
        }
        self.defined[s as usize] = true;
        self.initial[s as usize] = value;
        self.value_types.insert(id, ty);
        Ok(s)
    }

    /// Slot of an operand that must already be defined.
    fn use_id(&mut self, id: u32) -> Result<u32, InterpError> {
        if let Some(what) = self.unsupported_globals.get(&id) {
            return Err(InterpError::UnsupportedFeature(what.clone()));
        }
        match self.slots.get(&id) {
            Some(&s) if self.defined[s as usize] => Ok(s),
            _ => Err(malformed("use of an id before its definition")),
        }
    }

    fn declare(&mut self, inst: &Instruction<'_>) -> Result<(), InterpError> {
        let o = |i| inst.operand(i).map_err(InterpError::from);
        match inst.opcode {
            op::DECORATE => {
                let (target, dec) = (o(0)?, o(1)?);
                match dec {
                    decoration::ARRAY_STRIDE => {
                        self.d.array_strides.insert(target, o(2)?);
                    }
                    decoration::BUILT_IN => {
                        self.d.builtins.insert(target, o(2)?);
                    }
                    decoration::DESCRIPTOR_SET => {
                        self.d.sets.insert(target, o(2)?);
                    }
                    decoration::BINDING => {
                        self.d.bindings.insert(target, o(2)?);
                    }
                    _ => {}
                }
            }
            op::MEMBER_DECORATE => {
                if o(2)? == decoration::OFFSET {
                    self.d.member_offsets.insert((o(0)?, o(1)?), o(3)?);
                }
            }
            op::TYPE_VOID => {
                self.d.types.insert(o(0)?, Ty::Void);
            }
            op::TYPE_BOOL => {
                self.d.types.insert(o(0)?, Ty::Bool);
            }
            op::TYPE_INT | op::TYPE_FLOAT => {
                if o(1)? != 32 {
                    return Err(InterpError::UnsupportedFeature(format!(
                        "{}-bit scalar type",
                        o(1)?
                    )));
                }
                let ty = if inst.opcode == op::TYPE_INT {
                    Ty::Int { signed: o(2)? != 0 }
                } else {
                    Ty::Float
                };
                self.d.types.insert(o(0)?, ty);
            }
            op::TYPE_VECTOR => {
                let (elem, n) = (o(1)?, o(2)?);
                if !(2..=4).contains(&n) {
                    return Err(malformed("vector component count outside 2..=4"));
                }
                if !matches!(self.d.ty(elem)?, Ty::Int { .. } | Ty::Float) {
                    return Err(InterpError::UnsupportedFeature("vector of non-scalar".into()));
                }
                self.d.types.insert(o(0)?, Ty::Vector { elem, n: n as u8 });
            }
            op::TYPE_ARRAY => {
                let len = *self
                    .constants
                    .get(&o(2)?)
                    .ok_or(malformed("array length is not a constant"))?;
                self.d.types.insert(o(0)?, Ty::Array { elem: o(1)?, len });
            }
            op::TYPE_RUNTIME_ARRAY => {
                self.d.types.insert(o(0)?, Ty::RuntimeArray { elem: o(1)? });
            }
            op::TYPE_STRUCT => {
                let members = inst.operands.get(1..).unwrap_or_default().to_vec();
                self.d.types.insert(o(0)?, Ty::Struct { members });
            }
            op::TYPE_POINTER => {
                self.d.types.insert(o(0)?, Ty::Pointer { pointee: o(2)? });
            }
            op::TYPE_FUNCTION => {
                self.d.types.insert(o(0)?, Ty::Function);
            }
            op::CONSTANT => {
                let (ty, id) = (o(0)?, o(1)?);
                if !matches!(self.d.ty(ty)?, Ty::Int { .. } | Ty::Float) {
                    return Err(malformed("OpConstant of a non-scalar type"));
                }
                if inst.operands.len() != 3 {
                    return Err(malformed("32-bit constant needs exactly one literal word"));
                }
                let value = o(2)?;
                self.constants.insert(id, value);
                self.define(id, ty, Val::Scalar(value))?;
            }
            op::CONSTANT_COMPOSITE => {
                let (ty, id) = (o(0)?, o(1)?);
                let parts = &inst.operands[2..];
                let value = match self.d.ty(ty)? {
                    Ty::Vector { n, .. } if parts.len() == *n as usize => {
                        let mut c = [0u32; 4];
                        for (dst, part) in c.iter_mut().zip(parts) {
                            *dst = *self
                                .constants
                                .get(part)
                                .ok_or(malformed("vector constant part is not a scalar constant"))?;
                        }
                        Val::Vector(parts.len() as u8, c)
                    }
                    Ty::Vector { .. } => return Err(malformed("vector constant arity mismatch")),
                    _ => Val::Undef,
                };
                self.define(id, ty, value)?;
            }
            op::VARIABLE => self.global_variable(o(0)?, o(1)?, o(2)?)?,
            _ => {}
        }
        Ok(())
    }

    fn global_variable(&mut self, ptr_ty: u32, id: u32, sc: u32) -> Result<(), InterpError> {
        let pointee = match self.d.ty(ptr_ty)? {
            Ty::Pointer { pointee } => *pointee,
            _ => return Err(malformed("variable type is not a pointer")),
        };
        let mem = match sc {
            storage_class::UNIFORM | storage_class::STORAGE_BUFFER => {
                let slot = DescriptorSlot::new(
                    self.d.sets.get(&id).copied().unwrap_or(0),
                    self.d.bindings.get(&id).copied().unwrap_or(0),
                );
                if self.buffer_slots.contains(&slot) {
                    return Err(malformed("two buffer variables share a descriptor slot"));
                }
                if self.buffer_slots.len() >= u16::MAX as usize {
                    return Err(malformed("too many buffer variables"));
                }
                self.buffer_slots.push(slot);
                Mem::Buffer((self.buffer_slots.len() - 1) as u16)
            }
            storage_class::INPUT => match self.d.builtins.get(&id) {
                Some(&builtin::GLOBAL_INVOCATION_ID) => {
                    if !matches!(self.d.ty(pointee)?, Ty::Vector { n: 3, .. }) {
                        return Err(malformed("GlobalInvocationId must be a 3-component vector"));
                    }
                    Mem::Input
                }
                Some(b) => {
                    self.unsupported_globals
                        .insert(id, format!("built-in input {b}"));
                    return Ok(());
                }
                None => {
                    self.unsupported_globals
                        .insert(id, "user-defined input variable".into());
                    return Ok(());
                }
            },
            other => {
                self.unsupported_globals
                    .insert(id, format!("storage class {other}"));
                return Ok(());
            }
        };
        self.pointee.insert(id, pointee);
        self.define(id, ptr_ty, Val::Ptr(Ptr { mem, offset: 0 }))?;
        Ok(())
    }

    fn index_signed(&self, id: u32) -> bool {
        self.value_types
            .get(&id)
            .and_then(|t| self.d.types.get(t))
            .is_some_and(|t| matches!(t, Ty::Int { signed: true }))
    }

    fn access_chain(&mut self, inst: &Instruction<'_>) -> Result<(), InterpError> {
        let o = |i| inst.operand(i).map_err(InterpError::from);
        let (ty, result, base) = (o(0)?, o(1)?, o(2)?);
        let base_slot = self.use_id(base)?;
        let mut current = *self
            .pointee
            .get(&base)
            .ok_or(malformed("access chain base is not a pointer"))?;
        let mut offset: i128 = 0;
        let mut dynamic = Vec::new();
        for &index in &inst.operands[3..] {
            let constant = self.constants.get(&index).map(|&c| {
                if self.index_signed(index) {
                    c as i32 as i128
                } else {
                    c as i128
                }
            });
            let (next, stride, len) = match self.d.ty(current)? {
                Ty::Struct { members } => {
                    let m = constant.ok_or(malformed("struct index is not a constant"))?;
                    let member = usize::try_from(m)
                        .ok()
                        .and_then(|m| members.get(m))
                        .copied()
                        .ok_or(malformed("struct member index out of range"))?;
                    let off = *self
                        .d
                        .member_offsets
                        .get(&(current, m as u32))
                        .ok_or(malformed("struct member without an Offset decoration"))?;
                    offset += off as i128;
                    current = member;
                    continue;
                }
                Ty::Array { elem, len } => {
                    let stride = *self
                        .d
                        .array_strides
                        .get(&current)
                        .ok_or(malformed("array without an ArrayStride decoration"))?;
                    (*elem, stride, Some(*len))
                }
                Ty::RuntimeArray { elem } => {
                    let stride = *self
                        .d
                        .array_strides
                        .get(&current)
                        .ok_or(malformed("array without an ArrayStride decoration"))?;
                    (*elem, stride, None)
                }
                Ty::Vector { elem, n } => (*elem, 4, Some(*n as u32)),
                _ => return Err(malformed("access chain indexes into a scalar")),
            };
            match constant {
                Some(c) if len.is_none_or(|l| c >= 0 && c < l as i128) => {
                    offset += c * stride as i128;
                }
                _ => {
                    let slot = self.use_id(index)?;
                    dynamic.push(DynIndex {
                        slot,
                        signed: self.index_signed(index),
                        stride: stride as i64,
                        len,
                    });
                }
            }
            current = next;
        }
        let offset = i64::try_from(offset).map_err(|_| malformed("constant offset overflow"))?;
        self.pointee.insert(result, current);
        let result = self.define(result, ty, Val::Undef)?;
        self.insts.push(Inst::Chain {
            result,
            base: base_slot,
            offset,
            dynamic: dynamic.into_boxed_slice(),
        });
        Ok(())
    }

    fn body_inst(&mut self, inst: &Instruction<'_>) -> Result<(), InterpError> {
        let o = |i| inst.operand(i).map_err(InterpError::from);
        match inst.opcode {
            op::NOP | op::LINE | op::NO_LINE | op::LABEL => {}
            op::VARIABLE => {
                let (ptr_ty, id, sc) = (o(0)?, o(1)?, o(2)?);
                if sc != storage_class::FUNCTION {
                    return Err(malformed("body variable outside the Function storage class"));
                }
                let pointee = match self.d.ty(ptr_ty)? {
                    Ty::Pointer { pointee } => *pointee,
                    _ => return Err(malformed("variable type is not a pointer")),
                };
                self.d.width(pointee)?;
                let mut init = [0u32; 4];
                if let Some(&init_id) = inst.operands.get(3) {
                    let s = self.use_id(init_id)?;
                    match self.initial[s as usize] {
                        Val::Scalar(v) => init[0] = v,
                        Val::Vector(n, c) => init[..n as usize].copy_from_slice(&c[..n as usize]),
                        _ => return Err(malformed("variable initializer is not a constant")),
                    }
                }
                if self.function_vars.len() >= u16::MAX as usize {
                    return Err(malformed("too many function variables"));
                }
                self.function_vars.push(init);
                let mem = Mem::Function((self.function_vars.len() - 1) as u16);
                self.pointee.insert(id, pointee);
                self.define(id, ptr_ty, Val::Ptr(Ptr { mem, offset: 0 }))?;
            }
            op::ACCESS_CHAIN => self.access_chain(inst)?,
            op::LOAD => {
                let (ty, result, ptr) = (o(0)?, o(1)?, o(2)?);
                let ptr_slot = self.use_id(ptr)?;
                let pointee = *self.pointee.get(&ptr).ok_or(malformed("load through a non-pointer"))?;
                let n = self.d.width(pointee)?;
                let result = self.define(result, ty, Val::Undef)?;
                self.insts.push(Inst::Load { result, ptr: ptr_slot, n });
            }
            op::STORE => {
                let (ptr, value) = (o(0)?, o(1)?);
                let ptr_slot = self.use_id(ptr)?;
                let value = self.use_id(value)?;
                let pointee = *self.pointee.get(&ptr).ok_or(malformed("store through a non-pointer"))?;
                let n = self.d.width(pointee)?;
                self.insts.push(Inst::Store { ptr: ptr_slot, value, n });
            }
            op::COMPOSITE_EXTRACT => {
                let (ty, result, composite) = (o(0)?, o(1)?, o(2)?);
                if inst.operands.len() != 4 {
                    return Err(InterpError::UnsupportedFeature(
                        "nested composite extraction".into(),
                    ));
                }
                let index = o(3)?;
                if index >= 4 {
                    return Err(malformed("composite index out of range"));
                }
                let composite = self.use_id(composite)?;
                let result = self.define(result, ty, Val::Undef)?;
                self.insts.push(Inst::Extract { result, composite, index: index as u8 });
            }
            op::I_ADD | op::I_SUB | op::I_MUL | op::U_DIV | op::S_DIV | op::F_ADD | op::F_SUB
            | op::F_MUL | op::F_DIV => {
                let bin = match inst.opcode {
                    op::I_ADD => BinOp::IAdd,
                    op::I_SUB => BinOp::ISub,
                    op::I_MUL => BinOp::IMul,
                    op::U_DIV => BinOp::UDiv,
                    op::S_DIV => BinOp::SDiv,
                    op::F_ADD => BinOp::FAdd,
                    op::F_SUB => BinOp::FSub,
                    op::F_MUL => BinOp::FMul,
                    _ => BinOp::FDiv,
                };
                let (ty, result) = (o(0)?, o(1)?);
                let a = self.use_id(o(2)?)?;
                let b = self.use_id(o(3)?)?;
                let result = self.define(result, ty, Val::Undef)?;
                self.insts.push(Inst::Bin { result, op: bin, a, b });
            }
            op::RETURN => self.insts.push(Inst::Return),
            other => return Err(InterpError::UnsupportedOpcode(other)),
        }
        Ok(())
    }
}

impl Program {
    /// Lowers `entry` into a runnable program, rejecting anything outside the
    /// supported subset.
    pub fn compile(module: &SpirvModule, entry: &str) -> Result<Self, InterpError> {
        let info = reflect(module)?;
        let ep = info
            .entry_point(entry)
            .ok_or_else(|| InterpError::EntryNotFound(entry.to_string()))?;
        if ep.execution_model != ExecutionModel::GLCompute {
            return Err(InterpError::NotCompute(entry.to_string()));
        }
        let local_size = ep.local_size.ok_or(malformed("compute entry without local size"))?;

        let mut c = Compiler {
            d: Decls::default(),
            slots: HashMap::new(),
            initial: Vec::new(),
            defined: Vec::new(),
            value_types: HashMap::new(),
            pointee: HashMap::new(),
            constants: HashMap::new(),
            unsupported_globals: HashMap::new(),
            buffer_slots: Vec::new(),
            function_vars: Vec::new(),
            insts: Vec::new(),
            body: Vec::new(),
        };

        // Decorations precede the declarations they apply to, so one pass
        // suffices for the module scope.
        let mut scope = 0;
        let mut found = false;
        for inst in module.instructions() {
            let inst = inst?;
            match (scope, inst.opcode) {
                (0, op::FUNCTION) => {
                    if inst.operands.get(1) == Some(&ep.function_id) {
                        scope = 1;
                        found = true;
                    } else {
                        scope = 2;
                    }
                }
                (0, opcode) if !declaration_supported(opcode) => {
                    return Err(InterpError::UnsupportedOpcode(opcode))
                }
                (0, _) => c.declare(&inst)?,
                (1 | 2, op::FUNCTION) => return Err(malformed("nested OpFunction")),
                (1, op::FUNCTION_END) | (2, op::FUNCTION_END) => scope = 0,
                (1, opcode) if !body_supported(opcode) => {
                    return Err(InterpError::UnsupportedOpcode(opcode))
                }
                (1, _) => c.body.push(inst),
                _ => {}
            }
        }
        if !found {
            return Err(malformed("entry point function has no body"));
        }
        if scope != 0 {
            return Err(malformed("function without OpFunctionEnd"));
        }

        let body = std::mem::take(&mut c.body);
        let labels = body.iter().filter(|i| i.opcode == op::LABEL).count();
        if labels != 1 || body.first().map(|i| i.opcode) != Some(op::LABEL) {
            return Err(malformed("entry function must be a single basic block"));
        }
        for inst in &body {
            if matches!(c.insts.last(), Some(Inst::Return)) {
                return Err(malformed("instruction after OpReturn"));
            }
            c.body_inst(inst)?;
        }
        if !matches!(c.insts.last(), Some(Inst::Return)) {
            return Err(malformed("entry function does not end in OpReturn"));
        }

        Ok(Program {
            local_size,
            buffer_slots: c.buffer_slots,
            initial: c.initial,
            function_vars: c.function_vars,
            insts: c.insts,
        })
    }

    pub fn local_size(&self) -> [u32; 3] {
        self.local_size
    }

    /// Descriptor slots of every buffer variable the module declares.
    pub fn buffer_slots(&self) -> &[DescriptorSlot] {
        &self.buffer_slots
    }

    /// Instructions retired by one invocation.
    pub fn instructions_per_invocation(&self) -> usize {
        self.insts.len()
    }

    pub fn run(
        &self,
        groups: [u32; 3],
        buffers: &mut [(DescriptorSlot, &mut [u8])],
        limits: &InterpLimits,
    ) -> Result<ExecStats, InterpError> {
        let total: u128 = groups
            .iter()
            .chain(&self.local_size)
            .map(|&v| v as u128)
            .product();
        if total > limits.max_invocations as u128 {
            return Err(InterpError::LimitExceeded {
                what: "invocations",
                requested: total,
                limit: limits.max_invocations,
            });
        }

        let mut resolved: Vec<Option<&mut [u8]>> = (0..self.buffer_slots.len()).map(|_| None).collect();
        for (slot, data) in buffers.iter_mut() {
            if let Some(i) = self.buffer_slots.iter().position(|s| s == slot) {
                if resolved[i].is_none() {
                    resolved[i] = Some(&mut **data);
                }
            }
        }
        let mut mems = Vec::with_capacity(resolved.len());
        for (i, m) in resolved.into_iter().enumerate() {
            mems.push(m.ok_or(InterpError::MissingBinding(self.buffer_slots[i]))?);
        }

        if total == 0 {
            return Ok(ExecStats::default());
        }
        if self.insts.len() as u64 > limits.max_instructions_per_invocation {
            return Err(InterpError::LimitExceeded {
                what: "instructions per invocation",
                requested: self.insts.len() as u128,
                limit: limits.max_instructions_per_invocation,
            });
        }

        let mut state = State {
            vals: self.initial.clone(),
            fvars: self.function_vars.clone(),
            input: [0; 4],
            mems,
            slots: &self.buffer_slots,
        };
        let mut stats = ExecStats::default();
        let [lx, ly, lz] = self.local_size;
        for gz in 0..groups[2] {
            for gy in 0..groups[1] {
                for gx in 0..groups[0] {
                    for z in 0..lz {
                        for y in 0..ly {
                            for x in 0..lx {
                                state.input = [
                                    gx.wrapping_mul(lx).wrapping_add(x),
                                    gy.wrapping_mul(ly).wrapping_add(y),
                                    gz.wrapping_mul(lz).wrapping_add(z),
                                    0,
                                ];
                                state.fvars.copy_from_slice(&self.function_vars);
                                let retired = state.invoke(&self.insts)?;
                                stats.invocations += 1;
                                stats.instructions += retired;
                            }
                        }
                    }
                }
            }
        }
        Ok(stats)
    }
}

struct State<'b> {
    vals: Vec<Val>,
    fvars: Vec<[u32; 4]>,
    input: [u32; 4],
    mems: Vec<&'b mut [u8]>,
    slots: &'b [DescriptorSlot],
}

impl State<'_> {
    fn invocation(&self) -> [u32; 3] {
        [self.input[0], self.input[1], self.input[2]]
    }

    fn oob(&self, mem: Mem, offset: i128) -> InterpError {
        let target = match mem {
            Mem::Buffer(i) => MemoryTarget::Buffer(self.slots[i as usize]),
            Mem::Input => MemoryTarget::Input,
            Mem::Function(_) => MemoryTarget::Function,
        };
        InterpError::OutOfBoundsAccess {
            target,
            offset,
            invocation: self.invocation(),
        }
    }

    fn pointer(&self, slot: u32) -> Result<Ptr, InterpError> {
        match self.vals[slot as usize] {
            Val::Ptr(p) => Ok(p),
            _ => Err(malformed("operand is not a pointer")),
        }
    }

    /// Word range `[start, start + n)` inside a small register-like memory.
    fn register_range(&self, p: Ptr, n: u8, words: usize) -> Result<usize, InterpError> {
        if p.offset < 0 || p.offset % 4 != 0 || (p.offset / 4) as usize + n as usize > words {
            return Err(self.oob(p.mem, p.offset as i128));
        }
        Ok((p.offset / 4) as usize)
    }

    fn buffer_range(&self, p: Ptr, n: u8, len: usize) -> Result<usize, InterpError> {
        if p.offset < 0 || p.offset as u64 + 4 * n as u64 > len as u64 {
            return Err(self.oob(p.mem, p.offset as i128));
        }
        Ok(p.offset as usize)
    }

    fn read(&self, p: Ptr, n: u8) -> Result<Val, InterpError> {
        let mut c = [0u32; 4];
        match p.mem {
            Mem::Buffer(i) => {
                let buf = &self.mems[i as usize];
                let start = self.buffer_range(p, n, buf.len())?;
                for (k, w) in c.iter_mut().take(n as usize).enumerate() {
                    let at = start + 4 * k;
                    *w = u32::from_le_bytes(buf[at..at + 4].try_into().unwrap());
                }
            }
            Mem::Input => {
                let s = self.register_range(p, n, 3)?;
                c[..n as usize].copy_from_slice(&self.input[s..s + n as usize]);
            }
            Mem::Function(k) => {
                let s = self.register_range(p, n, 4)?;
                c[..n as usize].copy_from_slice(&self.fvars[k as usize][s..s + n as usize]);
            }
        }
        Ok(if n == 1 { Val::Scalar(c[0]) } else { Val::Vector(n, c) })
    }

    fn write(&mut self, p: Ptr, n: u8, value: Val) -> Result<(), InterpError> {
        let c = match (value, n) {
            (Val::Scalar(v), 1) => [v, 0, 0, 0],
            (Val::Vector(m, c), n) if m == n => c,
            _ => return Err(malformed("stored value does not match the pointee type")),
        };
        match p.mem {
            Mem::Buffer(i) => {
                let len = self.mems[i as usize].len();
                let start = self.buffer_range(p, n, len)?;
                let buf = &mut self.mems[i as usize];
                for (k, w) in c.iter().take(n as usize).enumerate() {
                    let at = start + 4 * k;
                    buf[at..at + 4].copy_from_slice(&w.to_le_bytes());
                }
            }
            Mem::Input => return Err(malformed("store to an input variable")),
            Mem::Function(k) => {
                let s = self.register_range(p, n, 4)?;
                self.fvars[k as usize][s..s + n as usize].copy_from_slice(&c[..n as usize]);
            }
        }
        Ok(())
    }

    fn invoke(&mut self, insts: &[Inst]) -> Result<u64, InterpError> {
        let mut retired = 0u64;
        for inst in insts {
            retired += 1;
            match inst {
                Inst::Chain {
                    result,
                    base,
                    offset,
                    dynamic,
                } => {
                    let p = self.pointer(*base)?;
                    let mut off = p.offset as i128 + *offset as i128;
                    for d in dynamic.iter() {
                        let raw = match self.vals[d.slot as usize] {
                            Val::Scalar(v) => v,
                            _ => return Err(malformed("access chain index is not a scalar")),
                        };
                        let idx = if d.signed { raw as i32 as i128 } else { raw as i128 };
                        if let Some(len) = d.len {
                            if idx < 0 || idx >= len as i128 {
                                return Err(self.oob(p.mem, off + idx * d.stride as i128));
                            }
                        }
                        off += idx * d.stride as i128;
                    }
                    let offset = i64::try_from(off).map_err(|_| self.oob(p.mem, off))?;
                    self.vals[*result as usize] = Val::Ptr(Ptr { mem: p.mem, offset });
                }
                Inst::Load { result, ptr, n } => {
                    let p = self.pointer(*ptr)?;
                    self.vals[*result as usize] = self.read(p, *n)?;
                }
                Inst::Store { ptr, value, n } => {
                    let p = self.pointer(*ptr)?;
                    let v = self.vals[*value as usize];
                    self.write(p, *n, v)?;
                }
                Inst::Bin { result, op, a, b } => {
                    let v = binary(*op, self.vals[*a as usize], self.vals[*b as usize])
                        .map_err(|e| match e {
                            InterpError::DivideByZero(_) => InterpError::DivideByZero(self.invocation()),
                            e => e,
                        })?;
                    self.vals[*result as usize] = v;
                }
                Inst::Extract {
                    result,
                    composite,
                    index,
                } => {
                    let v = match self.vals[*composite as usize] {
                        Val::Vector(n, c) if *index < n => Val::Scalar(c[*index as usize]),
                        _ => return Err(malformed("composite extract out of range")),
                    };
                    self.vals[*result as usize] = v;
                }
                Inst::Return => break,
            }
        }
        Ok(retired)
    }
}

fn scalar_op(op: BinOp, a: u32, b: u32) -> Result<u32, InterpError> {
    let f = |x: u32| f32::from_bits(x);
    Ok(match op {
        BinOp::IAdd => a.wrapping_add(b),
        BinOp::ISub => a.wrapping_sub(b),
        BinOp::IMul => a.wrapping_mul(b),
        BinOp::UDiv => a.checked_div(b).ok_or(InterpError::DivideByZero([0; 3]))?,
        BinOp::SDiv => {
            if b == 0 {
                return Err(InterpError::DivideByZero([0; 3]));
            }
            (a as i32).wrapping_div(b as i32) as u32
        }
        BinOp::FAdd => (f(a) + f(b)).to_bits(),
        BinOp::FSub => (f(a) - f(b)).to_bits(),
        BinOp::FMul => (f(a) * f(b)).to_bits(),
        BinOp::FDiv => (f(a) / f(b)).to_bits(),
    })
}

fn binary(op: BinOp, a: Val, b: Val) -> Result<Val, InterpError> {
    match (a, b) {
        (Val::Scalar(x), Val::Scalar(y)) => Ok(Val::Scalar(scalar_op(op, x, y)?)),
        (Val::Vector(n, xs), Val::Vector(m, ys)) if n == m => {
            let mut out = [0u32; 4];
            for k in 0..n as usize {
                out[k] = scalar_op(op, xs[k], ys[k])?;
            }
            Ok(Val::Vector(n, out))
        }
        _ => Err(malformed("arithmetic operand shapes differ")),
    }
}
