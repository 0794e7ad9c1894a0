//! A small SPIR-V assembler. Instructions are appended to the section the
//! logical module layout requires, so callers can emit them in any order.

use super::consts::{self, op};
use super::SpirvModule;

#[derive(Default)]
struct Sections {
    capabilities: Vec<u32>,
    ext_imports: Vec<u32>,
    memory_model: Vec<u32>,
    entry_points: Vec<u32>,
    execution_modes: Vec<u32>,
    debug: Vec<u32>,
    annotations: Vec<u32>,
    globals: Vec<u32>,
    functions: Vec<u32>,
}

pub struct ModuleBuilder {
    version: u32,
    generator: u32,
    next_id: u32,
    s: Sections,
}

impl Default for ModuleBuilder {
    fn default() -> Self {
        Self::new()
    }
}

pub fn encode_string(s: &str) -> Vec<u32> {
    let mut bytes = s.as_bytes().to_vec();
    bytes.push(0);
    while bytes.len() % 4 != 0 {
        bytes.push(0);
    }
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn push(section: &mut Vec<u32>, opcode: u16, operands: &[u32]) {
    let count = operands.len() as u32 + 1;
    section.push((count << 16) | opcode as u32);
    section.extend_from_slice(operands);
}

impl ModuleBuilder {
    /// A SPIR-V 1.0 module.
    pub fn new() -> Self {
        Self {
            version: 0x0001_0000,
            generator: 0,
            next_id: 1,
            s: Sections::default(),
        }
    }

    pub fn version(mut self, major: u8, minor: u8) -> Self {
        self.version = ((major as u32) << 16) | ((minor as u32) << 8);
        self
    }

    pub fn id(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn capability(&mut self, cap: u32) {
        push(&mut self.s.capabilities, op::CAPABILITY, &[cap]);
    }

    pub fn ext_inst_import(&mut self, name: &str) -> u32 {
        let id = self.id();
        let mut ops = vec![id];
        ops.extend(encode_string(name));
        push(&mut self.s.ext_imports, op::EXT_INST_IMPORT, &ops);
        id
    }

    pub fn memory_model(&mut self, addressing: u32, model: u32) {
        push(&mut self.s.memory_model, op::MEMORY_MODEL, &[addressing, model]);
    }

    pub fn entry_point(&mut self, model: u32, function: u32, name: &str, interface: &[u32]) {
        let mut ops = vec![model, function];
        ops.extend(encode_string(name));
        ops.extend_from_slice(interface);
        push(&mut self.s.entry_points, op::ENTRY_POINT, &ops);
    }

    pub fn execution_mode(&mut self, function: u32, mode: u32, literals: &[u32]) {
        let mut ops = vec![function, mode];
        ops.extend_from_slice(literals);
        push(&mut self.s.execution_modes, op::EXECUTION_MODE, &ops);
    }

    pub fn source(&mut self, language: u32, version: u32) {
        push(&mut self.s.debug, op::SOURCE, &[language, version]);
    }

    pub fn name(&mut self, target: u32, name: &str) {
        let mut ops = vec![target];
        ops.extend(encode_string(name));
        push(&mut self.s.debug, op::NAME, &ops);
    }

    pub fn member_name(&mut self, ty: u32, member: u32, name: &str) {
        let mut ops = vec![ty, member];
        ops.extend(encode_string(name));
        push(&mut self.s.debug, op::MEMBER_NAME, &ops);
    }

    pub fn decorate(&mut self, target: u32, decoration: u32, literals: &[u32]) {
        let mut ops = vec![target, decoration];
        ops.extend_from_slice(literals);
        push(&mut self.s.annotations, op::DECORATE, &ops);
    }

    pub fn member_decorate(&mut self, ty: u32, member: u32, decoration: u32, literals: &[u32]) {
        let mut ops = vec![ty, member, decoration];
        ops.extend_from_slice(literals);
        push(&mut self.s.annotations, op::MEMBER_DECORATE, &ops);
    }

    fn global(&mut self, opcode: u16, rest: &[u32]) -> u32 {
        let id = self.id();
        let mut ops = vec![id];
        ops.extend_from_slice(rest);
        push(&mut self.s.globals, opcode, &ops);
        id
    }

    pub fn type_void(&mut self) -> u32 {
        self.global(op::TYPE_VOID, &[])
    }

    pub fn type_bool(&mut self) -> u32 {
        self.global(op::TYPE_BOOL, &[])
    }

    pub fn type_int(&mut self, width: u32, signed: bool) -> u32 {
        self.global(op::TYPE_INT, &[width, signed as u32])
    }

    pub fn type_float(&mut self, width: u32) -> u32 {
        self.global(op::TYPE_FLOAT, &[width])
    }

    pub fn type_vector(&mut self, component: u32, count: u32) -> u32 {
        self.global(op::TYPE_VECTOR, &[component, count])
    }

    pub fn type_runtime_array(&mut self, element: u32) -> u32 {
        self.global(op::TYPE_RUNTIME_ARRAY, &[element])
    }

    pub fn type_struct(&mut self, members: &[u32]) -> u32 {
        self.global(op::TYPE_STRUCT, members)
    }

    pub fn type_pointer(&mut self, storage_class: u32, pointee: u32) -> u32 {
        self.global(op::TYPE_POINTER, &[storage_class, pointee])
    }

    pub fn type_function(&mut self, ret: u32, params: &[u32]) -> u32 {
        let mut ops = vec![ret];
        ops.extend_from_slice(params);
        self.global(op::TYPE_FUNCTION, &ops)
    }

    /// Result-type-first global such as `OpConstant` or `OpVariable`.
    fn typed_global(&mut self, opcode: u16, ty: u32, rest: &[u32]) -> u32 {
        let id = self.id();
        let mut ops = vec![ty, id];
        ops.extend_from_slice(rest);
        push(&mut self.s.globals, opcode, &ops);
        id
    }

    pub fn constant(&mut self, ty: u32, value: u32) -> u32 {
        self.typed_global(op::CONSTANT, ty, &[value])
    }

    pub fn spec_constant(&mut self, ty: u32, value: u32) -> u32 {
        self.typed_global(op::SPEC_CONSTANT, ty, &[value])
    }

    pub fn constant_composite(&mut self, ty: u32, parts: &[u32]) -> u32 {
        self.typed_global(op::CONSTANT_COMPOSITE, ty, parts)
    }

    pub fn variable(&mut self, pointer_ty: u32, storage_class: u32) -> u32 {
        self.typed_global(op::VARIABLE, pointer_ty, &[storage_class])
    }

    pub fn begin_function(&mut self, ret: u32, fn_ty: u32) -> u32 {
        let id = self.id();
        push(&mut self.s.functions, op::FUNCTION, &[ret, id, 0, fn_ty]);
        id
    }

    /// Begins a function whose id was reserved earlier (entry points are
    /// usually declared before their body).
    pub fn begin_function_with_id(&mut self, id: u32, ret: u32, fn_ty: u32) {
        push(&mut self.s.functions, op::FUNCTION, &[ret, id, 0, fn_ty]);
    }

    pub fn label(&mut self) -> u32 {
        let id = self.id();
        push(&mut self.s.functions, op::LABEL, &[id]);
        id
    }

    pub fn local_variable(&mut self, pointer_ty: u32) -> u32 {
        self.body(op::VARIABLE, pointer_ty, &[consts::storage_class::FUNCTION])
    }

    /// A body instruction with a result type and result id.
    pub fn body(&mut self, opcode: u16, ty: u32, rest: &[u32]) -> u32 {
        let id = self.id();
        let mut ops = vec![ty, id];
        ops.extend_from_slice(rest);
        push(&mut self.s.functions, opcode, &ops);
        id
    }

    /// A body instruction with no result.
    pub fn body_void(&mut self, opcode: u16, operands: &[u32]) {
        push(&mut self.s.functions, opcode, operands);
    }

    pub fn access_chain(&mut self, ty: u32, base: u32, indices: &[u32]) -> u32 {
        let mut rest = vec![base];
        rest.extend_from_slice(indices);
        self.body(op::ACCESS_CHAIN, ty, &rest)
    }

    pub fn load(&mut self, ty: u32, pointer: u32) -> u32 {
        self.body(op::LOAD, ty, &[pointer])
    }

    pub fn store(&mut self, pointer: u32, value: u32) {
        self.body_void(op::STORE, &[pointer, value]);
    }

    pub fn binary(&mut self, opcode: u16, ty: u32, a: u32, b: u32) -> u32 {
        self.body(opcode, ty, &[a, b])
    }

    pub fn ret(&mut self) {
        self.body_void(op::RETURN, &[]);
    }

    pub fn end_function(&mut self) {
        self.body_void(op::FUNCTION_END, &[]);
    }

    /// Appends an arbitrary instruction to the global section.
    pub fn raw(&mut self, opcode: u16, operands: &[u32]) {
        push(&mut self.s.globals, opcode, operands);
    }

    pub fn finish(self) -> SpirvModule {
        let mut words = vec![consts::MAGIC, self.version, self.generator, self.next_id, 0];
        let s = self.s;
        for section in [
            s.capabilities,
            s.ext_imports,
            s.memory_model,
            s.entry_points,
            s.execution_modes,
            s.debug,
            s.annotations,
            s.globals,
            s.functions,
        ] {
            words.extend(section);
        }
        SpirvModule::from_words(words).expect("builder emits a valid header")
    }
}
