//! Fixture compute kernels.
//!
//! Each kernel is assembled instruction-for-instruction in the shape an
//! unoptimized GLSL 450 front end emits for Vulkan 1.0: `Uniform` storage
//! class with `BufferBlock` structs, a `Function` variable for the
//! invocation index, and a `WorkgroupSize` built-in constant. The GLSL each
//! one corresponds to is quoted above its builder.

use crate::spirv::builder::ModuleBuilder;
use crate::spirv::consts::{
    builtin, capability, decoration, execution_mode, execution_model, op, storage_class,
    ADDRESSING_LOGICAL, MEMORY_MODEL_GLSL450, SOURCE_LANGUAGE_GLSL,
};
use crate::spirv::SpirvModule;

/// Elements in the canonical multiply workload.
pub const MULTIPLY_ELEMENTS: usize = 65_536;
/// Workgroup count covering [`MULTIPLY_ELEMENTS`] with a local size of 64.
pub const MULTIPLY_GROUPS: [u32; 3] = [1024, 1, 1];
/// Multiplier constant used by the saxpy-style kernel.
pub const SAXPY_ALPHA: f32 = 2.5;
/// Value written by the fill kernel.
pub const FILL_VALUE: u32 = 0xDEAD_BEEF;
/// Row width, in elements, of the two-dimensional fill kernel.
pub const FILL_ROW: u32 = 64;
/// Per-pixel hash multiplier of the frame kernel.
pub const FRAME_PIXEL_MUL: u32 = 2_654_435_761;
/// Per-frame offset multiplier of the frame kernel.
pub const FRAME_INDEX_MUL: u32 = 0x0101_0101;

pub struct Fixture {
    pub name: &'static str,
    pub entry: &'static str,
    pub module: SpirvModule,
}

/// Every kernel that stays inside the interpreter's subset.
pub fn corpus() -> Vec<Fixture> {
    vec![
        Fixture { name: "multiply", entry: "main", module: multiply() },
        Fixture { name: "saxpy", entry: "main", module: saxpy() },
        Fixture { name: "fill", entry: "main", module: fill() },
        Fixture { name: "frame", entry: "main", module: frame() },
    ]
}

/// Boilerplate shared by all kernels.
struct Kernel {
    b: ModuleBuilder,
    main: u32,
    void: u32,
    fn_ty: u32,
    uint: u32,
    int: u32,
    v3uint: u32,
    gid: u32,
    ptr_input_uint: u32,
    ptr_fn_uint: u32,
    uint_0: u32,
    uint_1: u32,
    int_0: u32,
    runtime_arrays: Vec<(u32, u32)>,
    ptr_uniform: Vec<(u32, u32)>,
}

impl Kernel {
    fn new(local_size: [u32; 3]) -> Self {
        let mut b = ModuleBuilder::new();
        b.capability(capability::SHADER);
        b.ext_inst_import("GLSL.std.450");
        b.memory_model(ADDRESSING_LOGICAL, MEMORY_MODEL_GLSL450);
        let main = b.id();
        let gid = b.id();
        b.entry_point(execution_model::GL_COMPUTE, main, "main", &[gid]);
        b.execution_mode(main, execution_mode::LOCAL_SIZE, &local_size);
        b.source(SOURCE_LANGUAGE_GLSL, 450);
        b.name(main, "main");
        b.name(gid, "gl_GlobalInvocationID");
        b.decorate(gid, decoration::BUILT_IN, &[builtin::GLOBAL_INVOCATION_ID]);

        let void = b.type_void();
        let fn_ty = b.type_function(void, &[]);
        let uint = b.type_int(32, false);
        let ptr_fn_uint = b.type_pointer(storage_class::FUNCTION, uint);
        let v3uint = b.type_vector(uint, 3);
        let ptr_input_v3 = b.type_pointer(storage_class::INPUT, v3uint);
        b.raw(op::VARIABLE, &[ptr_input_v3, gid, storage_class::INPUT]);
        let uint_0 = b.constant(uint, 0);
        let uint_1 = b.constant(uint, 1);
        let ptr_input_uint = b.type_pointer(storage_class::INPUT, uint);
        let int = b.type_int(32, true);
        let int_0 = b.constant(int, 0);

        Self {
            b,
            main,
            void,
            fn_ty,
            uint,
            int,
            v3uint,
            gid,
            ptr_input_uint,
            ptr_fn_uint,
            uint_0,
            uint_1,
            int_0,
            runtime_arrays: Vec::new(),
            ptr_uniform: Vec::new(),
        }
    }

    fn uniform_ptr(&mut self, elem: u32) -> u32 {
        if let Some(&(_, p)) = self.ptr_uniform.iter().find(|(e, _)| *e == elem) {
            return p;
        }
        let p = self.b.type_pointer(storage_class::UNIFORM, elem);
        self.ptr_uniform.push((elem, p));
        p
    }

    fn block_var(&mut self, st: u32, name: &str, set: u32, binding: u32) -> u32 {
        self.b.name(st, name);
        self.b.decorate(st, decoration::BUFFER_BLOCK, &[]);
        let ptr = self.b.type_pointer(storage_class::UNIFORM, st);
        let var = self.b.variable(ptr, storage_class::UNIFORM);
        self.b.decorate(var, decoration::DESCRIPTOR_SET, &[set]);
        self.b.decorate(var, decoration::BINDING, &[binding]);
        var
    }

    /// `layout(set, binding) buffer Name { T data[]; };`
    fn storage_array(&mut self, elem: u32, name: &str, set: u32, binding: u32) -> u32 {
        let arr = match self.runtime_arrays.iter().find(|(e, _)| *e == elem) {
            Some(&(_, a)) => a,
            None => {
                let a = self.b.type_runtime_array(elem);
                self.b.decorate(a, decoration::ARRAY_STRIDE, &[4]);
                self.runtime_arrays.push((elem, a));
                a
            }
        };
        let st = self.b.type_struct(&[arr]);
        self.b.member_name(st, 0, "data");
        self.b.member_decorate(st, 0, decoration::OFFSET, &[0]);
        self.block_var(st, name, set, binding)
    }

    fn workgroup_size(&mut self, local_size: [u32; 3]) {
        let parts: Vec<u32> = local_size
            .iter()
            .map(|&v| match v {
                0 => self.uint_0,
                1 => self.uint_1,
                v => self.b.constant(self.uint, v),
            })
            .collect();
        let wg = self.b.constant_composite(self.v3uint, &parts);
        self.b.decorate(wg, decoration::BUILT_IN, &[builtin::WORKGROUP_SIZE]);
    }

    /// Opens `main` and emits `uint i = gl_GlobalInvocationID.x;`.
    fn begin_main(&mut self) -> u32 {
        let (main, void, fn_ty) = (self.main, self.void, self.fn_ty);
        self.b.begin_function_with_id(main, void, fn_ty);
        self.b.label();
        let i = self.b.local_variable(self.ptr_fn_uint);
        self.b.name(i, "i");
        let px = self.b.access_chain(self.ptr_input_uint, self.gid, &[self.uint_0]);
        let x = self.b.load(self.uint, px);
        self.b.store(i, x);
        i
    }

    fn element(&mut self, elem: u32, var: u32, index_var: u32) -> u32 {
        let idx = self.b.load(self.uint, index_var);
        let ptr = self.uniform_ptr(elem);
        self.b.access_chain(ptr, var, &[self.int_0, idx])
    }

    fn finish(mut self) -> SpirvModule {
        self.b.ret();
        self.b.end_function();
        self.b.finish()
    }
}

/// ```glsl
/// #version 450
/// layout(local_size_x = 64) in;
/// layout(set = 0, binding = 0) buffer InA { uint data[]; } a;
/// layout(set = 0, binding = 1) buffer InOutB { uint data[]; } b;
/// void main() {
///     uint i = gl_GlobalInvocationID.x;
///     b.data[i] = a.data[i] * b.data[i];
/// }
/// ```
pub fn multiply() -> SpirvModule {
    let mut k = Kernel::new([64, 1, 1]);
    let uint = k.uint;
    let a = k.storage_array(uint, "InA", 0, 0);
    let bv = k.storage_array(uint, "InOutB", 0, 1);
    k.b.name(a, "a");
    k.b.name(bv, "b");
    k.workgroup_size([64, 1, 1]);
    let i = k.begin_main();
    let dst = k.element(uint, bv, i);
    let pa = k.element(uint, a, i);
    let va = k.b.load(uint, pa);
    let pb = k.element(uint, bv, i);
    let vb = k.b.load(uint, pb);
    let prod = k.b.binary(op::I_MUL, uint, va, vb);
    k.b.store(dst, prod);
    k.finish()
}

/// ```glsl
/// #version 450
/// layout(local_size_x = 64) in;
/// layout(set = 0, binding = 0) buffer X { float data[]; } x;
/// layout(set = 0, binding = 1) buffer Y { float data[]; } y;
/// void main() {
///     uint i = gl_GlobalInvocationID.x;
///     y.data[i] = 2.5 * x.data[i] + y.data[i];
/// }
/// ```
pub fn saxpy() -> SpirvModule {
    let mut k = Kernel::new([64, 1, 1]);
    let float = k.b.type_float(32);
    let x = k.storage_array(float, "X", 0, 0);
    let y = k.storage_array(float, "Y", 0, 1);
    k.b.name(x, "x");
    k.b.name(y, "y");
    let alpha = k.b.constant(float, SAXPY_ALPHA.to_bits());
    k.workgroup_size([64, 1, 1]);
    let i = k.begin_main();
    let dst = k.element(float, y, i);
    let px = k.element(float, x, i);
    let vx = k.b.load(float, px);
    let scaled = k.b.binary(op::F_MUL, float, alpha, vx);
    let py = k.element(float, y, i);
    let vy = k.b.load(float, py);
    let sum = k.b.binary(op::F_ADD, float, scaled, vy);
    k.b.store(dst, sum);
    k.finish()
}

/// ```glsl
/// #version 450
/// layout(local_size_x = 8, local_size_y = 8) in;
/// layout(set = 0, binding = 0) buffer Out { uint data[]; } o;
/// void main() {
///     uint i = gl_GlobalInvocationID.y * 64u + gl_GlobalInvocationID.x;
///     o.data[i] = 0xDEADBEEFu;
/// }
/// ```
pub fn fill() -> SpirvModule {
    let mut k = Kernel::new([8, 8, 1]);
    let uint = k.uint;
    let out = k.storage_array(uint, "Out", 0, 0);
    k.b.name(out, "o");
    let row = k.b.constant(uint, FILL_ROW);
    let value = k.b.constant(uint, FILL_VALUE);
    k.workgroup_size([8, 8, 1]);

    let (main, void, fn_ty) = (k.main, k.void, k.fn_ty);
    k.b.begin_function_with_id(main, void, fn_ty);
    k.b.label();
    let i = k.b.local_variable(k.ptr_fn_uint);
    k.b.name(i, "i");
    let gid = k.b.load(k.v3uint, k.gid);
    let gy = k.b.body(op::COMPOSITE_EXTRACT, uint, &[gid, 1]);
    let rowoff = k.b.binary(op::I_MUL, uint, gy, row);
    let py = k.b.access_chain(k.ptr_input_uint, k.gid, &[k.uint_0]);
    let gx = k.b.load(uint, py);
    let idx = k.b.binary(op::I_ADD, uint, rowoff, gx);
    k.b.store(i, idx);
    let dst = k.element(uint, out, i);
    k.b.store(dst, value);
    k.finish()
}

/// ```glsl
/// #version 450
/// layout(local_size_x = 64) in;
/// layout(set = 0, binding = 0) buffer Params { uint frame; } params;
/// layout(set = 0, binding = 1) buffer Framebuffer { uint data[]; } fb;
/// void main() {
///     uint i = gl_GlobalInvocationID.x;
///     fb.data[i] = i * 2654435761u + params.frame * 0x01010101u;
/// }
/// ```
pub fn frame() -> SpirvModule {
    let mut k = Kernel::new([64, 1, 1]);
    let uint = k.uint;
    let params_st = k.b.type_struct(&[uint]);
    k.b.member_name(params_st, 0, "frame");
    k.b.member_decorate(params_st, 0, decoration::OFFSET, &[0]);
    let params = k.block_var(params_st, "Params", 0, 0);
    k.b.name(params, "params");
    let fb = k.storage_array(uint, "Framebuffer", 0, 1);
    k.b.name(fb, "fb");
    let pix_mul = k.b.constant(uint, FRAME_PIXEL_MUL);
    let frame_mul = k.b.constant(uint, FRAME_INDEX_MUL);
    k.workgroup_size([64, 1, 1]);

    let i = k.begin_main();
    let dst = k.element(uint, fb, i);
    let vi = k.b.load(uint, i);
    let hashed = k.b.binary(op::I_MUL, uint, vi, pix_mul);
    let ptr_u = k.uniform_ptr(uint);
    let pframe = k.b.access_chain(ptr_u, params, &[k.int_0]);
    let frame = k.b.load(uint, pframe);
    let offset = k.b.binary(op::I_MUL, uint, frame, frame_mul);
    let px = k.b.binary(op::I_ADD, uint, hashed, offset);
    k.b.store(dst, px);
    k.finish()
}

/// Workgroup count that covers a `width × height` framebuffer with the
/// frame kernel. Both dimensions multiply to a multiple of 64 for the
/// resolutions the benchmarks use.
pub fn frame_groups(width: u32, height: u32) -> [u32; 3] {
    [(width * height).div_ceil(64), 1, 1]
}

/// The multiply kernel behind a bounds check, which needs structured
/// control flow and so falls outside the interpreter subset.
///
/// ```glsl
/// void main() {
///     uint i = gl_GlobalInvocationID.x;
///     if (i < 1000u) { b.data[i] = a.data[i] * b.data[i]; }
/// }
/// ```
pub fn bounded_multiply() -> SpirvModule {
    let mut k = Kernel::new([64, 1, 1]);
    let uint = k.uint;
    let a = k.storage_array(uint, "InA", 0, 0);
    let bv = k.storage_array(uint, "InOutB", 0, 1);
    let bool_ty = k.b.type_bool();
    let limit = k.b.constant(uint, 1000);
    k.workgroup_size([64, 1, 1]);
    let i = k.begin_main();
    let vi = k.b.load(uint, i);
    let cond = k.b.binary(op::U_LESS_THAN, bool_ty, vi, limit);
    let then_label = k.b.id();
    let merge_label = k.b.id();
    k.b.body_void(op::SELECTION_MERGE, &[merge_label, 0]);
    k.b.body_void(op::BRANCH_CONDITIONAL, &[cond, then_label, merge_label]);
    k.b.body_void(op::LABEL, &[then_label]);
    let dst = k.element(uint, bv, i);
    let pa = k.element(uint, a, i);
    let va = k.b.load(uint, pa);
    let pb = k.element(uint, bv, i);
    let vb = k.b.load(uint, pb);
    let prod = k.b.binary(op::I_MUL, uint, va, vb);
    k.b.store(dst, prod);
    k.b.body_void(op::BRANCH, &[merge_label]);
    k.b.body_void(op::LABEL, &[merge_label]);
    k.finish()
}

/// `b.data[i] = a.data[i] * K` with `layout(constant_id = 0) const uint K = 3u;`.
pub fn spec_constant_multiply() -> SpirvModule {
    let mut k = Kernel::new([64, 1, 1]);
    let uint = k.uint;
    let a = k.storage_array(uint, "InA", 0, 0);
    let bv = k.storage_array(uint, "InOutB", 0, 1);
    let factor = k.b.spec_constant(uint, 3);
    k.b.decorate(factor, 1, &[0]);
    k.workgroup_size([64, 1, 1]);
    let i = k.begin_main();
    let dst = k.element(uint, bv, i);
    let pa = k.element(uint, a, i);
    let va = k.b.load(uint, pa);
    let prod = k.b.binary(op::I_MUL, uint, va, factor);
    k.b.store(dst, prod);
    k.finish()
}

/// `b.data[i] = a.data[i] + b.data[i]` in signed arithmetic; exercises
/// `OpIAdd` on `int` operands for the wrapping test.
pub fn signed_add() -> SpirvModule {
    let mut k = Kernel::new([1, 1, 1]);
    let int = k.int;
    let a = k.storage_array(int, "InA", 0, 0);
    let bv = k.storage_array(int, "InOutB", 0, 1);
    k.workgroup_size([1, 1, 1]);
    let i = k.begin_main();
    let dst = k.element(int, bv, i);
    let pa = k.element(int, a, i);
    let va = k.b.load(int, pa);
    let pb = k.element(int, bv, i);
    let vb = k.b.load(int, pb);
    let sum = k.b.binary(op::I_ADD, int, va, vb);
    k.b.store(dst, sum);
    k.finish()
}

/// One kernel per binary opcode of the subset:
/// `c.data[i] = a.data[i] <op> b.data[i]`, element type chosen by opcode.
pub fn binary_op(opcode: u16) -> SpirvModule {
    let mut k = Kernel::new([1, 1, 1]);
    let elem = match opcode {
        op::F_ADD | op::F_SUB | op::F_MUL | op::F_DIV => k.b.type_float(32),
        op::S_DIV => k.int,
        _ => k.uint,
    };
    let a = k.storage_array(elem, "A", 0, 0);
    let bv = k.storage_array(elem, "B", 0, 1);
    let c = k.storage_array(elem, "C", 0, 2);
    k.workgroup_size([1, 1, 1]);
    let i = k.begin_main();
    let dst = k.element(elem, c, i);
    let pa = k.element(elem, a, i);
    let va = k.b.load(elem, pa);
    let pb = k.element(elem, bv, i);
    let vb = k.b.load(elem, pb);
    let r = k.b.binary(opcode, elem, va, vb);
    k.b.store(dst, r);
    k.finish()
}
