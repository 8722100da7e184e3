//! The kernel corpus: assembly generators with seeded inputs and scalar
//! reference checkers.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::asm::{assemble, AsmError, AsmProgram};
use crate::cluster::{FpEvent, IntEvent, Trace};
use crate::image::MemoryImage;
use crate::memory::Memory;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("unknown kernel `{0}`")]
    Unknown(String),
    #[error("invalid size for {kernel}: {msg}")]
    BadSize { kernel: &'static str, msg: String },
    #[error("generated source failed to assemble: {0}")]
    Asm(#[from] AsmError),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("mismatch at {addr:#010x}: expected {expected}, got {got}")]
pub struct CheckError {
    pub addr: u32,
    pub expected: String,
    pub got: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelParams {
    /// Problem size; `None` selects the kernel's default.
    pub n: Option<usize>,
    pub seed: u64,
    /// Independent integer instructions placed after the frep body
    /// (matvec only).
    pub fillers: usize,
    /// Draw inputs from the integers in [-4, 4] instead of [-1, 1).
    pub integers: bool,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams { n: None, seed: 1, fillers: 0, integers: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Expect {
    F64(Vec<f64>),
    Bytes(Vec<u8>),
}

/// An instantiated kernel: program, inputs and expected outputs.
#[derive(Debug, Clone)]
pub struct BuiltKernel {
    pub name: &'static str,
    pub n: usize,
    pub source: String,
    pub program: AsmProgram,
    pub image: MemoryImage,
    /// Flops the kernel performs (FMA = 2).
    pub flops: u64,
    /// Compulsory bytes moved from/to main memory.
    pub bytes: u64,
    /// Label at the head of the steady-state loop, if any.
    pub loop_label: Option<&'static str>,
    expected: Vec<(u32, Expect)>,
}

impl BuiltKernel {
    /// Operational intensity in flop/byte.
    pub fn intensity(&self) -> f64 {
        self.flops as f64 / self.bytes.max(1) as f64
    }

    pub fn loop_pc(&self) -> Option<u32> {
        self.loop_label.and_then(|l| self.program.symbol(l))
    }

    /// Compares simulator memory with the reference results bit for bit.
    pub fn check(&self, mem: &Memory) -> Result<(), CheckError> {
        for (addr, exp) in &self.expected {
            match exp {
                Expect::F64(vals) => {
                    for (i, v) in vals.iter().enumerate() {
                        let a = addr + 8 * i as u32;
                        let got = mem.load_f64(a).map_err(|e| CheckError {
                            addr: a,
                            expected: format!("{v:?}"),
                            got: e.to_string(),
                        })?;
                        if got.to_bits() != v.to_bits() {
                            return Err(CheckError { addr: a, expected: format!("{v:?}"), got: format!("{got:?}") });
                        }
                    }
                }
                Expect::Bytes(bytes) => {
                    let got = mem.read_bytes(*addr, bytes.len() as u32).map_err(|e| CheckError {
                        addr: *addr,
                        expected: format!("{} bytes", bytes.len()),
                        got: e.to_string(),
                    })?;
                    if let Some(i) = (0..bytes.len()).find(|&i| got[i] != bytes[i]) {
                        return Err(CheckError {
                            addr: addr + i as u32,
                            expected: format!("{:#04x}", bytes[i]),
                            got: format!("{:#04x}", got[i]),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

pub struct KernelInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub default_n: usize,
    build: fn(usize, &KernelParams) -> Result<Parts, KernelError>,
}

struct Parts {
    source: String,
    inputs: Vec<(&'static str, Vec<f64>)>,
    raw_inputs: Vec<(&'static str, Vec<u8>)>,
    outputs: Vec<(&'static str, Expect)>,
    flops: u64,
    bytes: u64,
    loop_label: Option<&'static str>,
}

pub const KERNELS: &[KernelInfo] = &[
    KernelInfo {
        name: "dot_baseline",
        description: "dot product, fully unrolled with explicit loads",
        default_n: 256,
        build: dot_baseline,
    },
    KernelInfo {
        name: "dot_ssr",
        description: "dot product with streamed operands, software loop",
        default_n: 256,
        build: dot_ssr,
    },
    KernelInfo {
        name: "dot_ssr_frep",
        description: "dot product with streamed operands under frep",
        default_n: 256,
        build: dot_ssr_frep,
    },
    KernelInfo {
        name: "matvec48_baseline",
        description: "48x48 matrix-vector product with explicit loads",
        default_n: 48,
        build: matvec_baseline,
    },
    KernelInfo {
        name: "matvec48_ssr_frep",
        description: "48x48 matrix-vector product, streams and frep, unroll 4",
        default_n: 48,
        build: matvec_ssr_frep,
    },
    KernelInfo {
        name: "matmul_ssr_frep",
        description: "square matrix product on all 8 cores, streams and frep",
        default_n: 64,
        build: matmul_ssr_frep,
    },
    KernelInfo {
        name: "axpy_ssr",
        description: "y = a*x + y with a write stream",
        default_n: 256,
        build: axpy_ssr,
    },
    KernelInfo {
        name: "dma_stream",
        description: "DMA copies of 4 KiB blocks from L2 into the scratchpad",
        default_n: 16,
        build: dma_stream,
    },
    KernelInfo {
        name: "bank_unit_stride",
        description: "8 cores streaming interleaved words (conflict free)",
        default_n: 512,
        build: bank_unit,
    },
    KernelInfo {
        name: "bank_same_bank",
        description: "8 cores streaming with a 256-byte stride (one bank)",
        default_n: 512,
        build: bank_same,
    },
];

pub fn find(name: &str) -> Option<&'static KernelInfo> {
    KERNELS.iter().find(|k| k.name == name)
}

/// Instantiates kernel `name` with the given parameters.
pub fn build(name: &str, params: &KernelParams) -> Result<BuiltKernel, KernelError> {
    let info = find(name).ok_or_else(|| KernelError::Unknown(name.to_string()))?;
    let n = params.n.unwrap_or(info.default_n);
    let parts = (info.build)(n, params)?;
    let program = assemble(&parts.source)?;
    let sym = |l: &str| program.symbol(l).unwrap_or_else(|| panic!("kernel `{name}` lacks label `{l}`"));
    let mut image = MemoryImage::new();
    for (label, vals) in &parts.inputs {
        image.push_f64s(sym(label), vals);
    }
    for (label, bytes) in &parts.raw_inputs {
        image.push_bytes(sym(label), bytes);
    }
    let expected = parts.outputs.into_iter().map(|(l, e)| (sym(l), e)).collect();
    Ok(BuiltKernel {
        name: info.name,
        n,
        source: parts.source,
        program,
        image,
        flops: parts.flops,
        bytes: parts.bytes,
        loop_label: parts.loop_label,
        expected,
    })
}

fn bad(kernel: &'static str, msg: impl Into<String>) -> KernelError {
    KernelError::BadSize { kernel, msg: msg.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn inputs(r: &mut ChaCha8Rng, n: usize, integers: bool) -> Vec<f64> {
    if integers {
        (0..n).map(|_| r.gen_range(-4i32..=4) as f64).collect()
    } else {
        random_vec(r, n)
    }
}

/// Reference dot product with four accumulators, combined as
/// `((a0 + a1) + (a2 + a3))`.
pub fn dot_reference(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    for (i, (a, b)) in x.iter().zip(y).enumerate() {
        acc[i % 4] = a.mul_add(*b, acc[i % 4]);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Row-major `y = A x` accumulating each row left to right.
pub fn matvec_reference(a: &[f64], x: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (0..n).fold(0.0, |acc, j| a[i * n + j].mul_add(x[j], acc)))
        .collect()
}

/// Row-major `C = A B` accumulating over `k` in increasing order.
pub fn matmul_reference(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = (0..n).fold(0.0, |acc, k| a[i * n + k].mul_add(b[k * n + j], acc));
        }
    }
    c
}

/// Lines configuring stream `slot` to walk `dims` (innermost first) from
/// the address in `base_reg`.
fn ssr_setup(out: &mut String, slot: usize, base_reg: &str, dims: &[(i64, u64)], write: bool) {
    let _ = writeln!(out, "    ssr_cfg_write {slot}, base, {base_reg}");
    for (d, (stride, bound)) in dims.iter().enumerate() {
        let _ = writeln!(out, "    ssr_cfg_write {slot}, stride{d}, {stride}");
        let _ = writeln!(out, "    ssr_cfg_write {slot}, bound{d}, {bound}");
    }
    if write {
        let _ = writeln!(out, "    ssr_cfg_write {slot}, dir, 1");
    }
}

fn data_section(out: &mut String, arrays: &[(&str, usize)]) {
    out.push_str("    .section .data\n");
    for (label, bytes) in arrays {
        let _ = writeln!(out, "{label}:\n    .space {bytes}");
    }
    out.push_str("    .text\n_start:\n");
}

const REDUCE: &str = "    fadd.d ft3, ft3, ft4
    fadd.d ft5, ft5, ft6
    fadd.d ft3, ft3, ft5
    fsd ft3, 0(a2)
";

fn dot_parts(n: usize, params: &KernelParams, source: String) -> Parts {
    let mut r = rng(params.seed);
    let x = inputs(&mut r, n, params.integers);
    let y = inputs(&mut r, n, params.integers);
    let res = dot_reference(&x, &y);
    Parts {
        source,
        inputs: vec![("x", x), ("y", y)],
        raw_inputs: vec![],
        outputs: vec![("res", Expect::F64(vec![res]))],
        flops: 2 * n as u64,
        bytes: 16 * n as u64 + 8,
        loop_label: None,
    }
}

fn check_dot_n(kernel: &'static str, n: usize) -> Result<(), KernelError> {
    if n == 0 || !n.is_multiple_of(4) || n > 4096 {
        return Err(bad(kernel, format!("n = {n}, need a multiple of 4 in 4..=4096")));
    }
    Ok(())
}

fn dot_baseline(n: usize, p: &KernelParams) -> Result<Parts, KernelError> {
    check_dot_n("dot_baseline", n)?;
    let mut s = String::new();
    data_section(&mut s, &[("x", 8 * n), ("y", 8 * n), ("res", 8)]);
    s.push_str("    la a0, x\n    la a1, y\n    la a2, res\n");
    for i in 0..n {
        let acc = 3 + i % 4;
        let _ = writeln!(s, "    fld ft0, {}(a0)\n    fld ft1, {}(a1)", 8 * i, 8 * i);
        let _ = writeln!(s, "    fmadd.d f{acc}, ft0, ft1, f{acc}");
    }
    s.push_str(REDUCE);
    s.push_str("    halt\n");
    Ok(dot_parts(n, p, s))
}

fn dot_streams(s: &mut String, n: usize) {
    s.push_str("    la a0, x\n    la a1, y\n    la a2, res\n");
    ssr_setup(s, 0, "a0", &[(8, n as u64)], false);
    ssr_setup(s, 1, "a1", &[(8, n as u64)], false);
    s.push_str("    ssr_enable\n");
}

fn dot_ssr(n: usize, p: &KernelParams) -> Result<Parts, KernelError> {
    check_dot_n("dot_ssr", n)?;
    let mut s = String::new();
    data_section(&mut s, &[("x", 8 * n), ("y", 8 * n), ("res", 8)]);
    dot_streams(&mut s, n);
    let _ = writeln!(s, "    li t0, 0\n    li t1, {}", n / 4);
    s.push_str("loop:\n");
    for acc in 3..7 {
        let _ = writeln!(s, "    fmadd.d f{acc}, ft0, ft1, f{acc}");
    }
    s.push_str("    addi t0, t0, 1\n    bltu t0, t1, loop\n    ssr_disable\n");
    s.push_str(REDUCE);
    s.push_str("    halt\n");
    let mut parts = dot_parts(n, p, s);
    parts.loop_label = Some("loop");
    Ok(parts)
}

fn dot_ssr_frep(n: usize, p: &KernelParams) -> Result<Parts, KernelError> {
    check_dot_n("dot_ssr_frep", n)?;
    let mut s = String::new();
    data_section(&mut s, &[("x", 8 * n), ("y", 8 * n), ("res", 8)]);
    dot_streams(&mut s, n);
    let _ = writeln!(s, "    li t0, {}\n    frep t0, 4", n / 4);
    for acc in 3..7 {
        let _ = writeln!(s, "    fmadd.d f{acc}, ft0, ft1, f{acc}");
    }
    s.push_str("    ssr_disable\n");
    s.push_str(REDUCE);
    s.push_str("    halt\n");
    Ok(dot_parts(n, p, s))
}

fn matvec_parts(n: usize, p: &KernelParams, source: String) -> Parts {
    let mut r = rng(p.seed);
    let a = inputs(&mut r, n * n, p.integers);
    let x = inputs(&mut r, n, p.integers);
    let y = matvec_reference(&a, &x, n);
    Parts {
        source,
        inputs: vec![("A", a), ("x", x)],
        raw_inputs: vec![],
        outputs: vec![("y", Expect::F64(y))],
        flops: 2 * (n * n) as u64,
        bytes: 8 * (n * n + 2 * n) as u64,
        loop_label: Some("outer"),
    }
}

fn check_matvec_n(kernel: &'static str, n: usize) -> Result<(), KernelError> {
    if n == 0 || !n.is_multiple_of(4) || n > 96 {
        return Err(bad(kernel, format!("n = {n}, need a multiple of 4 up to 96")));
    }
    Ok(())
}

// x sits 64 bytes past the matrix so that its banks never coincide with the
// rows being streamed in the same cycle.
fn matvec_data(s: &mut String, n: usize) {
    data_section(s, &[("A", 8 * n * n), ("pad", 64), ("x", 8 * n), ("y", 8 * n)]);
}

fn matvec_baseline(n: usize, p: &KernelParams) -> Result<Parts, KernelError> {
    check_matvec_n("matvec48_baseline", n)?;
    let mut s = String::new();
    matvec_data(&mut s, n);
    let _ = writeln!(s, "    la a0, A\n    la a1, x\n    la a2, y\n    li t1, 0\n    li t2, {}", n / 4);
    s.push_str("outer:\n");
    for acc in 3..7 {
        let _ = writeln!(s, "    fmv.d f{acc}, fs0");
    }
    for j in 0..n {
        let _ = writeln!(s, "    fld ft1, {}(a1)", 8 * j);
        for k in 0..4 {
            let _ = writeln!(s, "    fld ft0, {}(a0)", 8 * (k * n + j));
            let _ = writeln!(s, "    fmadd.d f{0}, ft0, ft1, f{0}", 3 + k);
        }
    }
    for k in 0..4 {
        let _ = writeln!(s, "    fsd f{}, {}(a2)", 3 + k, 8 * k);
    }
    let _ = writeln!(s, "    addi a0, a0, {}", 32 * n);
    s.push_str("    addi a2, a2, 32\n    addi t1, t1, 1\n    bltu t1, t2, outer\n    halt\n");
    Ok(matvec_parts(n, p, s))
}

fn matvec_ssr_frep(n: usize, p: &KernelParams) -> Result<Parts, KernelError> {
    check_matvec_n("matvec48_ssr_frep", n)?;
    let nn = n as i64;
    let mut s = String::new();
    matvec_data(&mut s, n);
    s.push_str("    la a0, A\n    la a1, x\n    la a2, y\n");
    ssr_setup(&mut s, 0, "a0", &[(8 * nn, 4), (8, n as u64), (32 * nn, n as u64 / 4)], false);
    ssr_setup(&mut s, 1, "a1", &[(0, 4), (8, n as u64), (0, n as u64 / 4)], false);
    let _ = writeln!(s, "    ssr_enable\n    li t0, {n}\n    li t1, 0\n    li t2, {}", n / 4);
    s.push_str("outer:\n");
    for acc in 3..7 {
        let _ = writeln!(s, "    fmv.d f{acc}, fs0");
    }
    s.push_str("    frep t0, 4\n");
    for acc in 3..7 {
        let _ = writeln!(s, "    fmadd.d f{acc}, ft0, ft1, f{acc}");
    }
    for i in 0..p.fillers {
        let _ = writeln!(s, "    addi s{}, s{}, 1", 2 + i % 10, 2 + i % 10);
    }
    for k in 0..4 {
        let _ = writeln!(s, "    fsd f{}, {}(a2)", 3 + k, 8 * k);
    }
    s.push_str("    addi a2, a2, 32\n    addi t1, t1, 1\n    bltu t1, t2, outer\n    ssr_disable\n    halt\n");
    Ok(matvec_parts(n, p, s))
}

pub const CLUSTER_CORES: usize = 8;

/// Column tile of the matrix product: one A element is moved into `fa0`
/// per step of `k`, and feeds eight accumulators whose B operands stream.
pub const MATMUL_TILE: usize = 8;

fn matmul_ssr_frep(n: usize, p: &KernelParams) -> Result<Parts, KernelError> {
    let cores = CLUSTER_CORES;
    let tile = MATMUL_TILE;
    if n == 0 || !n.is_multiple_of(cores) || n > 64 {
        return Err(bad("matmul_ssr_frep", format!("n = {n}, need a multiple of 8 up to 64")));
    }
    let nn = n as i64;
    let blocks = n / tile;
    // When the column tiles divide the core count, core c takes tile
    // c % blocks of every (cores/blocks)-th row, which spreads the B streams
    // over distinct banks. Otherwise every core sweeps all tiles of its rows.
    let split = cores.is_multiple_of(blocks);
    let (my_blocks, row_step) = if split { (1, cores / blocks) } else { (blocks, cores) };
    let rows = (n / row_step) as u64;
    let mut s = String::new();
    s.push_str(".cores 8\n");
    data_section(&mut s, &[("A", 8 * n * n), ("pad", 64), ("B", 8 * n * n), ("C", 8 * n * n)]);
    s.push_str("    hartid t5\n");
    if split {
        let shift = blocks.trailing_zeros();
        let _ = writeln!(s, "    andi t3, t5, {}\n    srli t5, t5, {shift}\n    slli t3, t3, 6", blocks - 1);
    } else {
        s.push_str("    li t3, 0\n");
    }
    let _ = writeln!(s, "    li t6, {}\n    mul t4, t5, t6", 8 * n);
    s.push_str("    la a0, A\n    add a0, a0, t4\n    la a2, C\n    add a2, a2, t4\n    add a2, a2, t3\n");
    s.push_str("    la a1, B\n    add a1, a1, t3\n");
    let rstride = 8 * nn * row_step as i64;
    ssr_setup(&mut s, 0, "a0", &[(8, n as u64), (0, my_blocks as u64), (rstride, rows)], false);
    ssr_setup(
        &mut s,
        1,
        "a1",
        &[(8, tile as u64), (8 * nn, n as u64), (8 * tile as i64, my_blocks as u64), (0, rows)],
        false,
    );
    let _ = writeln!(s, "    ssr_enable\n    li t0, {n}\n    li t3, 0\n    li s2, {rows}\n    li t2, {my_blocks}");
    s.push_str("row:\n    li t1, 0\nblock:\n");
    let accs: Vec<String> = [3, 4, 5, 6, 7, 28, 29, 30].iter().map(|r| format!("f{r}")).collect();
    for acc in &accs {
        let _ = writeln!(s, "    fmv.d {acc}, fs0");
    }
    let _ = writeln!(s, "    frep t0, {}\n    fmv.d fa0, ft0", tile + 1);
    for acc in &accs {
        let _ = writeln!(s, "    fmadd.d {acc}, fa0, ft1, {acc}");
    }
    for (r, acc) in accs.iter().enumerate() {
        let _ = writeln!(s, "    fsd {acc}, {}(a2)", 8 * r);
    }
    let _ = writeln!(s, "    addi a2, a2, {}\n    addi t1, t1, 1\n    bltu t1, t2, block", 8 * tile);
    let _ = writeln!(s, "    addi a2, a2, {}", rstride - 8 * (tile * my_blocks) as i64);
    s.push_str("    addi t3, t3, 1\n    bltu t3, s2, row\n    ssr_disable\n    halt\n");

    let mut r = rng(p.seed);
    let a = inputs(&mut r, n * n, p.integers);
    let b = inputs(&mut r, n * n, p.integers);
    let c = matmul_reference(&a, &b, n);
    Ok(Parts {
        source: s,
        inputs: vec![("A", a), ("B", b)],
        raw_inputs: vec![],
        outputs: vec![("C", Expect::F64(c))],
        flops: 2 * (n * n * n) as u64,
        bytes: 24 * (n * n) as u64,
        loop_label: Some("block"),
    })
}

fn axpy_ssr(n: usize, p: &KernelParams) -> Result<Parts, KernelError> {
    if n == 0 || n > 4096 {
        return Err(bad("axpy_ssr", format!("n = {n}, need 1..=4096")));
    }
    let mut s = String::new();
    data_section(&mut s, &[("alpha", 8), ("x", 8 * n), ("pad", 64), ("y", 8 * n)]);
    s.push_str("    la a0, x\n    la a1, y\n    la a3, alpha\n    fld fa0, 0(a3)\n");
    ssr_setup(&mut s, 0, "a0", &[(8, n as u64)], false);
    ssr_setup(&mut s, 1, "a1", &[(8, n as u64)], false);
    ssr_setup(&mut s, 2, "a1", &[(8, n as u64)], true);
    let _ = writeln!(s, "    ssr_enable\n    li t0, {n}\n    frep t0, 1\n    fmadd.d ft2, fa0, ft0, ft1");
    s.push_str("    ssr_disable\n    halt\n");

    let mut r = rng(p.seed);
    let alpha: f64 = r.gen_range(-2.0..2.0);
    let x = random_vec(&mut r, n);
    let y = random_vec(&mut r, n);
    let out = x.iter().zip(&y).map(|(xi, yi)| alpha.mul_add(*xi, *yi)).collect();
    Ok(Parts {
        source: s,
        inputs: vec![("alpha", vec![alpha]), ("x", x), ("y", y)],
        raw_inputs: vec![],
        outputs: vec![("y", Expect::F64(out))],
        flops: 2 * n as u64,
        bytes: 24 * n as u64,
        loop_label: None,
    })
}

pub const DMA_BLOCK: usize = 4096;

fn dma_stream(n: usize, p: &KernelParams) -> Result<Parts, KernelError> {
    if n == 0 || n > 16 {
        return Err(bad("dma_stream", format!("n = {n} blocks, need 1..=16")));
    }
    let total = n * DMA_BLOCK;
    let mut s = String::new();
    let _ = writeln!(s, "    .section .l2\nsrc:\n    .space {total}");
    let _ = writeln!(s, "    .section .data\ndst:\n    .space {total}\n    .text\n_start:");
    let _ = writeln!(s, "    la a0, src\n    la a1, dst\n    li t0, {DMA_BLOCK}\n    li t1, 0\n    li t2, {n}");
    s.push_str("issue:\n    dm_src a0\n    dm_dst a1\n    dm_copy t3, t0\n");
    let _ = writeln!(s, "    add a0, a0, t0\n    add a1, a1, t0\n    addi t1, t1, 1\n    bltu t1, t2, issue");
    s.push_str("wait:\n    dm_stat t4\n    bnez t4, wait\n    halt\n");

    let mut r = rng(p.seed);
    let data: Vec<u8> = (0..total).map(|_| r.gen()).collect();
    Ok(Parts {
        source: s,
        inputs: vec![],
        raw_inputs: vec![("src", data.clone())],
        outputs: vec![("dst", Expect::Bytes(data))],
        flops: 0,
        bytes: total as u64,
        loop_label: None,
    })
}

/// Every core streams `n` words. Word `k` of core `c` sits at
/// `buf + c*core_step + (k % 8)*inner + (k / 8)*outer`.
fn bank_kernel(
    n: usize,
    p: &KernelParams,
    core_step: usize,
    inner: usize,
    outer: usize,
    kernel: &'static str,
) -> Result<Parts, KernelError> {
    let cores = CLUSTER_CORES;
    if n == 0 || !n.is_multiple_of(8) || n > 4096 {
        return Err(bad(kernel, format!("n = {n}, need a multiple of 8 up to 4096")));
    }
    let span = (n / 8 - 1) * outer + 7 * inner + (cores - 1) * core_step + 8;
    let mut s = String::new();
    s.push_str(".cores 8\n");
    data_section(&mut s, &[("buf", span)]);
    let _ = writeln!(s, "    hartid t5\n    li t6, {core_step}\n    mul t4, t5, t6\n    la a0, buf\n    add a0, a0, t4");
    ssr_setup(&mut s, 0, "a0", &[(inner as i64, 8), (outer as i64, n as u64 / 8)], false);
    let _ = writeln!(s, "    ssr_enable\n    li t0, {n}\n    frep t0, 1\n    fmv.d ft3, ft0\n    ssr_disable\n    halt");
    let mut r = rng(p.seed);
    let data = random_vec(&mut r, span / 8);
    Ok(Parts {
        source: s,
        inputs: vec![("buf", data.clone())],
        raw_inputs: vec![],
        outputs: vec![("buf", Expect::F64(data))],
        flops: 0,
        bytes: (8 * n * cores) as u64,
        loop_label: None,
    })
}

// Interleaved words: at any step the cores touch 8 different banks.
fn bank_unit(n: usize, p: &KernelParams) -> Result<Parts, KernelError> {
    let step = 8 * CLUSTER_CORES;
    bank_kernel(n, p, 8, step, 8 * step, "bank_unit_stride")
}

// A 256-byte stride keeps every access of every core on the same bank; the
// outer dimension rewinds so the footprint stays small.
fn bank_same(n: usize, p: &KernelParams) -> Result<Parts, KernelError> {
    bank_kernel(n, p, 256, 256 * CLUSTER_CORES, 0, "bank_same_bank")
}

/// Counters of one iteration of a loop, delimited by consecutive retires
/// of the loop head on one core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IterProfile {
    pub start: u64,
    pub cycles: u64,
    pub fetched: u64,
    pub int_retired: u64,
    pub fp_executed: u64,
    pub fma_executed: u64,
}

impl IterProfile {
    pub fn executed(&self) -> u64 {
        self.int_retired + self.fp_executed
    }
}

/// Splits a trace into complete iterations of the loop headed at `head`.
pub fn loop_profile(trace: &Trace, core: usize, head: u32) -> Vec<IterProfile> {
    let mut out: Vec<IterProfile> = Vec::new();
    let mut cur: Option<IterProfile> = None;
    for row in trace.rows.iter().filter(|r| r.core == core) {
        if let IntEvent::Retire { pc, .. } = row.int {
            if pc == head {
                if let Some(mut it) = cur.take() {
                    it.cycles = row.cycle - it.start;
                    out.push(it);
                }
                cur = Some(IterProfile { start: row.cycle, ..IterProfile::default() });
            }
        }
        if let Some(it) = cur.as_mut() {
            if let IntEvent::Retire { ins, .. } = &row.int {
                it.fetched += 1;
                if !ins.op.is_offloaded() {
                    it.int_retired += 1;
                }
            }
            if let FpEvent::Issue { ins, .. } = &row.fp {
                it.fp_executed += 1;
                if ins.op.is_fma() {
                    it.fma_executed += 1;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kernel_builds() {
        for k in KERNELS {
            let b = build(k.name, &KernelParams::default()).unwrap();
            assert!(b.program.instruction_count() > 0, "{}", k.name);
        }
    }

    #[test]
    fn matvec_body_is_sixteen_instructions() {
        let b = build("matvec48_ssr_frep", &KernelParams::default()).unwrap();
        let head = b.loop_pc().unwrap();
        let back = b.program.symbol("outer").unwrap();
        let text = &b.program.sections.iter().find(|s| s.name == ".text").unwrap();
        let start = ((head - text.base) / 4) as usize;
        let end = text.code[start..]
            .iter()
            .position(|i| i.op == crate::isa::Opcode::Bltu)
            .unwrap();
        assert_eq!(end + 1, 16);
        assert_eq!(back, head);
    }

    #[test]
    fn references_on_small_cases() {
        assert_eq!(dot_reference(&[1.0; 256], &[1.0; 256]), 256.0);
        let n = 48;
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        let x: Vec<f64> = (1..=n).map(|v| v as f64).collect();
        assert_eq!(matvec_reference(&eye, &x, n), x);
        let m = matmul_reference(&eye, &eye, n);
        assert_eq!(m, eye);
    }

    #[test]
    fn unknown_and_bad_sizes() {
        assert!(matches!(build("nope", &KernelParams::default()), Err(KernelError::Unknown(_))));
        let p = KernelParams { n: Some(6), ..KernelParams::default() };
        assert!(matches!(build("dot_ssr_frep", &p), Err(KernelError::BadSize { .. })));
    }
}
