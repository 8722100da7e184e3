//! Architectural state of one Snitch core and the semantics of the
//! instructions the integer pipeline executes itself.

use thiserror::Error;

use crate::fpu;
use crate::isa::{Domain, Instruction, Opcode};
use crate::memory::{MemError, MemoryPort};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreState {
    pub pc: u32,
    pub int_regs: [u32; 32],
    /// Raw bit patterns; doubles use all 64 bits, packed singles use two
    /// 32-bit lanes.
    pub fp_regs: [u64; 32],
    pub cycle: u64,
    pub ssr_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error("jump target {0:#010x} is not 4-byte aligned")]
    MisalignedTarget(u32),
    #[error("`{0}` is not executed by the integer pipeline")]
    NotCoreExecutable(&'static str),
}

/// Result of executing one instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub next_pc: u32,
    /// Extra cycles spent waiting for load data.
    pub mem_latency: u64,
    pub taken: bool,
}

impl CoreState {
    pub fn new(pc: u32) -> Self {
        CoreState {
            pc,
            int_regs: [0; 32],
            fp_regs: [0; 32],
            cycle: 0,
            ssr_enabled: false,
        }
    }

    pub fn x(&self, r: u8) -> u32 {
        if r == 0 {
            0
        } else {
            self.int_regs[r as usize]
        }
    }

    pub fn set_x(&mut self, r: u8, v: u32) {
        if r != 0 {
            self.int_regs[r as usize] = v;
        }
    }

    pub fn f64(&self, r: u8) -> f64 {
        f64::from_bits(self.fp_regs[r as usize])
    }

    pub fn set_f64(&mut self, r: u8, v: f64) {
        self.fp_regs[r as usize] = v.to_bits();
    }

    fn ea(&self, ins: &Instruction) -> u32 {
        self.x(ins.rs1).wrapping_add(ins.imm as u32)
    }
}

fn branch_taken(op: Opcode, a: u32, b: u32) -> bool {
    match op {
        Opcode::Beq => a == b,
        Opcode::Bne => a != b,
        Opcode::Blt => (a as i32) < (b as i32),
        Opcode::Bge => (a as i32) >= (b as i32),
        Opcode::Bltu => a < b,
        Opcode::Bgeu => a >= b,
        _ => unreachable!("not a branch"),
    }
}

fn alu(op: Opcode, a: u32, b: u32) -> u32 {
    use Opcode::*;
    match op {
        Add | Addi => a.wrapping_add(b),
        Sub => a.wrapping_sub(b),
        And | Andi => a & b,
        Or | Ori => a | b,
        Xor | Xori => a ^ b,
        Sll | Slli => a.wrapping_shl(b & 31),
        Srl | Srli => a.wrapping_shr(b & 31),
        Sra | Srai => ((a as i32).wrapping_shr(b & 31)) as u32,
        Slt | Slti => ((a as i32) < (b as i32)) as u32,
        Sltu | Sltiu => (a < b) as u32,
        Mul => a.wrapping_mul(b),
        _ => unreachable!("not an ALU op"),
    }
}

/// Value written to `rd` by a core-side FP-to-integer instruction.
pub fn fp_to_int(op: Opcode, a: u64, b: u64) -> u32 {
    let (fa, fb) = (f64::from_bits(a), f64::from_bits(b));
    match op {
        Opcode::FmvXD => a as u32,
        Opcode::FcvtWD => {
            if fa.is_nan() {
                i32::MAX as u32
            } else {
                fa.round_ties_even().clamp(i32::MIN as f64, i32::MAX as f64) as i32 as u32
            }
        }
        Opcode::FeqD => (fa == fb) as u32,
        Opcode::FltD => (fa < fb) as u32,
        Opcode::FleD => (fa <= fb) as u32,
        _ => unreachable!("not an FP-to-int op"),
    }
}

/// Executes `ins` against `core` with full architectural effect. Covers the
/// integer subset, FP loads/stores/compares and, for use outside the
/// cluster, FP arithmetic executed in place. Custom instructions are
/// rejected; the cluster implements them.
pub fn execute(
    core: &mut CoreState,
    ins: &Instruction,
    mem: &mut dyn MemoryPort,
) -> Result<Outcome, ExecError> {
    use Opcode::*;
    let pc = core.pc;
    let mut out = Outcome {
        next_pc: pc.wrapping_add(4),
        mem_latency: 0,
        taken: false,
    };
    let (a, b) = (core.x(ins.rs1), core.x(ins.rs2));
    let imm = ins.imm as u32;
    match ins.op {
        Add | Sub | And | Or | Xor | Sll | Srl | Sra | Slt | Sltu | Mul => {
            core.set_x(ins.rd, alu(ins.op, a, b))
        }
        Addi | Andi | Ori | Xori | Slli | Srli | Srai | Slti | Sltiu => {
            core.set_x(ins.rd, alu(ins.op, a, imm))
        }
        Lui => core.set_x(ins.rd, imm << 12),
        Auipc => core.set_x(ins.rd, pc.wrapping_add(imm << 12)),
        Beq | Bne | Blt | Bge | Bltu | Bgeu => {
            if branch_taken(ins.op, a, b) {
                out.next_pc = pc.wrapping_add(imm);
                out.taken = true;
            }
        }
        Jal | Jalr => {
            let target = if ins.op == Jal {
                pc.wrapping_add(imm)
            } else {
                a.wrapping_add(imm) & !1
            };
            if target % 4 != 0 {
                return Err(ExecError::MisalignedTarget(target));
            }
            core.set_x(ins.rd, pc.wrapping_add(4));
            out.next_pc = target;
            out.taken = true;
        }
        Lw => {
            let (v, lat) = mem.load(core.ea(ins), 4)?;
            core.set_x(ins.rd, v as u32);
            out.mem_latency = lat;
        }
        Sw => mem.store(core.ea(ins), 4, b as u64)?,
        Fld | Flw => {
            let width = if ins.op == Fld { 8 } else { 4 };
            let (v, lat) = mem.load(core.ea(ins), width)?;
            core.fp_regs[ins.rd as usize] = v;
            out.mem_latency = lat;
        }
        Fsd => mem.store(core.ea(ins), 8, core.fp_regs[ins.rs2 as usize])?,
        Fsw => mem.store(core.ea(ins), 4, core.fp_regs[ins.rs2 as usize] & 0xffff_ffff)?,
        FmvXD | FcvtWD | FeqD | FltD | FleD => {
            let v = fp_to_int(
                ins.op,
                core.fp_regs[ins.rs1 as usize],
                core.fp_regs[ins.rs2 as usize],
            );
            core.set_x(ins.rd, v);
        }
        op if op.is_offloaded() => {
            let f = |r: u8| core.fp_regs[r as usize];
            let v = fpu::compute(op, f(ins.rs1), f(ins.rs2), f(ins.rs3), a);
            core.fp_regs[ins.rd as usize] = v;
        }
        op => {
            debug_assert_eq!(op.domain(), Domain::Custom);
            return Err(ExecError::NotCoreExecutable(op.mnemonic()));
        }
    }
    Ok(out)
}

/// Single-issue step of one core without the decoupled FPU: executes the
/// instruction, redirects the pc and advances the cycle counter by one plus
/// any load latency reported by the memory.
pub fn step_integer(
    core: &mut CoreState,
    ins: &Instruction,
    mem: &mut dyn MemoryPort,
) -> Result<Outcome, ExecError> {
    let out = execute(core, ins, mem)?;
    core.pc = out.next_pc;
    core.cycle += 1 + out.mem_latency;
    Ok(out)
}
