//! FP arithmetic and the pipelined FPU's latency/scoreboard model.

use serde::{Deserialize, Serialize};

use crate::isa::{FpClass, Instruction, Opcode};

/// Result latency per instruction class, in cycles. Every class is fully
/// pipelined: one issue per cycle regardless of latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyTable {
    pub fma: u64,
    pub add_mul: u64,
    pub moves: u64,
}

impl Default for LatencyTable {
    fn default() -> Self {
        LatencyTable {
            fma: 3,
            add_mul: 2,
            moves: 1,
        }
    }
}

impl LatencyTable {
    pub fn of(&self, op: Opcode) -> u64 {
        match op.fp_class() {
            Some(FpClass::Fma) => self.fma,
            Some(FpClass::AddMul) => self.add_mul,
            Some(FpClass::Move) | None => self.moves,
        }
    }
}

/// Per-register readiness for the FPU's in-order issue stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FpuPipe {
    pub latencies: LatencyTable,
    /// First cycle at which each FP register's pending result is readable.
    ready: [u64; 32],
}

impl FpuPipe {
    pub fn new(latencies: LatencyTable) -> Self {
        FpuPipe {
            latencies,
            ready: [0; 32],
        }
    }

    pub fn is_ready(&self, reg: u8, now: u64) -> bool {
        self.ready[reg as usize] <= now
    }

    pub fn ready_at(&self, reg: u8) -> u64 {
        self.ready[reg as usize]
    }

    /// A new write to `rd` issued at `now` must not complete before an
    /// older in-flight write to the same register.
    pub fn can_write(&self, ins: &Instruction, now: u64) -> bool {
        match ins.fp_dest() {
            Some(rd) => self.ready[rd as usize] <= now + self.latencies.of(ins.op),
            None => true,
        }
    }

    /// Records the issue of `ins` at `now`; returns its completion cycle.
    pub fn issue(&mut self, ins: &Instruction, now: u64) -> u64 {
        let done = now + self.latencies.of(ins.op);
        if let Some(rd) = ins.fp_dest() {
            self.ready[rd as usize] = done;
        }
        done
    }

    /// Cycle by which every in-flight result has been written back.
    pub fn drained_at(&self) -> u64 {
        self.ready.iter().copied().max().unwrap_or(0)
    }
}

fn lanes(v: u64) -> [f32; 2] {
    [f32::from_bits(v as u32), f32::from_bits((v >> 32) as u32)]
}

fn pack(l: [f32; 2]) -> u64 {
    l[0].to_bits() as u64 | ((l[1].to_bits() as u64) << 32)
}

/// Result bits of an offloaded FP instruction. `a`, `b`, `c` are the raw
/// source registers in operand order and `x` the integer operand for
/// integer-to-FP moves. Rounding is round-to-nearest-even and FMA is fused.
pub fn compute(op: Opcode, a: u64, b: u64, c: u64, x: u32) -> u64 {
    use Opcode::*;
    let d = f64::from_bits;
    match op {
        FmaddD => d(a).mul_add(d(b), d(c)).to_bits(),
        FmsubD => d(a).mul_add(d(b), -d(c)).to_bits(),
        FnmaddD => (-d(a).mul_add(d(b), d(c))).to_bits(),
        FnmsubD => (-d(a).mul_add(d(b), -d(c))).to_bits(),
        FaddD => (d(a) + d(b)).to_bits(),
        FsubD => (d(a) - d(b)).to_bits(),
        FmulD => (d(a) * d(b)).to_bits(),
        FmaddS | FmsubS | FnmaddS | FnmsubS | FaddS | FsubS | FmulS => {
            let (la, lb, lc) = (lanes(a), lanes(b), lanes(c));
            let mut out = [0f32; 2];
            for i in 0..2 {
                let (p, q, r) = (la[i], lb[i], lc[i]);
                out[i] = match op {
                    FmaddS => p.mul_add(q, r),
                    FmsubS => p.mul_add(q, -r),
                    FnmaddS => -p.mul_add(q, r),
                    FnmsubS => -p.mul_add(q, -r),
                    FaddS => p + q,
                    FsubS => p - q,
                    _ => p * q,
                };
            }
            pack(out)
        }
        FmvD => a,
        FmvDX => x as u64,
        FcvtDW => (x as i32 as f64).to_bits(),
        _ => unreachable!("{op:?} is not an FPU operation"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::decode;

    #[test]
    fn fma_is_fused() {
        // a*b + c where the unfused product rounds away the low bits
        let a = 1.0 + f64::EPSILON;
        let b = 1.0 - f64::EPSILON;
        let c = -1.0f64;
        let fused = f64::from_bits(compute(Opcode::FmaddD, a.to_bits(), b.to_bits(), c.to_bits(), 0));
        assert_eq!(fused, -f64::EPSILON * f64::EPSILON);
        assert_ne!(fused, a * b + c);
    }

    #[test]
    fn packed_single_works_per_lane() {
        let v = pack([1.5, -2.0]);
        let w = pack([2.0, 4.0]);
        let r = lanes(compute(Opcode::FmulS, v, w, 0, 0));
        assert_eq!(r, [3.0, -8.0]);
        assert_eq!(Opcode::FmaddS.flops(), 4);
        assert_eq!(Opcode::FmaddD.flops(), 2);
    }

    #[test]
    fn int_moves() {
        assert_eq!(f64::from_bits(compute(Opcode::FcvtDW, 0, 0, 0, -3i32 as u32)), -3.0);
        assert_eq!(compute(Opcode::FmvDX, 0, 0, 0, 0), 0);
    }

    #[test]
    fn scoreboard_blocks_dependent_reads() {
        let mut p = FpuPipe::new(LatencyTable::default());
        let fma = decode("fmadd.d ft3, ft0, ft1, ft3").unwrap();
        assert_eq!(p.issue(&fma, 10), 13);
        assert!(!p.is_ready(3, 12));
        assert!(p.is_ready(3, 13));
        // a move to ft3 would complete at 12 < 13: must wait
        let mv = decode("fmv.d ft3, fs0").unwrap();
        assert!(!p.can_write(&mv, 11));
        assert!(p.can_write(&mv, 12));
    }
}
