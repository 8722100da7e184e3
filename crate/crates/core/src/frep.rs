//! The FREP micro-loop sequencer that sits between the integer core and
//! the FPU.
//!
//! An `frep` puts the sequencer into capture mode: the next `n_instr`
//! offloaded FP instructions are issued to the FPU and recorded in the
//! sequence buffer. The buffer is then replayed for the remaining
//! iterations without involving the integer pipeline.

use thiserror::Error;

use crate::isa::Instruction;

/// Capacity of the sequence buffer.
pub const SEQUENCE_BUFFER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrepError {
    #[error("frep issued while the sequencer is busy")]
    NestedFrep,
    #[error("`{0}` cannot be repeated by frep (only FPU instructions)")]
    NonFpInCapture(&'static str),
    #[error("frep repetition count is zero")]
    CountZero,
    #[error("frep covers {0} instructions, must be 1..=16")]
    InvalidLength(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Idle,
    Capturing,
    Replaying,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrepState {
    buffer: Vec<Instruction>,
    n_instr: usize,
    total_iters: u32,
    /// 1-based iteration currently being issued.
    iter: u32,
    inst_ptr: usize,
    mode: Mode,
}

impl Default for FrepState {
    fn default() -> Self {
        FrepState {
            buffer: Vec::with_capacity(SEQUENCE_BUFFER_LEN),
            n_instr: 0,
            total_iters: 0,
            iter: 0,
            inst_ptr: 0,
            mode: Mode::Idle,
        }
    }
}

impl FrepState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_idle(&self) -> bool {
        self.mode == Mode::Idle
    }

    pub fn total_iters(&self) -> u32 {
        self.total_iters
    }

    pub fn n_instr(&self) -> usize {
        self.n_instr
    }

    /// Buffer position of the next instruction to replay.
    pub fn inst_ptr(&self) -> usize {
        self.inst_ptr
    }

    /// Starts a repetition of the next `n_instr` FP instructions,
    /// `count` times in total.
    pub fn issue(&mut self, count: u32, n_instr: u32) -> Result<(), FrepError> {
        if self.mode != Mode::Idle {
            return Err(FrepError::NestedFrep);
        }
        if count == 0 {
            return Err(FrepError::CountZero);
        }
        if n_instr == 0 || n_instr as usize > SEQUENCE_BUFFER_LEN {
            return Err(FrepError::InvalidLength(n_instr));
        }
        self.buffer.clear();
        self.n_instr = n_instr as usize;
        self.total_iters = count;
        self.iter = 1;
        self.inst_ptr = 0;
        self.mode = Mode::Capturing;
        Ok(())
    }

    /// Records an instruction issued during the first iteration.
    pub fn capture(&mut self, ins: Instruction) -> Result<(), FrepError> {
        debug_assert_eq!(self.mode, Mode::Capturing);
        if !ins.op.is_offloaded() {
            return Err(FrepError::NonFpInCapture(ins.op.mnemonic()));
        }
        self.buffer.push(ins);
        if self.buffer.len() == self.n_instr {
            if self.total_iters > 1 {
                self.mode = Mode::Replaying;
                self.iter = 2;
                self.inst_ptr = 0;
            } else {
                self.mode = Mode::Idle;
            }
        }
        Ok(())
    }

    /// Next buffered instruction to replay and its 1-based iteration.
    pub fn current(&self) -> Option<(Instruction, u32)> {
        (self.mode == Mode::Replaying).then(|| (self.buffer[self.inst_ptr], self.iter))
    }

    /// Moves past the instruction returned by [`FrepState::current`].
    pub fn advance(&mut self) {
        debug_assert_eq!(self.mode, Mode::Replaying);
        self.inst_ptr += 1;
        if self.inst_ptr == self.n_instr {
            self.inst_ptr = 0;
            self.iter += 1;
            if self.iter > self.total_iters {
                self.mode = Mode::Idle;
            }
        }
    }
}

/// The instruction sequence an `frep count, body` presents to the FPU.
pub fn expand(count: u32, body: &[Instruction]) -> Vec<Instruction> {
    (0..count).flat_map(|_| body.iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::decode;

    fn drain(seq: &mut FrepState, body: &[Instruction]) -> Vec<Instruction> {
        let mut out = Vec::new();
        for ins in body {
            seq.capture(*ins).unwrap();
            out.push(*ins);
        }
        while let Some((ins, _)) = seq.current() {
            out.push(ins);
            seq.advance();
        }
        out
    }

    #[test]
    fn matvec_repetition_yields_192_fmas() {
        let body: Vec<_> = (3..7)
            .map(|r| decode(&format!("fmadd.d f{r}, ft0, ft1, f{r}")).unwrap())
            .collect();
        let mut seq = FrepState::new();
        seq.issue(48, 4).unwrap();
        let out = drain(&mut seq, &body);
        assert_eq!(out.len(), 192);
        assert!(out.iter().all(|i| i.op.is_fma()));
        assert!(seq.is_idle());
    }

    #[test]
    fn single_repetition_is_identity() {
        let body = [decode("fadd.d ft4, ft4, ft3").unwrap()];
        let mut seq = FrepState::new();
        seq.issue(1, 1).unwrap();
        assert_eq!(drain(&mut seq, &body), body.to_vec());
        assert!(seq.is_idle());
    }

    #[test]
    fn replay_order_interleaves_body() {
        let body = [
            decode("fadd.d ft4, ft4, ft3").unwrap(),
            decode("fmul.d ft5, ft5, ft3").unwrap(),
        ];
        let mut seq = FrepState::new();
        seq.issue(3, 2).unwrap();
        let got: Vec<_> = drain(&mut seq, &body).iter().map(|i| i.mnemonic()).collect();
        assert_eq!(got, ["fadd.d", "fmul.d", "fadd.d", "fmul.d", "fadd.d", "fmul.d"]);
        assert_eq!(expand(3, &body).len(), 6);
    }

    #[test]
    fn errors() {
        let mut seq = FrepState::new();
        assert_eq!(seq.issue(0, 1), Err(FrepError::CountZero));
        assert_eq!(seq.issue(2, 17), Err(FrepError::InvalidLength(17)));
        seq.issue(2, 1).unwrap();
        assert_eq!(seq.issue(2, 1), Err(FrepError::NestedFrep));
        assert!(matches!(
            seq.capture(decode("addi t0, t0, 1").unwrap()),
            Err(FrepError::NonFpInCapture("addi"))
        ));
    }
}
