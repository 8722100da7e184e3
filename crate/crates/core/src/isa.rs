//! Instruction subset, textual decoding and disassembly.
//!
//! The simulator works on decoded [`Instruction`] values; binary encodings
//! are not modelled. Text is the canonical interchange form, and
//! [`Instruction`]'s `Display` implementation produces text that decodes
//! back to the same value.

use std::fmt;

use thiserror::Error;

/// Which pipeline an instruction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Int,
    Fp,
    Custom,
}

/// Latency class of an instruction executed by the FPU subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FpClass {
    Fma,
    AddMul,
    Move,
}

/// Named fields of a stream configuration, as written by `ssr_cfg_write`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SsrField {
    Base,
    Stride(u8),
    Bound(u8),
    Dir,
    Width,
}

impl SsrField {
    pub fn code(self) -> u8 {
        match self {
            SsrField::Base => 0,
            SsrField::Stride(d) => 1 + d,
            SsrField::Bound(d) => 5 + d,
            SsrField::Dir => 9,
            SsrField::Width => 10,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SsrField::Base,
            1..=4 => SsrField::Stride(code - 1),
            5..=8 => SsrField::Bound(code - 5),
            9 => SsrField::Dir,
            10 => SsrField::Width,
            _ => return None,
        })
    }

    fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        match s {
            "base" => return Some(SsrField::Base),
            "dir" => return Some(SsrField::Dir),
            "width" => return Some(SsrField::Width),
            _ => {}
        }
        let (kind, dim) = if let Some(d) = s.strip_prefix("stride") {
            (0, d)
        } else {
            let d = s.strip_prefix("bound")?;
            (1, d)
        };
        let dim: u8 = dim.parse().ok().filter(|d| *d < 4)?;
        Some(if kind == 0 {
            SsrField::Stride(dim)
        } else {
            SsrField::Bound(dim)
        })
    }
}

impl fmt::Display for SsrField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SsrField::Base => write!(f, "base"),
            SsrField::Stride(d) => write!(f, "stride{d}"),
            SsrField::Bound(d) => write!(f, "bound{d}"),
            SsrField::Dir => write!(f, "dir"),
            SsrField::Width => write!(f, "width"),
        }
    }
}

/// Operand layout of a mnemonic; drives both parsing and printing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    /// rd, rs1, rs2 (integer)
    R,
    /// rd, rs1, imm
    I,
    /// rd, imm
    U,
    /// rs1, rs2, offset
    B,
    /// rd, offset
    J,
    /// rd, imm(rs1)
    Load,
    /// rs2, imm(rs1)
    Store,
    /// fd, imm(rs1)
    FLoad,
    /// fs2, imm(rs1)
    FStore,
    /// fd, fs1, fs2, fs3
    R4,
    /// fd, fs1, fs2
    FR,
    /// fd, fs1
    FR1,
    /// fd, rs1
    FFromX,
    /// rd, fs1
    XFromF,
    /// rd, fs1, fs2
    FCmp,
    /// rs1, imm
    Frep,
    /// slot, field, rs1
    SsrW,
    /// slot, field, imm
    SsrWI,
    /// rd, slot, field
    SsrR,
    /// no operands
    Nullary,
    /// rs1
    Rs1,
    /// rs1, rs2
    Rs1Rs2,
    /// rd, rs1
    RdRs1,
    /// rd
    Rd,
}

macro_rules! opcodes {
    ($($variant:ident => $mnem:literal, $dom:ident, $fmt:ident;)*) => {
        /// Every supported operation.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum Opcode {
            $($variant,)*
        }

        impl Opcode {
            pub const ALL: &'static [Opcode] = &[$(Opcode::$variant,)*];

            pub fn mnemonic(self) -> &'static str {
                match self {
                    $(Opcode::$variant => $mnem,)*
                }
                .trim_end()
            }

            pub fn domain(self) -> Domain {
                match self {
                    $(Opcode::$variant => Domain::$dom,)*
                }
            }

            fn format(self) -> Format {
                match self {
                    $(Opcode::$variant => Format::$fmt,)*
                }
            }

            fn from_mnemonic(m: &str) -> Option<Opcode> {
                match m {
                    $($mnem => Some(Opcode::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

opcodes! {
    Add => "add", Int, R;
    Sub => "sub", Int, R;
    And => "and", Int, R;
    Or => "or", Int, R;
    Xor => "xor", Int, R;
    Sll => "sll", Int, R;
    Srl => "srl", Int, R;
    Sra => "sra", Int, R;
    Slt => "slt", Int, R;
    Sltu => "sltu", Int, R;
    Mul => "mul", Int, R;
    Addi => "addi", Int, I;
    Andi => "andi", Int, I;
    Ori => "ori", Int, I;
    Xori => "xori", Int, I;
    Slli => "slli", Int, I;
    Srli => "srli", Int, I;
    Srai => "srai", Int, I;
    Slti => "slti", Int, I;
    Sltiu => "sltiu", Int, I;
    Lui => "lui", Int, U;
    Auipc => "auipc", Int, U;
    Beq => "beq", Int, B;
    Bne => "bne", Int, B;
    Blt => "blt", Int, B;
    Bge => "bge", Int, B;
    Bltu => "bltu", Int, B;
    Bgeu => "bgeu", Int, B;
    Jal => "jal", Int, J;
    Jalr => "jalr", Int, Load;
    Lw => "lw", Int, Load;
    Sw => "sw", Int, Store;
    Fld => "fld", Fp, FLoad;
    Fsd => "fsd", Fp, FStore;
    Flw => "flw", Fp, FLoad;
    Fsw => "fsw", Fp, FStore;
    FmaddD => "fmadd.d", Fp, R4;
    FmsubD => "fmsub.d", Fp, R4;
    FnmaddD => "fnmadd.d", Fp, R4;
    FnmsubD => "fnmsub.d", Fp, R4;
    FaddD => "fadd.d", Fp, FR;
    FsubD => "fsub.d", Fp, FR;
    FmulD => "fmul.d", Fp, FR;
    FmaddS => "fmadd.s", Fp, R4;
    FmsubS => "fmsub.s", Fp, R4;
    FnmaddS => "fnmadd.s", Fp, R4;
    FnmsubS => "fnmsub.s", Fp, R4;
    FaddS => "fadd.s", Fp, FR;
    FsubS => "fsub.s", Fp, FR;
    FmulS => "fmul.s", Fp, FR;
    FmvD => "fmv.d", Fp, FR1;
    FmvDX => "fmv.d.x", Fp, FFromX;
    FcvtDW => "fcvt.d.w", Fp, FFromX;
    FmvXD => "fmv.x.d", Fp, XFromF;
    FcvtWD => "fcvt.w.d", Fp, XFromF;
    FeqD => "feq.d", Fp, FCmp;
    FltD => "flt.d", Fp, FCmp;
    FleD => "fle.d", Fp, FCmp;
    Frep => "frep", Custom, Frep;
    SsrCfgWrite => "ssr_cfg_write", Custom, SsrW;
    SsrCfgWriteImm => "ssr_cfg_write ", Custom, SsrWI;
    SsrCfgRead => "ssr_cfg_read", Custom, SsrR;
    SsrEnable => "ssr_enable", Custom, Nullary;
    SsrDisable => "ssr_disable", Custom, Nullary;
    DmSrc => "dm_src", Custom, Rs1;
    DmDst => "dm_dst", Custom, Rs1;
    DmStr => "dm_str", Custom, Rs1Rs2;
    DmRep => "dm_rep", Custom, Rs1;
    DmCopy => "dm_copy", Custom, RdRs1;
    DmCopy2d => "dm_copy2d", Custom, RdRs1;
    DmStat => "dm_stat", Custom, Rd;
    Hartid => "hartid", Custom, Rd;
    Halt => "halt", Custom, Nullary;
}

impl Opcode {
    /// Instructions handed to the FPU subsystem (and eligible for `frep`).
    pub fn is_offloaded(self) -> bool {
        self.fp_class().is_some()
    }

    pub fn fp_class(self) -> Option<FpClass> {
        use Opcode::*;
        match self {
            FmaddD | FmsubD | FnmaddD | FnmsubD | FmaddS | FmsubS | FnmaddS | FnmsubS => {
                Some(FpClass::Fma)
            }
            FaddD | FsubD | FmulD | FaddS | FsubS | FmulS => Some(FpClass::AddMul),
            FmvD | FmvDX | FcvtDW => Some(FpClass::Move),
            _ => None,
        }
    }

    pub fn is_fma(self) -> bool {
        self.fp_class() == Some(FpClass::Fma)
    }

    pub fn is_single(self) -> bool {
        use Opcode::*;
        matches!(
            self,
            FmaddS | FmsubS | FnmaddS | FnmsubS | FaddS | FsubS | FmulS
        )
    }

    /// Floating-point operations performed by one execution (FMA counts 2,
    /// packed single precision doubles the lane count).
    pub fn flops(self) -> u64 {
        let per_lane = match self.fp_class() {
            Some(FpClass::Fma) => 2,
            Some(FpClass::AddMul) => 1,
            _ => 0,
        };
        if self.is_single() {
            per_lane * 2
        } else {
            per_lane
        }
    }

    pub fn is_branch(self) -> bool {
        self.format() == Format::B
    }

    /// Core-executed instructions that read or write FP state and therefore
    /// synchronise with the FPU subsystem.
    pub fn syncs_with_fpu(self) -> bool {
        use Opcode::*;
        matches!(
            self,
            Fld | Fsd | Flw | Fsw | FmvXD | FcvtWD | FeqD | FltD | FleD | SsrEnable | SsrDisable
                | Halt
        )
    }

    pub fn is_memory(self) -> bool {
        use Opcode::*;
        matches!(self, Lw | Sw | Fld | Fsd | Flw | Fsw)
    }
}

/// A decoded instruction.
///
/// Register fields not used by the opcode's format are zero. For the stream
/// configuration instructions `rs2` carries the slot and `rs3` the
/// [`SsrField`] code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub op: Opcode,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub rs3: u8,
    pub imm: i32,
}

impl Instruction {
    pub fn new(op: Opcode) -> Self {
        Instruction {
            op,
            rd: 0,
            rs1: 0,
            rs2: 0,
            rs3: 0,
            imm: 0,
        }
    }

    pub fn domain(&self) -> Domain {
        self.op.domain()
    }

    pub fn mnemonic(&self) -> &'static str {
        self.op.mnemonic()
    }

    pub fn ssr_slot(&self) -> u8 {
        self.rs2
    }

    pub fn ssr_field(&self) -> Option<SsrField> {
        SsrField::from_code(self.rs3)
    }

    /// FP registers read by this instruction, in operand order. A register
    /// listed twice is read twice.
    pub fn fp_sources(&self) -> Vec<u8> {
        match self.op.format() {
            Format::R4 => vec![self.rs1, self.rs2, self.rs3],
            Format::FR | Format::FCmp => vec![self.rs1, self.rs2],
            Format::FR1 | Format::XFromF => vec![self.rs1],
            Format::FStore => vec![self.rs2],
            _ => Vec::new(),
        }
    }

    /// FP register written by this instruction.
    pub fn fp_dest(&self) -> Option<u8> {
        match self.op.format() {
            Format::R4 | Format::FR | Format::FR1 | Format::FFromX | Format::FLoad => Some(self.rd),
            _ => None,
        }
    }

    /// Integer register written by this instruction, if any (never x0).
    pub fn int_dest(&self) -> Option<u8> {
        let writes = match self.op.format() {
            Format::R | Format::I | Format::U | Format::J | Format::Load => true,
            Format::XFromF | Format::FCmp | Format::SsrR | Format::RdRs1 | Format::Rd => true,
            _ => false,
        };
        (writes && self.rd != 0).then_some(self.rd)
    }
}

/// Errors raised while decoding instruction text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unsupported instruction `{0}`")]
    UnsupportedInstruction(String),
    #[error("malformed operands: {0}")]
    MalformedOperands(String),
    #[error("unresolved symbol `{0}`")]
    UnresolvedSymbol(String),
}

const INT_ABI: [&str; 32] = [
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4",
    "a5", "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4",
    "t5", "t6",
];

const FP_ABI: [&str; 32] = [
    "ft0", "ft1", "ft2", "ft3", "ft4", "ft5", "ft6", "ft7", "fs0", "fs1", "fa0", "fa1", "fa2",
    "fa3", "fa4", "fa5", "fa6", "fa7", "fs2", "fs3", "fs4", "fs5", "fs6", "fs7", "fs8", "fs9",
    "fs10", "fs11", "ft8", "ft9", "ft10", "ft11",
];

pub fn int_reg_name(r: u8) -> &'static str {
    INT_ABI[r as usize]
}

pub fn fp_reg_name(r: u8) -> &'static str {
    FP_ABI[r as usize]
}

fn numbered(s: &str, prefix: char) -> Option<Result<u8, DecodeError>> {
    let digits = s.strip_prefix(prefix)?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(match digits.parse::<u32>() {
        Ok(n) if n < 32 => Ok(n as u8),
        _ => Err(DecodeError::MalformedOperands(format!(
            "register `{s}` out of range"
        ))),
    })
}

fn parse_int_reg(s: &str) -> Result<u8, DecodeError> {
    let s = s.trim();
    if let Some(r) = numbered(s, 'x') {
        return r;
    }
    if s == "fp" {
        return Ok(8);
    }
    INT_ABI
        .iter()
        .position(|n| *n == s)
        .map(|p| p as u8)
        .ok_or_else(|| DecodeError::MalformedOperands(format!("expected integer register, got `{s}`")))
}

fn parse_fp_reg(s: &str) -> Result<u8, DecodeError> {
    let s = s.trim();
    if let Some(r) = numbered(s, 'f') {
        return r;
    }
    FP_ABI
        .iter()
        .position(|n| *n == s)
        .map(|p| p as u8)
        .ok_or_else(|| DecodeError::MalformedOperands(format!("expected FP register, got `{s}`")))
}

/// Parses a numeric literal: decimal or `0x` hex, optionally negative.
pub fn parse_number(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(&hex.replace('_', ""), 16).ok()?
    } else if !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit() || b == b'_') {
        body.replace('_', "").parse::<i64>().ok()?
    } else {
        return None;
    };
    Some(if neg { -v } else { v })
}

/// Resolves symbolic operands; the assembler supplies label addresses.
pub trait SymbolResolver {
    fn resolve(&self, name: &str) -> Option<i64>;
}

/// Resolver for standalone decoding: no symbols are known.
pub struct NoSymbols;

impl SymbolResolver for NoSymbols {
    fn resolve(&self, _name: &str) -> Option<i64> {
        None
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Value of an expression operand: a number, a symbol, or `symbol±number`.
/// Returns the value and whether it referenced a symbol.
pub fn eval_expr(s: &str, syms: &dyn SymbolResolver) -> Result<(i64, bool), DecodeError> {
    let s = s.trim();
    if let Some(v) = parse_number(s) {
        return Ok((v, false));
    }
    let split = s[1..].find(['+', '-']).map(|i| i + 1);
    let (name, offset) = match split {
        Some(i) => {
            let off = parse_number(&s[i..]).ok_or_else(|| {
                DecodeError::MalformedOperands(format!("bad offset in `{s}`"))
            })?;
            (s[..i].trim(), off)
        }
        None => (s, 0),
    };
    if !is_ident(name) {
        return Err(DecodeError::MalformedOperands(format!(
            "expected immediate, got `{s}`"
        )));
    }
    syms.resolve(name)
        .map(|v| (v + offset, true))
        .ok_or_else(|| DecodeError::UnresolvedSymbol(name.to_string()))
}

fn imm32(v: i64, what: &str) -> Result<i32, DecodeError> {
    if (i32::MIN as i64..=u32::MAX as i64).contains(&v) {
        Ok(v as u32 as i32)
    } else {
        Err(DecodeError::MalformedOperands(format!(
            "{what} {v} does not fit in 32 bits"
        )))
    }
}

fn parse_imm(s: &str, syms: &dyn SymbolResolver) -> Result<i32, DecodeError> {
    let (v, _) = eval_expr(s, syms)?;
    imm32(v, "immediate")
}

/// Branch/jump target: a symbol resolves to a pc-relative offset, a bare
/// number is taken as the offset itself.
fn parse_target(s: &str, pc: u32, syms: &dyn SymbolResolver) -> Result<i32, DecodeError> {
    let (v, symbolic) = eval_expr(s, syms)?;
    let off = if symbolic { v - pc as i64 } else { v };
    if off % 4 != 0 {
        return Err(DecodeError::MalformedOperands(format!(
            "branch offset {off} is not 4-byte aligned"
        )));
    }
    imm32(off, "branch offset")
}

fn parse_mem(s: &str, syms: &dyn SymbolResolver) -> Result<(i32, u8), DecodeError> {
    let s = s.trim();
    let open = s
        .find('(')
        .ok_or_else(|| DecodeError::MalformedOperands(format!("expected imm(reg), got `{s}`")))?;
    let close = s
        .rfind(')')
        .filter(|c| *c > open && s[c + 1..].trim().is_empty())
        .ok_or_else(|| DecodeError::MalformedOperands(format!("expected imm(reg), got `{s}`")))?;
    let off = if s[..open].trim().is_empty() {
        0
    } else {
        parse_imm(&s[..open], syms)?
    };
    Ok((off, parse_int_reg(&s[open + 1..close])?))
}

fn split_operands(s: &str) -> Vec<&str> {
    let s = s.trim();
    if s.is_empty() {
        Vec::new()
    } else {
        s.split(',').map(str::trim).collect()
    }
}

fn expect_count(ops: &[&str], n: usize, mnem: &str) -> Result<(), DecodeError> {
    if ops.len() == n {
        Ok(())
    } else {
        Err(DecodeError::MalformedOperands(format!(
            "`{mnem}` expects {n} operand(s), got {}",
            ops.len()
        )))
    }
}

fn parse_slot(s: &str) -> Result<u8, DecodeError> {
    parse_number(s)
        .filter(|v| (0..32).contains(v))
        .map(|v| v as u8)
        .ok_or_else(|| DecodeError::MalformedOperands(format!("bad stream slot `{s}`")))
}

fn parse_field(s: &str) -> Result<u8, DecodeError> {
    SsrField::parse(s)
        .map(SsrField::code)
        .ok_or_else(|| DecodeError::MalformedOperands(format!("unknown stream field `{s}`")))
}

/// Decodes one instruction given as text. Symbolic operands are rejected.
pub fn decode(text: &str) -> Result<Instruction, DecodeError> {
    parse_instruction(text, 0, &NoSymbols)
}

/// Decodes one instruction located at `pc`, resolving symbols through
/// `syms`. Pseudo-instructions (`nop`, `li`, `la`, `mv`, `j`, `bnez`,
/// `beqz`, `ret`) expand to a single canonical instruction.
pub fn parse_instruction(
    text: &str,
    pc: u32,
    syms: &dyn SymbolResolver,
) -> Result<Instruction, DecodeError> {
    let text = text.trim();
    let (mnem, rest) = match text.find(char::is_whitespace) {
        Some(i) => (&text[..i], &text[i..]),
        None => (text, ""),
    };
    let ops = split_operands(rest);
    let mnem_lc = mnem.to_ascii_lowercase();

    // pseudo-instructions
    match mnem_lc.as_str() {
        "nop" => {
            expect_count(&ops, 0, "nop")?;
            return Ok(Instruction::new(Opcode::Addi));
        }
        "li" | "la" => {
            expect_count(&ops, 2, &mnem_lc)?;
            return Ok(Instruction {
                rd: parse_int_reg(ops[0])?,
                imm: parse_imm(ops[1], syms)?,
                ..Instruction::new(Opcode::Addi)
            });
        }
        "mv" => {
            expect_count(&ops, 2, "mv")?;
            return Ok(Instruction {
                rd: parse_int_reg(ops[0])?,
                rs1: parse_int_reg(ops[1])?,
                ..Instruction::new(Opcode::Addi)
            });
        }
        "j" => {
            expect_count(&ops, 1, "j")?;
            return Ok(Instruction {
                imm: parse_target(ops[0], pc, syms)?,
                ..Instruction::new(Opcode::Jal)
            });
        }
        "bnez" | "beqz" => {
            expect_count(&ops, 2, &mnem_lc)?;
            let op = if mnem_lc == "bnez" { Opcode::Bne } else { Opcode::Beq };
            return Ok(Instruction {
                rs1: parse_int_reg(ops[0])?,
                imm: parse_target(ops[1], pc, syms)?,
                ..Instruction::new(op)
            });
        }
        "ret" => {
            expect_count(&ops, 0, "ret")?;
            return Ok(Instruction {
                rs1: 1,
                ..Instruction::new(Opcode::Jalr)
            });
        }
        _ => {}
    }

    let mut op = Opcode::from_mnemonic(&mnem_lc)
        .ok_or_else(|| DecodeError::UnsupportedInstruction(mnem.to_string()))?;
    // `ssr_cfg_write` takes either a register or an immediate value.
    if op == Opcode::SsrCfgWrite && ops.len() == 3 && parse_int_reg(ops[2]).is_err() {
        op = Opcode::SsrCfgWriteImm;
    }
    let mut ins = Instruction::new(op);
    let m = op.mnemonic();
    match op.format() {
        Format::R => {
            expect_count(&ops, 3, m)?;
            ins.rd = parse_int_reg(ops[0])?;
            ins.rs1 = parse_int_reg(ops[1])?;
            ins.rs2 = parse_int_reg(ops[2])?;
        }
        Format::I => {
            expect_count(&ops, 3, m)?;
            ins.rd = parse_int_reg(ops[0])?;
            ins.rs1 = parse_int_reg(ops[1])?;
            ins.imm = parse_imm(ops[2], syms)?;
            if matches!(op, Opcode::Slli | Opcode::Srli | Opcode::Srai)
                && !(0..32).contains(&ins.imm)
            {
                return Err(DecodeError::MalformedOperands(format!(
                    "shift amount {} out of range",
                    ins.imm
                )));
            }
        }
        Format::U => {
            expect_count(&ops, 2, m)?;
            ins.rd = parse_int_reg(ops[0])?;
            ins.imm = parse_imm(ops[1], syms)?;
            if !(0..1 << 20).contains(&ins.imm) {
                return Err(DecodeError::MalformedOperands(format!(
                    "upper immediate {} out of range",
                    ins.imm
                )));
            }
        }
        Format::B => {
            expect_count(&ops, 3, m)?;
            ins.rs1 = parse_int_reg(ops[0])?;
            ins.rs2 = parse_int_reg(ops[1])?;
            ins.imm = parse_target(ops[2], pc, syms)?;
        }
        Format::J => match ops.len() {
            1 => {
                ins.rd = 1;
                ins.imm = parse_target(ops[0], pc, syms)?;
            }
            _ => {
                expect_count(&ops, 2, m)?;
                ins.rd = parse_int_reg(ops[0])?;
                ins.imm = parse_target(ops[1], pc, syms)?;
            }
        },
        Format::Load if op == Opcode::Jalr && ops.len() == 1 => {
            ins.rs1 = parse_int_reg(ops[0])?;
        }
        Format::Load => {
            expect_count(&ops, 2, m)?;
            ins.rd = parse_int_reg(ops[0])?;
            (ins.imm, ins.rs1) = parse_mem(ops[1], syms)?;
        }
        Format::Store => {
            expect_count(&ops, 2, m)?;
            ins.rs2 = parse_int_reg(ops[0])?;
            (ins.imm, ins.rs1) = parse_mem(ops[1], syms)?;
        }
        Format::FLoad => {
            expect_count(&ops, 2, m)?;
            ins.rd = parse_fp_reg(ops[0])?;
            (ins.imm, ins.rs1) = parse_mem(ops[1], syms)?;
        }
        Format::FStore => {
            expect_count(&ops, 2, m)?;
            ins.rs2 = parse_fp_reg(ops[0])?;
            (ins.imm, ins.rs1) = parse_mem(ops[1], syms)?;
        }
        Format::R4 => {
            expect_count(&ops, 4, m)?;
            ins.rd = parse_fp_reg(ops[0])?;
            ins.rs1 = parse_fp_reg(ops[1])?;
            ins.rs2 = parse_fp_reg(ops[2])?;
            ins.rs3 = parse_fp_reg(ops[3])?;
        }
        Format::FR => {
            expect_count(&ops, 3, m)?;
            ins.rd = parse_fp_reg(ops[0])?;
            ins.rs1 = parse_fp_reg(ops[1])?;
            ins.rs2 = parse_fp_reg(ops[2])?;
        }
        Format::FR1 => {
            expect_count(&ops, 2, m)?;
            ins.rd = parse_fp_reg(ops[0])?;
            ins.rs1 = parse_fp_reg(ops[1])?;
        }
        Format::FFromX => {
            expect_count(&ops, 2, m)?;
            ins.rd = parse_fp_reg(ops[0])?;
            ins.rs1 = parse_int_reg(ops[1])?;
        }
        Format::XFromF => {
            expect_count(&ops, 2, m)?;
            ins.rd = parse_int_reg(ops[0])?;
            ins.rs1 = parse_fp_reg(ops[1])?;
        }
        Format::FCmp => {
            expect_count(&ops, 3, m)?;
            ins.rd = parse_int_reg(ops[0])?;
            ins.rs1 = parse_fp_reg(ops[1])?;
            ins.rs2 = parse_fp_reg(ops[2])?;
        }
        Format::Frep => {
            expect_count(&ops, 2, m)?;
            ins.rs1 = parse_int_reg(ops[0])?;
            ins.imm = parse_imm(ops[1], syms)?;
            if !(1..=crate::frep::SEQUENCE_BUFFER_LEN as i32).contains(&ins.imm) {
                return Err(DecodeError::MalformedOperands(format!(
                    "frep covers {} instructions, must be 1..={}",
                    ins.imm,
                    crate::frep::SEQUENCE_BUFFER_LEN
                )));
            }
        }
        Format::SsrW => {
            expect_count(&ops, 3, m)?;
            ins.rs2 = parse_slot(ops[0])?;
            ins.rs3 = parse_field(ops[1])?;
            ins.rs1 = parse_int_reg(ops[2])?;
        }
        Format::SsrWI => {
            expect_count(&ops, 3, m)?;
            ins.rs2 = parse_slot(ops[0])?;
            ins.rs3 = parse_field(ops[1])?;
            ins.imm = parse_imm(ops[2], syms)?;
        }
        Format::SsrR => {
            expect_count(&ops, 3, m)?;
            ins.rd = parse_int_reg(ops[0])?;
            ins.rs2 = parse_slot(ops[1])?;
            ins.rs3 = parse_field(ops[2])?;
        }
        Format::Nullary => expect_count(&ops, 0, m)?,
        Format::Rs1 => {
            expect_count(&ops, 1, m)?;
            ins.rs1 = parse_int_reg(ops[0])?;
        }
        Format::Rs1Rs2 => {
            expect_count(&ops, 2, m)?;
            ins.rs1 = parse_int_reg(ops[0])?;
            ins.rs2 = parse_int_reg(ops[1])?;
        }
        Format::RdRs1 => {
            expect_count(&ops, 2, m)?;
            ins.rd = parse_int_reg(ops[0])?;
            ins.rs1 = parse_int_reg(ops[1])?;
        }
        Format::Rd => {
            expect_count(&ops, 1, m)?;
            ins.rd = parse_int_reg(ops[0])?;
        }
    }
    Ok(ins)
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let x = int_reg_name;
        let fr = fp_reg_name;
        let m = self.mnemonic();
        let field = || {
            SsrField::from_code(self.rs3)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("?{}", self.rs3))
        };
        match self.op.format() {
            Format::R => write!(f, "{m} {}, {}, {}", x(self.rd), x(self.rs1), x(self.rs2)),
            Format::I => write!(f, "{m} {}, {}, {}", x(self.rd), x(self.rs1), self.imm),
            Format::U => write!(f, "{m} {}, {}", x(self.rd), self.imm),
            Format::B => write!(f, "{m} {}, {}, {}", x(self.rs1), x(self.rs2), self.imm),
            Format::J => write!(f, "{m} {}, {}", x(self.rd), self.imm),
            Format::Load => write!(f, "{m} {}, {}({})", x(self.rd), self.imm, x(self.rs1)),
            Format::Store => write!(f, "{m} {}, {}({})", x(self.rs2), self.imm, x(self.rs1)),
            Format::FLoad => write!(f, "{m} {}, {}({})", fr(self.rd), self.imm, x(self.rs1)),
            Format::FStore => write!(f, "{m} {}, {}({})", fr(self.rs2), self.imm, x(self.rs1)),
            Format::R4 => write!(
                f,
                "{m} {}, {}, {}, {}",
                fr(self.rd),
                fr(self.rs1),
                fr(self.rs2),
                fr(self.rs3)
            ),
            Format::FR => write!(f, "{m} {}, {}, {}", fr(self.rd), fr(self.rs1), fr(self.rs2)),
            Format::FR1 => write!(f, "{m} {}, {}", fr(self.rd), fr(self.rs1)),
            Format::FFromX => write!(f, "{m} {}, {}", fr(self.rd), x(self.rs1)),
            Format::XFromF => write!(f, "{m} {}, {}", x(self.rd), fr(self.rs1)),
            Format::FCmp => write!(f, "{m} {}, {}, {}", x(self.rd), fr(self.rs1), fr(self.rs2)),
            Format::Frep => write!(f, "{m} {}, {}", x(self.rs1), self.imm),
            Format::SsrW => write!(f, "{m} {}, {}, {}", self.rs2, field(), x(self.rs1)),
            Format::SsrWI => write!(f, "{m} {}, {}, {}", self.rs2, field(), self.imm),
            Format::SsrR => write!(f, "{m} {}, {}, {}", x(self.rd), self.rs2, field()),
            Format::Nullary => write!(f, "{m}"),
            Format::Rs1 => write!(f, "{m} {}", x(self.rs1)),
            Format::Rs1Rs2 => write!(f, "{m} {}, {}", x(self.rs1), x(self.rs2)),
            Format::RdRs1 => write!(f, "{m} {}, {}", x(self.rd), x(self.rs1)),
            Format::Rd => write!(f, "{m} {}", x(self.rd)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_stream_fmadd() {
        let i = decode("fmadd.d ft3, ft0, ft1, ft3").unwrap();
        assert_eq!(i.op, Opcode::FmaddD);
        assert_eq!(i.domain(), Domain::Fp);
        assert_eq!((i.rd, i.rs1, i.rs2, i.rs3), (3, 0, 1, 3));
        assert!(i.op.is_fma());
    }

    #[test]
    fn decodes_addi() {
        let i = decode("addi x10, x10, 8").unwrap();
        assert_eq!(i.op, Opcode::Addi);
        assert_eq!(i.domain(), Domain::Int);
        assert_eq!((i.rd, i.rs1, i.imm), (10, 10, 8));
    }

    #[test]
    fn rejects_quad_precision() {
        assert!(matches!(
            decode("fmadd.q ft3, ft0, ft1, ft3"),
            Err(DecodeError::UnsupportedInstruction(_))
        ));
    }

    #[test]
    fn rejects_bad_registers() {
        assert!(matches!(
            decode("add x32, x1, x2"),
            Err(DecodeError::MalformedOperands(_))
        ));
        assert!(matches!(
            decode("addi x1, x2"),
            Err(DecodeError::MalformedOperands(_))
        ));
        assert!(matches!(
            decode("fadd.d ft0, x1, ft2"),
            Err(DecodeError::MalformedOperands(_))
        ));
    }

    #[test]
    fn domain_classification_is_total() {
        for op in Opcode::ALL {
            let d = op.domain();
            if op.fp_class().is_some() {
                assert_eq!(d, Domain::Fp, "{op:?}");
            }
            if op.is_branch() || matches!(op, Opcode::Lw | Opcode::Addi | Opcode::Add) {
                assert_eq!(d, Domain::Int, "{op:?}");
            }
            if matches!(op, Opcode::Frep | Opcode::SsrCfgWrite | Opcode::DmCopy) {
                assert_eq!(d, Domain::Custom, "{op:?}");
            }
        }
    }

    #[test]
    fn ssr_cfg_write_forms() {
        let r = decode("ssr_cfg_write 1, stride2, t0").unwrap();
        assert_eq!(r.op, Opcode::SsrCfgWrite);
        assert_eq!(r.ssr_field(), Some(SsrField::Stride(2)));
        assert_eq!(r.rs1, 5);
        let i = decode("ssr_cfg_write 0, bound0, 48").unwrap();
        assert_eq!(i.op, Opcode::SsrCfgWriteImm);
        assert_eq!(i.imm, 48);
        assert_eq!(i.to_string(), "ssr_cfg_write 0, bound0, 48");
        assert!(decode("ssr_cfg_write 0, bound7, 1").is_err());
    }

    #[test]
    fn frep_length_is_bounded() {
        assert!(decode("frep t0, 16").is_ok());
        assert!(decode("frep t0, 17").is_err());
        assert!(decode("frep t0, 0").is_err());
    }

    #[test]
    fn pseudo_instructions_are_canonical() {
        assert_eq!(decode("nop").unwrap(), decode("addi zero, zero, 0").unwrap());
        assert_eq!(decode("li a0, -5").unwrap(), decode("addi x10, x0, -5").unwrap());
        assert_eq!(decode("mv a0, a1").unwrap(), decode("addi a0, a1, 0").unwrap());
        assert_eq!(decode("bnez t0, -8").unwrap(), decode("bne t0, zero, -8").unwrap());
    }

    #[test]
    fn display_roundtrips_every_format() {
        let samples = [
            "add a0, a1, a2",
            "addi sp, sp, -16",
            "lui t0, 4096",
            "bltu a2, a3, -60",
            "jal ra, 8",
            "jalr zero, 0(ra)",
            "lw t1, 12(a0)",
            "sw t1, -4(sp)",
            "fld ft2, 8(a0)",
            "fsd ft3, 24(a2)",
            "fmsub.s fa0, fa1, fa2, fa3",
            "fmul.d ft4, ft4, ft3",
            "fmv.d ft3, fs0",
            "fmv.d.x ft3, zero",
            "fcvt.w.d a0, fa0",
            "flt.d a0, ft0, ft1",
            "frep t0, 4",
            "ssr_cfg_write 2, dir, a1",
            "ssr_cfg_read a0, 1, bound3",
            "ssr_enable",
            "dm_str a0, a1",
            "dm_copy2d a0, a1",
            "dm_stat t0",
            "hartid s0",
            "halt",
        ];
        for s in samples {
            let i = decode(s).unwrap();
            assert_eq!(i.to_string(), s);
            assert_eq!(decode(&i.to_string()).unwrap(), i);
        }
    }

    #[test]
    fn large_immediates_wrap_to_32_bits() {
        let i = decode("li a0, 0x80100000").unwrap();
        assert_eq!(i.imm as u32, 0x8010_0000);
        assert!(decode("li a0, 0x100000000").is_err());
    }
}
