//! Two-pass assembler for the textual kernel dialect, and the matching
//! disassembler.
//!
//! A program is a list of sections. Code sections hold decoded
//! instructions (4 bytes each), data sections hold raw bytes. Labels name
//! addresses; `.equ` names constants.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::isa::{eval_expr, parse_instruction, DecodeError, Instruction, SymbolResolver};
use crate::memory::{L2_BASE, TCDM_BASE};

/// Default base of `.l2` / `.rodata` data, above the default code.
pub const L2_DATA_BASE: u32 = L2_BASE + 0x0010_0000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("{line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("{line}: unresolved label `{label}`")]
    UnresolvedLabel { line: usize, label: String },
    #[error("{line}: duplicate label `{label}`")]
    DuplicateLabel { line: usize, label: String },
    #[error("sections `{0}` and `{1}` overlap")]
    SectionOverlap(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionKind {
    Code,
    Data,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub base: u32,
    pub kind: SectionKind,
    pub code: Vec<Instruction>,
    pub data: Vec<u8>,
}

impl Section {
    pub fn size(&self) -> u32 {
        match self.kind {
            SectionKind::Code => 4 * self.code.len() as u32,
            SectionKind::Data => self.data.len() as u32,
        }
    }

    pub fn end(&self) -> u32 {
        self.base + self.size()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsmProgram {
    pub sections: Vec<Section>,
    /// Labels and constants.
    pub symbols: BTreeMap<String, u32>,
    /// Names defined by `.equ` rather than as labels.
    pub constants: Vec<String>,
    pub globals: Vec<String>,
    /// Number of cores that run the program.
    pub cores: usize,
    /// Per-core entry points set by `.entry`; other cores start at
    /// [`AsmProgram::entry`].
    pub entries: BTreeMap<usize, u32>,
}

impl AsmProgram {
    /// Default entry: `_start` if defined, else the first code section.
    pub fn entry(&self) -> u32 {
        self.symbols.get("_start").copied().unwrap_or_else(|| {
            self.sections
                .iter()
                .find(|s| s.kind == SectionKind::Code)
                .map_or(L2_BASE, |s| s.base)
        })
    }

    pub fn entry_for(&self, core: usize) -> u32 {
        self.entries.get(&core).copied().unwrap_or_else(|| self.entry())
    }

    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.get(name).copied()
    }

    /// Instruction at `pc`, if it lies in a code section.
    pub fn fetch(&self, pc: u32) -> Option<&Instruction> {
        self.sections
            .iter()
            .filter(|s| s.kind == SectionKind::Code)
            .find(|s| pc >= s.base && pc < s.end())
            .and_then(|s| s.code.get(((pc - s.base) / 4) as usize))
            .filter(|_| pc.is_multiple_of(4))
    }

    pub fn instruction_count(&self) -> usize {
        self.sections.iter().map(|s| s.code.len()).sum()
    }
}

struct Symbols<'a>(&'a BTreeMap<String, u32>);

impl SymbolResolver for Symbols<'_> {
    fn resolve(&self, name: &str) -> Option<i64> {
        self.0.get(name).map(|v| *v as i64)
    }
}

#[derive(Debug)]
enum ItemKind<'a> {
    Instr(&'a str),
    Words(Vec<&'a str>),
}

struct Item<'a> {
    line: usize,
    col: usize,
    section: usize,
    offset: u32,
    kind: ItemKind<'a>,
}

fn strip_comment(line: &str) -> &str {
    let cut = [line.find('#'), line.find("//")]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or(line.len());
    &line[..cut]
}

fn split_args(s: &str) -> Vec<&str> {
    if s.trim().is_empty() {
        return Vec::new();
    }
    s.split(',').map(str::trim).collect()
}

fn is_label(s: &str) -> bool {
    let mut c = s.chars();
    matches!(c.next(), Some(ch) if ch.is_ascii_alphabetic() || ch == '_' || ch == '.')
        && c.all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '.')
}

fn default_section(name: &str) -> Option<(u32, SectionKind)> {
    match name {
        ".text" => Some((L2_BASE, SectionKind::Code)),
        ".data" | ".tcdm" | ".bss" => Some((TCDM_BASE, SectionKind::Data)),
        ".l2" | ".rodata" => Some((L2_DATA_BASE, SectionKind::Data)),
        _ => None,
    }
}

struct Pass1<'a> {
    sections: Vec<Section>,
    sizes: Vec<u32>,
    current: Option<usize>,
    symbols: BTreeMap<String, u32>,
    constants: Vec<String>,
    globals: Vec<String>,
    cores: usize,
    entry_refs: Vec<(usize, usize, &'a str)>,
    items: Vec<Item<'a>>,
}

impl<'a> Pass1<'a> {
    fn err(line: usize, col: usize, msg: impl Into<String>) -> AsmError {
        AsmError::Parse { line, col, msg: msg.into() }
    }

    fn switch(&mut self, name: &str, base: Option<u32>, line: usize, col: usize) -> Result<(), AsmError> {
        if let Some(i) = self.sections.iter().position(|s| s.name == name) {
            if base.is_some_and(|b| b != self.sections[i].base) {
                return Err(Self::err(line, col, format!("section `{name}` redeclared at a new base")));
            }
            self.current = Some(i);
            return Ok(());
        }
        let kind = if name.starts_with(".text") {
            SectionKind::Code
        } else {
            SectionKind::Data
        };
        let base = match (base, default_section(name)) {
            (Some(b), _) => b,
            (None, Some((b, _))) => b,
            (None, None) => {
                return Err(Self::err(line, col, format!("section `{name}` needs a base address")))
            }
        };
        if kind == SectionKind::Code && base % 4 != 0 {
            return Err(Self::err(line, col, "code section base must be 4-byte aligned"));
        }
        self.sections.push(Section {
            name: name.to_string(),
            base,
            kind,
            code: Vec::new(),
            data: Vec::new(),
        });
        self.sizes.push(0);
        self.current = Some(self.sections.len() - 1);
        Ok(())
    }

    fn cur(&mut self, line: usize, col: usize) -> Result<usize, AsmError> {
        if self.current.is_none() {
            self.switch(".text", None, line, col)?;
        }
        Ok(self.current.unwrap())
    }

    fn define(&mut self, name: &str, value: u32, line: usize) -> Result<(), AsmError> {
        if self.symbols.insert(name.to_string(), value).is_some() {
            return Err(AsmError::DuplicateLabel { line, label: name.to_string() });
        }
        Ok(())
    }

    fn number(&self, s: &str, line: usize, col: usize) -> Result<i64, AsmError> {
        match eval_expr(s, &Symbols(&self.symbols)) {
            Ok((v, _)) => Ok(v),
            Err(DecodeError::UnresolvedSymbol(label)) => Err(AsmError::UnresolvedLabel { line, label }),
            Err(e) => Err(Self::err(line, col, e.to_string())),
        }
    }

    fn data_section(&mut self, dir: &str, line: usize, col: usize) -> Result<usize, AsmError> {
        let s = self.cur(line, col)?;
        if self.sections[s].kind == SectionKind::Code {
            return Err(Self::err(line, col, format!("`{dir}` is not allowed in a code section")));
        }
        Ok(s)
    }

    fn directive(&mut self, text: &'a str, line: usize, col: usize) -> Result<(), AsmError> {
        let (dir, rest) = match text.find(char::is_whitespace) {
            Some(i) => (&text[..i], text[i..].trim()),
            None => (text, ""),
        };
        let args = split_args(rest);
        let want = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(Self::err(line, col, format!("`{dir}` takes {n} argument(s)")))
            }
        };
        match dir {
            ".text" | ".data" => {
                want(0)?;
                self.switch(dir, None, line, col)
            }
            ".section" => {
                if args.is_empty() || args.len() > 2 {
                    return Err(Self::err(line, col, "usage: .section NAME[, BASE]"));
                }
                let base = match args.get(1) {
                    Some(b) => Some(self.number(b, line, col)? as u32),
                    None => None,
                };
                self.switch(args[0], base, line, col)
            }
            ".global" | ".globl" => {
                want(1)?;
                self.globals.push(args[0].to_string());
                Ok(())
            }
            ".equ" | ".set" => {
                want(2)?;
                if !is_label(args[0]) {
                    return Err(Self::err(line, col, format!("bad symbol name `{}`", args[0])));
                }
                let v = self.number(args[1], line, col)?;
                self.define(args[0], v as u32, line)?;
                self.constants.push(args[0].to_string());
                Ok(())
            }
            ".cores" => {
                want(1)?;
                let n = self.number(args[0], line, col)?;
                if !(1..=64).contains(&n) {
                    return Err(Self::err(line, col, format!("core count {n} out of range")));
                }
                self.cores = n as usize;
                Ok(())
            }
            ".entry" => {
                want(2)?;
                let core = self.number(args[0], line, col)?;
                if core < 0 {
                    return Err(Self::err(line, col, "negative core index"));
                }
                self.entry_refs.push((line, core as usize, args[1]));
                Ok(())
            }
            ".word" | ".double" | ".float" | ".byte" => {
                let s = self.data_section(dir, line, col)?;
                if args.is_empty() {
                    return Err(Self::err(line, col, format!("`{dir}` needs values")));
                }
                let unit = match dir {
                    ".double" => 8,
                    ".word" | ".float" => 4,
                    _ => 1,
                };
                let offset = self.sizes[s];
                self.sizes[s] += unit * args.len() as u32;
                let kind = match dir {
                    ".word" => ItemKind::Words(args),
                    _ => {
                        let mut bytes = Vec::new();
                        for a in &args {
                            match dir {
                                ".double" => bytes.extend(
                                    a.parse::<f64>()
                                        .map_err(|_| Self::err(line, col, format!("bad double `{a}`")))?
                                        .to_le_bytes(),
                                ),
                                ".float" => bytes.extend(
                                    a.parse::<f32>()
                                        .map_err(|_| Self::err(line, col, format!("bad float `{a}`")))?
                                        .to_le_bytes(),
                                ),
                                _ => {
                                    let v = self.number(a, line, col)?;
                                    if !(-128..=255).contains(&v) {
                                        return Err(Self::err(line, col, format!("byte {v} out of range")));
                                    }
                                    bytes.push(v as u8);
                                }
                            }
                        }
                        self.place_bytes(s, offset, &bytes);
                        return Ok(());
                    }
                };
                self.items.push(Item { line, col, section: s, offset, kind });
                Ok(())
            }
            ".space" | ".zero" => {
                want(1)?;
                let s = self.data_section(dir, line, col)?;
                let n = self.number(args[0], line, col)?;
                if !(0..=(1 << 24)).contains(&n) {
                    return Err(Self::err(line, col, format!("bad size {n}")));
                }
                let off = self.sizes[s];
                self.sizes[s] += n as u32;
                self.place_bytes(s, off, &vec![0; n as usize]);
                Ok(())
            }
            ".align" | ".balign" => {
                want(1)?;
                let s = self.data_section(dir, line, col)?;
                let n = self.number(args[0], line, col)?;
                let align = if dir == ".align" {
                    if !(0..=16).contains(&n) {
                        return Err(Self::err(line, col, format!("bad alignment {n}")));
                    }
                    1u32 << n
                } else {
                    if n <= 0 || (n as u64).count_ones() != 1 || n > 1 << 16 {
                        return Err(Self::err(line, col, format!("bad alignment {n}")));
                    }
                    n as u32
                };
                let addr = self.sections[s].base + self.sizes[s];
                let pad = (align - addr % align) % align;
                let off = self.sizes[s];
                self.sizes[s] += pad;
                self.place_bytes(s, off, &vec![0; pad as usize]);
                Ok(())
            }
            _ => Err(Self::err(line, col, format!("unknown directive `{dir}`"))),
        }
    }

    fn place_bytes(&mut self, s: usize, offset: u32, bytes: &[u8]) {
        let data = &mut self.sections[s].data;
        let end = offset as usize + bytes.len();
        if data.len() < end {
            data.resize(end, 0);
        }
        data[offset as usize..end].copy_from_slice(bytes);
    }
}

/// Assembles `src` into a program.
pub fn assemble(src: &str) -> Result<AsmProgram, AsmError> {
    let mut p = Pass1 {
        sections: Vec::new(),
        sizes: Vec::new(),
        current: None,
        symbols: BTreeMap::new(),
        constants: Vec::new(),
        globals: Vec::new(),
        cores: 1,
        entry_refs: Vec::new(),
        items: Vec::new(),
    };

    for (i, raw) in src.lines().enumerate() {
        let line = i + 1;
        let body = strip_comment(raw);
        let mut rest = body.trim_start();
        // leading labels
        while let Some(colon) = rest.find(':') {
            let name = rest[..colon].trim();
            if !is_label(name) {
                break;
            }
            let s = p.cur(line, 1)?;
            let addr = p.sections[s].base + p.sizes[s];
            p.define(name, addr, line)?;
            rest = rest[colon + 1..].trim_start();
        }
        let text = rest.trim_end();
        if text.is_empty() {
            continue;
        }
        let col = body.len() - rest.len() + 1;
        if text.starts_with('.') {
            p.directive(text, line, col)?;
        } else {
            let s = p.cur(line, col)?;
            if p.sections[s].kind != SectionKind::Code {
                return Err(Pass1::err(line, col, "instruction outside a code section"));
            }
            let offset = p.sizes[s];
            p.sizes[s] += 4;
            p.items.push(Item { line, col, section: s, offset, kind: ItemKind::Instr(text) });
        }
    }

    // pass 2: decode with all symbols known
    let syms = Symbols(&p.symbols);
    for (s, size) in p.sizes.iter().enumerate() {
        if p.sections[s].kind == SectionKind::Code {
            p.sections[s].code = vec![Instruction::new(crate::isa::Opcode::Addi); (*size / 4) as usize];
        } else {
            p.sections[s].data.resize(*size as usize, 0);
        }
    }
    for item in &p.items {
        let sec = &mut p.sections[item.section];
        let pc = sec.base + item.offset;
        match &item.kind {
            ItemKind::Instr(text) => {
                let ins = parse_instruction(text, pc, &syms).map_err(|e| match e {
                    DecodeError::UnresolvedSymbol(label) => AsmError::UnresolvedLabel { line: item.line, label },
                    e => Pass1::err(item.line, item.col, e.to_string()),
                })?;
                sec.code[(item.offset / 4) as usize] = ins;
            }
            ItemKind::Words(args) => {
                for (k, a) in args.iter().enumerate() {
                    let v = match eval_expr(a, &syms) {
                        Ok((v, _)) if (i32::MIN as i64..=u32::MAX as i64).contains(&v) => v as u32,
                        Ok((v, _)) => {
                            return Err(Pass1::err(item.line, item.col, format!("word {v} out of range")))
                        }
                        Err(DecodeError::UnresolvedSymbol(label)) => {
                            return Err(AsmError::UnresolvedLabel { line: item.line, label })
                        }
                        Err(e) => return Err(Pass1::err(item.line, item.col, e.to_string())),
                    };
                    let o = (item.offset + 4 * k as u32) as usize;
                    sec.data[o..o + 4].copy_from_slice(&v.to_le_bytes());
                }
            }
        }
    }

    let mut entries = BTreeMap::new();
    for (line, core, label) in &p.entry_refs {
        let addr = match eval_expr(label, &syms) {
            Ok((v, _)) => v as u32,
            Err(_) => return Err(AsmError::UnresolvedLabel { line: *line, label: label.to_string() }),
        };
        entries.insert(*core, addr);
    }
    for g in &p.globals {
        if !p.symbols.contains_key(g) {
            return Err(AsmError::UnresolvedLabel { line: 0, label: g.clone() });
        }
    }

    let sections = p.sections;
    for (i, a) in sections.iter().enumerate() {
        for b in &sections[i + 1..] {
            if a.size() > 0 && b.size() > 0 && a.base < b.end() && b.base < a.end() {
                return Err(AsmError::SectionOverlap(a.name.clone(), b.name.clone()));
            }
        }
    }

    Ok(AsmProgram {
        sections,
        symbols: p.symbols,
        constants: p.constants,
        globals: p.globals,
        cores: p.cores,
        entries,
    })
}

/// Renders a program as source text that assembles back to an equal
/// program.
pub fn disassemble(prog: &AsmProgram) -> String {
    let mut out = String::new();
    let constants: Vec<&String> = prog.constants.iter().collect();
    for name in &constants {
        let _ = writeln!(out, ".equ {name}, {:#x}", prog.symbols[*name]);
    }
    if prog.cores != 1 {
        let _ = writeln!(out, ".cores {}", prog.cores);
    }
    for g in &prog.globals {
        let _ = writeln!(out, ".global {g}");
    }

    // labels by address, excluding constants
    let mut labels: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for (name, addr) in &prog.symbols {
        if !prog.constants.contains(name) {
            labels.entry(*addr).or_default().push(name);
        }
    }
    let mut placed: Vec<&str> = Vec::new();
    fn emit_labels<'a>(
        out: &mut String,
        labels: &BTreeMap<u32, Vec<&'a str>>,
        addr: u32,
        placed: &mut Vec<&'a str>,
    ) {
        for n in labels.get(&addr).into_iter().flatten() {
            if !placed.contains(n) {
                let _ = writeln!(out, "{n}:");
                placed.push(n);
            }
        }
    }

    for sec in &prog.sections {
        let _ = writeln!(out, "\n.section {}, {:#x}", sec.name, sec.base);
        match sec.kind {
            SectionKind::Code => {
                for (i, ins) in sec.code.iter().enumerate() {
                    emit_labels(&mut out, &labels, sec.base + 4 * i as u32, &mut placed);
                    let _ = writeln!(out, "    {ins}");
                }
            }
            SectionKind::Data => {
                let mut cuts: Vec<u32> = labels
                    .range(sec.base..sec.end())
                    .map(|(a, _)| a - sec.base)
                    .collect();
                cuts.push(sec.size());
                let mut start = 0;
                for cut in cuts {
                    emit_labels(&mut out, &labels, sec.base + start, &mut placed);
                    for chunk in sec.data[start as usize..cut as usize].chunks(16) {
                        let bytes: Vec<String> = chunk.iter().map(|b| format!("{b:#04x}")).collect();
                        let _ = writeln!(out, "    .byte {}", bytes.join(", "));
                    }
                    start = cut;
                }
            }
        }
        emit_labels(&mut out, &labels, sec.end(), &mut placed);
    }
    // labels outside every section
    let stray: Vec<(u32, &str)> = labels
        .iter()
        .flat_map(|(a, ns)| ns.iter().map(move |n| (*a, *n)))
        .filter(|(_, n)| !placed.contains(n))
        .collect();
    for (addr, name) in stray {
        let _ = writeln!(out, ".equ {name}, {addr:#x}");
    }
    for (core, addr) in &prog.entries {
        let _ = writeln!(out, ".entry {core}, {addr:#x}");
    }
    out
}
