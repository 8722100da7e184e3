//! The cluster: cores with their FPU subsystems, the banked scratchpad,
//! the DMA engine and the shared instruction cache, advanced in lockstep.
//!
//! Each cycle runs in four phases. First every FPU issues at most one
//! instruction. Then all scratchpad requests of the cycle (stream
//! prefetches and stores, integer-pipe loads and stores, DMA beats) are
//! collected and arbitrated per bank. Finally grants are applied, the
//! integer pipelines execute and the DMA advances.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::{AsmProgram, SectionKind};
use crate::core::{execute, fp_to_int, CoreState, ExecError};
use crate::dma::{DmaDescriptor, DmaEngine, DmaError};
use crate::fpu::{self, FpuPipe, LatencyTable};
use crate::frep::{FrepError, FrepState, Mode, SEQUENCE_BUFFER_LEN};
use crate::image::{ImageError, MemoryImage};
use crate::isa::{Instruction, Opcode};
use crate::memory::{FixedLatency, MemError, Memory, Region};
use crate::ssr::{Direction, SsrEngine, SsrError, NUM_SLOTS};
use crate::stats::{ClusterStats, CoreStats, StallCause};
use crate::tcdm::{BankArbiter, BankRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub n_cores: usize,
    pub tcdm_size: usize,
    pub tcdm_banks: usize,
    pub bank_width: u32,
    pub dma_bus_width: u32,
    pub icache_size: usize,
    pub icache_line: u32,
    /// Start with every instruction line resident.
    pub icache_prewarm: bool,
    pub l2_size: usize,
    pub l2_latency: u64,
    pub tcdm_latency: u64,
    pub ssr_fifo_depth: usize,
    pub fp_queue_depth: usize,
    pub dma_queue_depth: usize,
    pub latencies: LatencyTable,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            n_cores: 8,
            tcdm_size: 128 * 1024,
            tcdm_banks: 32,
            bank_width: 8,
            dma_bus_width: 64,
            icache_size: 8192,
            icache_line: 32,
            icache_prewarm: true,
            l2_size: 4 << 20,
            l2_latency: 10,
            tcdm_latency: 1,
            ssr_fifo_depth: 4,
            fp_queue_depth: 8,
            dma_queue_depth: 16,
            latencies: LatencyTable::default(),
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.n_cores == 0 || self.n_cores > 64 {
            return bad("n_cores must be 1..=64");
        }
        if self.tcdm_banks == 0 || self.bank_width == 0 || !self.bank_width.is_power_of_two() {
            return bad("banks and a power-of-two bank width are required");
        }
        if self.tcdm_size == 0 || !self.tcdm_size.is_multiple_of(self.tcdm_banks * self.bank_width as usize) {
            return bad("tcdm_size must be a multiple of tcdm_banks * bank_width");
        }
        if self.tcdm_size > 0x7fff_0000 || self.l2_size > 0x7fff_ffff {
            return bad("memory sizes exceed the address map");
        }
        if self.dma_bus_width == 0 || self.icache_line == 0 || !self.icache_line.is_power_of_two() {
            return bad("dma_bus_width and a power-of-two icache_line are required");
        }
        if self.ssr_fifo_depth == 0 || self.fp_queue_depth == 0 || self.dma_queue_depth == 0 {
            return bad("queue depths must be at least 1");
        }
        if self.tcdm_latency == 0 || self.latencies.fma == 0 || self.latencies.add_mul == 0 || self.latencies.moves == 0 {
            return bad("latencies must be at least 1 cycle");
        }
        Ok(())
    }

    /// Peak DP flop per cycle: one FMA per core.
    pub fn peak_flop_per_cycle(&self) -> f64 {
        2.0 * self.n_cores as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FaultKind {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Ssr(#[from] SsrError),
    #[error(transparent)]
    Frep(#[from] FrepError),
    #[error(transparent)]
    Dma(#[from] DmaError),
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error("no instruction at pc")]
    NoInstruction,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid cluster configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot load program: {0}")]
    Load(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("cycle limit of {limit} reached")]
    CycleLimitExceeded { limit: u64, partial: Box<RunOutput> },
    #[error("core {core}, pc {pc:#010x}, cycle {cycle}: {kind}")]
    SimulationFault {
        core: usize,
        pc: u32,
        cycle: u64,
        kind: FaultKind,
    },
}

/// What the integer pipeline did in one cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IntEvent {
    Retire { pc: u32, ins: Instruction },
    Stall { pc: u32, cause: StallCause },
    Idle,
}

/// What the FPU did in one cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FpEvent {
    Issue { ins: Instruction, iter: Option<(u32, u32)> },
    Stall(StallCause),
    Idle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub cycle: u64,
    pub core: usize,
    pub int: IntEvent,
    pub fp: FpEvent,
}

impl fmt::Display for TraceRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let int = match &self.int {
            IntEvent::Retire { pc, ins } => format!("{pc:08x} {ins}"),
            IntEvent::Stall { pc, cause } => format!("{pc:08x} <{}>", cause.key()),
            IntEvent::Idle => "-".to_string(),
        };
        let fp = match &self.fp {
            FpEvent::Issue { ins, iter: Some((i, n)) } => format!("{ins} [iter {i}/{n}]"),
            FpEvent::Issue { ins, iter: None } => ins.to_string(),
            FpEvent::Stall(c) => format!("<{}>", c.key()),
            FpEvent::Idle => "-".to_string(),
        };
        write!(f, "{:>8} | {:<4} | int: {:<40} | fp: {}", self.cycle, format!("c{}", self.core), int, fp)
    }
}

/// Dual-column execution trace, one row per cycle per running core.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} | core | {:<45} | fp-pipe", "cycle", "int-pipe")?;
        for r in &self.rows {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub max_cycles: u64,
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_cycles: 10_000_000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub cycles: u64,
    pub memory: Memory,
    pub cores: Vec<CoreState>,
    pub stats: ClusterStats,
    pub trace: Option<Trace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Queued {
    Op { ins: Instruction, x: u32 },
    Frep { count: u32, n: u32 },
}

#[derive(Debug, Clone, Copy, Default)]
struct DmaRegs {
    src: u32,
    dst: u32,
    src_stride: u32,
    dst_stride: u32,
    reps: u32,
}

#[derive(Debug, Clone)]
struct Core {
    id: usize,
    state: CoreState,
    running: bool,
    ssr: SsrEngine,
    seq: FrepState,
    captured_x: Vec<u32>,
    fpu: FpuPipe,
    queue: VecDeque<Queued>,
    queue_depth: usize,
    /// Offloaded instructions still to be dispatched into an open frep.
    capture_left: u32,
    busy_until: u64,
    dma: DmaRegs,
    stats: CoreStats,
}

#[derive(Debug, Clone, Copy)]
struct MemReq {
    addr: u32,
    width: u32,
    tcdm: bool,
}

#[derive(Debug, Clone, Copy)]
enum IntPlan {
    Idle,
    Stall(StallCause),
    Exec {
        pc: u32,
        ins: Instruction,
        mem: Option<MemReq>,
    },
}

#[derive(Debug, Clone, Copy)]
enum Owner {
    StreamRead { core: usize, slot: usize, addr: u32, width: u32 },
    StreamWrite { core: usize, slot: usize, addr: u32, width: u32, value: u64 },
    Int { core: usize },
    Dma,
}

impl Core {
    fn new(id: usize, cfg: &ClusterConfig) -> Self {
        Core {
            id,
            state: CoreState::new(0),
            running: false,
            ssr: SsrEngine::new(cfg.ssr_fifo_depth),
            seq: FrepState::new(),
            captured_x: Vec::with_capacity(SEQUENCE_BUFFER_LEN),
            fpu: FpuPipe::new(cfg.latencies),
            queue: VecDeque::with_capacity(cfg.fp_queue_depth),
            queue_depth: cfg.fp_queue_depth,
            capture_left: 0,
            busy_until: 0,
            dma: DmaRegs::default(),
            stats: CoreStats::default(),
        }
    }

    fn fpu_idle(&self) -> bool {
        self.queue.is_empty() && self.seq.is_idle()
    }

    /// FPU has finished everything and no stream store is pending.
    fn fpu_drained(&self, t: u64) -> bool {
        self.fpu_idle() && self.fpu.drained_at() <= t && self.ssr.writes_drained()
    }

    /// Whether the core-side read of FP register `r` can happen at `t`.
    fn fp_readable(&self, r: u8, t: u64) -> Result<bool, FaultKind> {
        match self.ssr.stream_of(r) {
            Some((slot, Direction::Read)) => Ok(self.ssr.can_pop(slot, 1, t)?),
            Some((slot, Direction::Write)) => Err(SsrError::DirectionMismatch(slot).into()),
            None => Ok(self.fpu.is_ready(r, t)),
        }
    }

    fn fp_read(&mut self, r: u8) -> u64 {
        match self.ssr.stream_of(r) {
            Some((slot, _)) => self.ssr.pop(slot),
            None => self.state.fp_regs[r as usize],
        }
    }

    fn fpu_step(&mut self, t: u64) -> Result<FpEvent, FaultKind> {
        let (ins, x, replay, iter) = loop {
            if let Some((ins, it)) = self.seq.current() {
                let x = self.captured_x[self.seq.inst_ptr()];
                break (ins, x, true, Some((it, self.seq.total_iters())));
            }
            match self.queue.front().copied() {
                None => return Ok(FpEvent::Idle),
                Some(Queued::Frep { count, n }) => {
                    self.seq.issue(count, n)?;
                    self.captured_x.clear();
                    self.queue.pop_front();
                }
                Some(Queued::Op { ins, x }) => {
                    let iter = (self.seq.mode() == Mode::Capturing).then(|| (1, self.seq.total_iters()));
                    break (ins, x, false, iter);
                }
            }
        };

        let srcs = ins.fp_sources();
        let mut pops = [0usize; NUM_SLOTS];
        for &r in &srcs {
            match self.ssr.stream_of(r) {
                Some((s, Direction::Read)) => pops[s] += 1,
                Some((s, Direction::Write)) => return Err(SsrError::DirectionMismatch(s).into()),
                None if !self.fpu.is_ready(r, t) => return Ok(FpEvent::Stall(StallCause::Hazard)),
                None => {}
            }
        }
        for (s, &n) in pops.iter().enumerate() {
            if n > 0 && !self.ssr.can_pop(s, n, t)? {
                return Ok(FpEvent::Stall(StallCause::StreamEmpty));
            }
        }
        let rd = ins.fp_dest().expect("FPU instructions write an FP register");
        let dest_stream = match self.ssr.stream_of(rd) {
            Some((s, Direction::Read)) => return Err(SsrError::DirectionMismatch(s).into()),
            Some((s, Direction::Write)) => {
                if !self.ssr.can_push(s)? {
                    return Ok(FpEvent::Stall(StallCause::StreamEmpty));
                }
                Some(s)
            }
            None => {
                if !self.fpu.can_write(&ins, t) {
                    return Ok(FpEvent::Stall(StallCause::Hazard));
                }
                None
            }
        };

        let mut v = [0u64; 3];
        for (k, &r) in srcs.iter().enumerate() {
            v[k] = self.fp_read(r);
        }
        let result = fpu::compute(ins.op, v[0], v[1], v[2], x);
        let done = self.fpu.issue(&ins, t);
        match dest_stream {
            Some(s) => self.ssr.push(s, result, done),
            None => self.state.fp_regs[rd as usize] = result,
        }

        if replay {
            self.seq.advance();
        } else {
            self.queue.pop_front();
            if self.seq.mode() == Mode::Capturing {
                self.seq.capture(ins)?;
                self.captured_x.push(x);
            }
        }
        self.stats.fp_executed += 1;
        self.stats.flops += ins.op.flops();
        if ins.op.is_fma() {
            self.stats.fma_executed += 1;
        }
        Ok(FpEvent::Issue { ins, iter })
    }

    fn plan(&mut self, t: u64, prog: &AsmProgram, icache: &mut ICache, mem: &Memory) -> Result<IntPlan, FaultKind> {
        if !self.running {
            return Ok(IntPlan::Idle);
        }
        if t < self.busy_until {
            return Ok(IntPlan::Stall(StallCause::MemLatency));
        }
        let pc = self.state.pc;
        let ins = *prog.fetch(pc).ok_or(FaultKind::NoInstruction)?;
        if !icache.hit(pc, t) {
            return Ok(IntPlan::Stall(StallCause::ICacheMiss));
        }
        if self.capture_left > 0 {
            if ins.op == Opcode::Frep {
                return Err(FrepError::NestedFrep.into());
            }
            if !ins.op.is_offloaded() {
                return Err(FrepError::NonFpInCapture(ins.op.mnemonic()).into());
            }
        }
        let stall = |c| Ok(IntPlan::Stall(c));
        use Opcode::*;
        match ins.op {
            op if op.is_offloaded() || op == Frep => {
                if self.queue.len() >= self.queue_depth {
                    return stall(StallCause::QueueFull);
                }
            }
            Fld | Flw => {
                if !self.fpu_idle() || !self.fpu.is_ready(ins.rd, t) {
                    return stall(StallCause::Hazard);
                }
                match self.ssr.stream_of(ins.rd) {
                    Some((s, Direction::Read)) => return Err(SsrError::DirectionMismatch(s).into()),
                    Some((s, Direction::Write)) if !self.ssr.can_push(s)? => {
                        return stall(StallCause::StreamEmpty)
                    }
                    _ => {}
                }
            }
            Fsd | Fsw | FmvXD | FcvtWD | FeqD | FltD | FleD => {
                if !self.fpu_idle() {
                    return stall(StallCause::Hazard);
                }
                let srcs = ins.fp_sources();
                for &r in &srcs {
                    if !self.fp_readable(r, t)? {
                        return stall(StallCause::Hazard);
                    }
                }
                if srcs.len() == 2 && srcs[0] == srcs[1] {
                    if let Some((s, _)) = self.ssr.stream_of(srcs[0]) {
                        if !self.ssr.can_pop(s, 2, t)? {
                            return stall(StallCause::Hazard);
                        }
                    }
                }
            }
            SsrEnable | SsrDisable | Halt
                if !self.fpu_drained(t) => {
                    return stall(StallCause::Hazard);
                }
            _ => {}
        }
        let mem_req = if ins.op.is_memory() {
            let addr = self.state.x(ins.rs1).wrapping_add(ins.imm as u32);
            let width = match ins.op {
                Fld | Fsd => 8,
                _ => 4,
            };
            if !addr.is_multiple_of(width) {
                return Err(MemError::MisalignedAccess { addr, width }.into());
            }
            let region = mem
                .region_of(addr, width)
                .ok_or(MemError::OutOfRangeAccess { addr, width })?;
            Some(MemReq { addr, width, tcdm: region == Region::Tcdm })
        } else {
            None
        };
        Ok(IntPlan::Exec { pc, ins, mem: mem_req })
    }

}

#[derive(Debug, Clone)]
struct ICache {
    prewarm: bool,
    line: u32,
    latency: u64,
    lines: BTreeMap<u32, u64>,
}

impl ICache {
    fn hit(&mut self, pc: u32, t: u64) -> bool {
        if self.prewarm {
            return true;
        }
        let line = pc / self.line;
        match self.lines.get(&line) {
            Some(&ready) => ready <= t,
            None => {
                self.lines.insert(line, t + self.latency);
                false
            }
        }
    }
}

/// A cluster with a loaded program, ready to run.
#[derive(Debug, Clone)]
pub struct Cluster {
    cfg: ClusterConfig,
    mem: Memory,
    cores: Vec<Core>,
    arbiter: BankArbiter,
    dma: DmaEngine,
    icache: ICache,
    program: AsmProgram,
    cycle: u64,
}

impl Cluster {
    pub fn new(cfg: ClusterConfig, program: AsmProgram) -> Result<Self, SimError> {
        cfg.validate()?;
        if program.cores > cfg.n_cores {
            return Err(SimError::Load(format!(
                "program wants {} cores, cluster has {}",
                program.cores, cfg.n_cores
            )));
        }
        let mut mem = Memory::new(cfg.tcdm_size, cfg.l2_size);
        for s in program.sections.iter().filter(|s| s.kind == SectionKind::Data) {
            mem.write_bytes(s.base, &s.data)
                .map_err(|e| SimError::Load(format!("section `{}`: {e}", s.name)))?;
        }
        let mut cores: Vec<Core> = (0..cfg.n_cores).map(|i| Core::new(i, &cfg)).collect();
        for (i, c) in cores.iter_mut().enumerate().take(program.cores) {
            c.state.pc = program.entry_for(i);
            c.running = true;
        }
        Ok(Cluster {
            arbiter: BankArbiter::new(cfg.tcdm_banks, cfg.bank_width, 4 * cfg.n_cores + 1),
            dma: DmaEngine::new(cfg.dma_bus_width, cfg.l2_latency, cfg.dma_queue_depth),
            icache: ICache {
                prewarm: cfg.icache_prewarm,
                line: cfg.icache_line,
                latency: cfg.l2_latency,
                lines: BTreeMap::new(),
            },
            cores,
            mem,
            program,
            cycle: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.cfg
    }

    pub fn memory(&self) -> &Memory {
        &self.mem
    }

    pub fn memory_mut(&mut self) -> &mut Memory {
        &mut self.mem
    }

    pub fn load_image(&mut self, img: &MemoryImage) -> Result<(), SimError> {
        img.apply(&mut self.mem)?;
        Ok(())
    }

    /// Queues a DMA transfer from the harness, as if issued at the current
    /// cycle.
    pub fn submit_dma(&mut self, desc: DmaDescriptor) -> Result<u32, DmaError> {
        self.dma.submit(desc, self.cycle, &self.mem)
    }

    fn done(&self) -> bool {
        self.cores.iter().all(|c| !c.running && c.fpu_drained(self.cycle)) && self.dma.is_idle()
    }

    fn output(&self, trace: Option<Trace>) -> RunOutput {
        let active = self.program.cores;
        RunOutput {
            cycles: self.cycle,
            memory: self.mem.clone(),
            cores: self.cores.iter().map(|c| c.state.clone()).collect(),
            stats: ClusterStats {
                cycles: self.cycle,
                active_cores: active,
                cores: self.cores[..active].iter().map(|c| c.stats).collect(),
                dma: self.dma.stats,
            },
            trace,
        }
    }

    /// Runs until every core has halted and the DMA is idle.
    pub fn run(mut self, opts: RunOptions) -> Result<RunOutput, SimError> {
        let mut trace = opts.trace.then(Trace::default);
        while !self.done() {
            if self.cycle >= opts.max_cycles {
                return Err(SimError::CycleLimitExceeded {
                    limit: opts.max_cycles,
                    partial: Box::new(self.output(trace)),
                });
            }
            self.tick(trace.as_mut())?;
        }
        Ok(self.output(trace))
    }

    fn fault(&self, core: usize, kind: FaultKind) -> SimError {
        SimError::SimulationFault {
            core,
            pc: self.cores[core].state.pc,
            cycle: self.cycle,
            kind,
        }
    }

    fn tick(&mut self, trace: Option<&mut Trace>) -> Result<(), SimError> {
        let t = self.cycle;
        let n = self.cores.len();

        // phase 1: FPUs
        let mut fp_events = Vec::with_capacity(n);
        for i in 0..n {
            let ev = self.cores[i].fpu_step(t).map_err(|k| self.fault(i, k))?;
            let c = &mut self.cores[i];
            match &ev {
                FpEvent::Issue { .. } => c.stats.fp.active += 1,
                FpEvent::Stall(cause) => c.stats.fp.add_stall(*cause),
                FpEvent::Idle => c.stats.fp.add_stall(StallCause::Idle),
            }
            fp_events.push(ev);
        }

        // phase 2: collect requests
        let mut reqs = Vec::new();
        let mut owners = Vec::new();
        let mut plans = Vec::with_capacity(n);
        for i in 0..n {
            let base = 4 * i;
            for slot in 0..NUM_SLOTS {
                let c = &self.cores[i];
                let (owner, addr, width) = if let Some((addr, width)) = c.ssr.prefetch_request(slot) {
                    (Owner::StreamRead { core: i, slot, addr, width }, addr, width)
                } else if let Some((addr, width, value)) = c.ssr.store_request(slot, t) {
                    (Owner::StreamWrite { core: i, slot, addr, width, value }, addr, width)
                } else {
                    continue;
                };
                if addr % width != 0 {
                    return Err(self.fault(i, MemError::MisalignedAccess { addr, width }.into()));
                }
                match self.mem.region_of(addr, width) {
                    Some(Region::Tcdm) => {
                        reqs.push(BankRequest { requester: base + 1 + slot, bank: self.arbiter.bank_of(addr) });
                        owners.push(owner);
                    }
                    Some(Region::L2) => {
                        // outside the scratchpad: no bank to contend for
                        self.apply_stream(owner, t, self.cfg.l2_latency)
                            .map_err(|k| self.fault(i, k))?;
                    }
                    None => return Err(self.fault(i, MemError::OutOfRangeAccess { addr, width }.into())),
                }
            }
            let plan = {
                let (cores, icache) = (&mut self.cores, &mut self.icache);
                cores[i].plan(t, &self.program, icache, &self.mem)
            }
            .map_err(|k| self.fault(i, k))?;
            if let IntPlan::Exec { mem: Some(m), .. } = plan {
                if m.tcdm {
                    reqs.push(BankRequest { requester: base, bank: self.arbiter.bank_of(m.addr) });
                    owners.push(Owner::Int { core: i });
                }
            }
            plans.push(plan);
        }
        let dma_banks = self.dma.requests(t, &self.arbiter, &self.mem);
        for &bank in &dma_banks {
            reqs.push(BankRequest { requester: 4 * n, bank });
            owners.push(Owner::Dma);
        }

        // phase 3: arbitration
        let granted = self.arbiter.arbitrate(&reqs);

        // phase 4: apply
        let mut int_granted = vec![false; n];
        let mut dma_grants = Vec::with_capacity(dma_banks.len());
        for (owner, &g) in owners.iter().zip(&granted) {
            match *owner {
                Owner::StreamRead { core, .. } | Owner::StreamWrite { core, .. } => {
                    let c = &mut self.cores[core];
                    c.stats.tcdm_requests += 1;
                    if g {
                        self.apply_stream(*owner, t, self.cfg.tcdm_latency)
                            .map_err(|k| self.fault(core, k))?;
                    } else {
                        c.stats.tcdm_conflicts += 1;
                    }
                }
                Owner::Int { core } => {
                    self.cores[core].stats.tcdm_requests += 1;
                    int_granted[core] = g;
                }
                Owner::Dma => dma_grants.push(g),
            }
        }

        let mut int_events = Vec::with_capacity(n);
        for (i, plan) in plans.into_iter().enumerate() {
            let ev = self.commit(i, plan, int_granted[i], t).map_err(|k| self.fault(i, k))?;
            let c = &mut self.cores[i];
            match &ev {
                IntEvent::Retire { .. } => c.stats.int.active += 1,
                IntEvent::Stall { cause, .. } => {
                    c.stats.int.add_stall(*cause);
                    if *cause == StallCause::BankConflict {
                        c.stats.tcdm_conflicts += 1;
                    }
                }
                IntEvent::Idle => c.stats.int.add_stall(StallCause::Idle),
            }
            int_events.push(ev);
        }

        self.dma.advance(&dma_grants, &mut self.mem);

        if let Some(tr) = trace {
            for (i, (int, fp)) in int_events.into_iter().zip(fp_events).enumerate() {
                if i < self.program.cores && !(int == IntEvent::Idle && fp == FpEvent::Idle) {
                    tr.rows.push(TraceRow { cycle: t, core: i, int, fp });
                }
            }
        }

        self.cycle += 1;
        for c in &mut self.cores {
            c.state.cycle = self.cycle;
        }
        Ok(())
    }

    fn apply_stream(&mut self, owner: Owner, t: u64, latency: u64) -> Result<(), FaultKind> {
        match owner {
            Owner::StreamRead { core, slot, addr, width } => {
                let v = self.mem.load(addr, width)?;
                self.cores[core].ssr.prefetch_grant(slot, v, t + latency);
            }
            Owner::StreamWrite { core, slot, addr, width, value } => {
                self.mem.store(addr, width, value)?;
                self.cores[core].ssr.store_grant(slot);
            }
            _ => unreachable!(),
        }
        Ok(())
    }

    fn commit(&mut self, i: usize, plan: IntPlan, granted: bool, t: u64) -> Result<IntEvent, FaultKind> {
        let (pc, ins, mreq) = match plan {
            IntPlan::Idle => return Ok(IntEvent::Idle),
            IntPlan::Stall(cause) => {
                return Ok(IntEvent::Stall { pc: self.cores[i].state.pc, cause });
            }
            IntPlan::Exec { pc, ins, mem } => (pc, ins, mem),
        };
        if mreq.is_some_and(|m| m.tcdm && !granted) {
            return Ok(IntEvent::Stall { pc, cause: StallCause::BankConflict });
        }
        let (tcdm_lat, l2_lat) = (self.cfg.tcdm_latency, self.cfg.l2_latency);
        let c = &mut self.cores[i];
        let mut next_pc = pc.wrapping_add(4);
        let mut latency = 0;
        use Opcode::*;
        match ins.op {
            op if op.is_offloaded() => {
                c.queue.push_back(Queued::Op { ins, x: c.state.x(ins.rs1) });
                c.capture_left = c.capture_left.saturating_sub(1);
            }
            Frep => {
                let count = c.state.x(ins.rs1);
                if count == 0 {
                    return Err(FrepError::CountZero.into());
                }
                let n = ins.imm as u32;
                if n == 0 || n as usize > SEQUENCE_BUFFER_LEN {
                    return Err(FrepError::InvalidLength(n).into());
                }
                c.queue.push_back(Queued::Frep { count, n });
                c.capture_left = n;
            }
            Fsd | Fsw if c.ssr.stream_of(ins.rs2).is_some() => {
                let v = c.fp_read(ins.rs2);
                let m = mreq.unwrap();
                let v = if m.width == 4 { v & 0xffff_ffff } else { v };
                self.mem.store(m.addr, m.width, v)?;
            }
            Fld | Flw if c.ssr.stream_of(ins.rd).is_some() => {
                let m = mreq.unwrap();
                let v = self.mem.load(m.addr, m.width)?;
                latency = if m.tcdm { tcdm_lat } else { l2_lat };
                let (slot, _) = c.ssr.stream_of(ins.rd).unwrap();
                c.ssr.push(slot, v, t + 1 + latency);
            }
            FmvXD | FcvtWD | FeqD | FltD | FleD
                if ins.fp_sources().iter().any(|r| c.ssr.stream_of(*r).is_some()) =>
            {
                let srcs = ins.fp_sources();
                let a = c.fp_read(srcs[0]);
                let b = if srcs.len() > 1 { c.fp_read(srcs[1]) } else { 0 };
                c.state.set_x(ins.rd, fp_to_int(ins.op, a, b));
            }
            SsrCfgWrite | SsrCfgWriteImm => {
                let field = ins
                    .ssr_field()
                    .ok_or_else(|| SsrError::InvalidConfig(format!("field code {}", ins.rs3)))?;
                let value = if ins.op == SsrCfgWrite { c.state.x(ins.rs1) } else { ins.imm as u32 };
                c.ssr.write_field(ins.ssr_slot() as usize, field, value)?;
            }
            SsrCfgRead => {
                let field = ins
                    .ssr_field()
                    .ok_or_else(|| SsrError::InvalidConfig(format!("field code {}", ins.rs3)))?;
                let v = c.ssr.read_field(ins.ssr_slot() as usize, field)?;
                c.state.set_x(ins.rd, v);
            }
            SsrEnable => {
                c.ssr.enable()?;
                c.state.ssr_enabled = true;
            }
            SsrDisable => {
                c.ssr.disable();
                c.state.ssr_enabled = false;
            }
            DmSrc => c.dma.src = c.state.x(ins.rs1),
            DmDst => c.dma.dst = c.state.x(ins.rs1),
            DmStr => {
                c.dma.src_stride = c.state.x(ins.rs1);
                c.dma.dst_stride = c.state.x(ins.rs2);
            }
            DmRep => c.dma.reps = c.state.x(ins.rs1),
            DmCopy | DmCopy2d => {
                let len = c.state.x(ins.rs1);
                let r = c.dma;
                let desc = if ins.op == DmCopy {
                    DmaDescriptor::copy(r.src, r.dst, len)
                } else {
                    DmaDescriptor::copy_2d(r.src, r.dst, len, r.src_stride, r.dst_stride, r.reps)
                };
                if self.dma.is_full() {
                    return Ok(IntEvent::Stall { pc, cause: StallCause::QueueFull });
                }
                let id = self.dma.submit(desc, t, &self.mem)?;
                self.cores[i].state.set_x(ins.rd, id);
            }
            DmStat => {
                let v = self.dma.outstanding() as u32;
                c.state.set_x(ins.rd, v);
            }
            Hartid => c.state.set_x(ins.rd, c.id as u32),
            Halt => c.running = false,
            _ => {
                let mut port = FixedLatency {
                    mem: &mut self.mem,
                    tcdm_latency: tcdm_lat,
                    l2_latency: l2_lat,
                };
                let out = execute(&mut c.state, &ins, &mut port)?;
                next_pc = out.next_pc;
                latency = out.mem_latency;
            }
        }
        let c = &mut self.cores[i];
        if !ins.op.is_offloaded() {
            c.stats.int_retired += 1;
        }
        c.stats.fetched += 1;
        c.state.pc = next_pc;
        c.busy_until = t + 1 + latency;
        Ok(IntEvent::Retire { pc, ins })
    }
}

/// Loads `program` (and an optional image on top) into a fresh cluster and
/// runs it.
pub fn run_cluster(
    cfg: &ClusterConfig,
    program: &AsmProgram,
    image: Option<&MemoryImage>,
    opts: RunOptions,
) -> Result<RunOutput, SimError> {
    let mut cl = Cluster::new(cfg.clone(), program.clone())?;
    if let Some(img) = image {
        cl.load_image(img)?;
    }
    cl.run(opts)
}
