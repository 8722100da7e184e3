//! Cluster DMA engine moving blocks between L2 and the scratchpad over a
//! wide bus, one beat per cycle.

use std::collections::VecDeque;

use thiserror::Error;

use crate::memory::{Memory, Region};
use crate::tcdm::BankArbiter;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DmaError {
    #[error("source and destination of a transfer overlap")]
    OverlappingTransfer,
    #[error("invalid DMA descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("DMA queue is full")]
    QueueFull,
}

/// A 1-D or 2-D copy. A 1-D copy is a single repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DmaDescriptor {
    pub src: u32,
    pub dst: u32,
    /// Bytes per row.
    pub len: u32,
    pub src_stride: u32,
    pub dst_stride: u32,
    pub reps: u32,
}

impl DmaDescriptor {
    pub fn copy(src: u32, dst: u32, len: u32) -> Self {
        DmaDescriptor {
            src,
            dst,
            len,
            src_stride: len,
            dst_stride: len,
            reps: 1,
        }
    }

    pub fn copy_2d(src: u32, dst: u32, len: u32, src_stride: u32, dst_stride: u32, reps: u32) -> Self {
        DmaDescriptor {
            src,
            dst,
            len,
            src_stride,
            dst_stride,
            reps,
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.len as u64 * self.reps as u64
    }

    fn span(base: u32, stride: u32, len: u32, reps: u32) -> (u64, u64) {
        let last = base as u64 + stride as u64 * (reps as u64 - 1);
        (base as u64, last + len as u64)
    }

    /// Checks the rows against the memory map and the overlap rule. Returns
    /// whether either side lives in L2.
    pub fn validate(&self, mem: &Memory) -> Result<bool, DmaError> {
        if self.total_bytes() == 0 {
            return Ok(false);
        }
        let invalid = |m: String| DmaError::InvalidDescriptor(m);
        if self.reps > 1 && (self.src_stride < self.len || self.dst_stride < self.len) {
            return Err(invalid("row stride smaller than row length".into()));
        }
        let mut l2 = false;
        for (name, base, stride) in [("source", self.src, self.src_stride), ("destination", self.dst, self.dst_stride)] {
            let (lo, hi) = Self::span(base, stride, self.len, self.reps);
            if hi > u32::MAX as u64 + 1 {
                return Err(invalid(format!("{name} range wraps the address space")));
            }
            let region = mem
                .region_of(lo as u32, (hi - lo) as u32)
                .ok_or_else(|| invalid(format!("{name} range {lo:#x}..{hi:#x} is unmapped")))?;
            l2 |= region == Region::L2;
        }
        let (s0, s1) = Self::span(self.src, self.src_stride, self.len, self.reps);
        let (d0, d1) = Self::span(self.dst, self.dst_stride, self.len, self.reps);
        if s0 < d1 && d0 < s1 {
            return Err(DmaError::OverlappingTransfer);
        }
        Ok(l2)
    }

    fn apply(&self, mem: &mut Memory) {
        for r in 0..self.reps {
            let data = mem
                .read_bytes(self.src + r * self.src_stride, self.len)
                .expect("validated at submission");
            mem.write_bytes(self.dst + r * self.dst_stride, &data)
                .expect("validated at submission");
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DmaStats {
    pub transfers: u64,
    pub bytes: u64,
    pub busy_cycles: u64,
    /// Busy cycles in which a beat lost at least one bank.
    pub conflict_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Pending {
    id: u32,
    desc: DmaDescriptor,
    start_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Active {
    id: u32,
    desc: DmaDescriptor,
    row: u32,
    offset: u32,
    banks_left: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DmaEngine {
    bus_width: u32,
    l2_latency: u64,
    queue_depth: usize,
    queue: VecDeque<Pending>,
    active: Option<Active>,
    next_id: u32,
    completed: u32,
    pub stats: DmaStats,
}

impl DmaEngine {
    pub fn new(bus_width: u32, l2_latency: u64, queue_depth: usize) -> Self {
        DmaEngine {
            bus_width,
            l2_latency,
            queue_depth: queue_depth.max(1),
            queue: VecDeque::new(),
            active: None,
            next_id: 0,
            completed: 0,
            stats: DmaStats::default(),
        }
    }

    pub fn outstanding(&self) -> usize {
        self.queue.len() + self.active.is_some() as usize
    }

    pub fn is_idle(&self) -> bool {
        self.outstanding() == 0
    }

    pub fn is_full(&self) -> bool {
        self.queue.len() >= self.queue_depth
    }

    /// Number of transfers completed so far; ids are assigned in order.
    pub fn completed(&self) -> u32 {
        self.completed
    }

    /// Queues a transfer issued at cycle `now`. Its data phase starts no
    /// earlier than the next cycle plus the L2 latency when L2 is involved.
    pub fn submit(&mut self, desc: DmaDescriptor, now: u64, mem: &Memory) -> Result<u32, DmaError> {
        let l2 = desc.validate(mem)?;
        if self.is_full() {
            return Err(DmaError::QueueFull);
        }
        let id = self.next_id;
        self.next_id += 1;
        if desc.total_bytes() == 0 && self.is_idle() {
            self.completed += 1;
            self.stats.transfers += 1;
            return Ok(id);
        }
        let start_at = now + 1 + if l2 { self.l2_latency } else { 0 };
        self.queue.push_back(Pending { id, desc, start_at });
        Ok(id)
    }

    fn beat_len(&self, a: &Active) -> u32 {
        (a.desc.len - a.offset).min(self.bus_width)
    }

    /// TCDM banks the current beat needs this cycle. Banks granted in an
    /// earlier cycle for the same beat are not requested again.
    pub fn requests(&mut self, now: u64, arb: &BankArbiter, mem: &Memory) -> Vec<usize> {
        while self.active.is_none() {
            match self.queue.front() {
                Some(p) if p.start_at <= now => {
                    let p = self.queue.pop_front().unwrap();
                    if p.desc.total_bytes() == 0 {
                        self.completed += 1;
                        self.stats.transfers += 1;
                        continue;
                    }
                    self.active = Some(Active {
                        id: p.id,
                        desc: p.desc,
                        row: 0,
                        offset: 0,
                        banks_left: None,
                    });
                }
                _ => return Vec::new(),
            }
        }
        let beat = self.beat_len(self.active.as_ref().unwrap());
        let a = self.active.as_mut().unwrap();
        if a.banks_left.is_none() {
            let mut banks = Vec::new();
            for (base, stride) in [(a.desc.src, a.desc.src_stride), (a.desc.dst, a.desc.dst_stride)] {
                let addr = base + a.row * stride + a.offset;
                if mem.region_of(addr, beat) == Some(Region::Tcdm) {
                    for b in arb.banks_of_range(addr, beat) {
                        if !banks.contains(&b) {
                            banks.push(b);
                        }
                    }
                }
            }
            a.banks_left = Some(banks);
        }
        a.banks_left.clone().unwrap()
    }

    /// Applies this cycle's grants for the banks returned by
    /// [`DmaEngine::requests`]. Returns the id of a transfer that completed.
    pub fn advance(&mut self, granted: &[bool], mem: &mut Memory) -> Option<u32> {
        let beat = self.beat_len(self.active.as_ref()?);
        let a = self.active.as_mut()?;
        self.stats.busy_cycles += 1;
        let left = a.banks_left.take().unwrap_or_default();
        debug_assert_eq!(left.len(), granted.len());
        let still: Vec<usize> = left
            .into_iter()
            .zip(granted)
            .filter(|(_, g)| !**g)
            .map(|(b, _)| b)
            .collect();
        if !still.is_empty() {
            self.stats.conflict_cycles += 1;
            a.banks_left = Some(still);
            return None;
        }
        self.stats.bytes += beat as u64;
        a.offset += beat;
        if a.offset == a.desc.len {
            a.offset = 0;
            a.row += 1;
        }
        if a.row < a.desc.reps {
            return None;
        }
        let done = self.active.take().unwrap();
        done.desc.apply(mem);
        self.completed += 1;
        self.stats.transfers += 1;
        Some(done.id)
    }

    /// Runs every queued transfer without bank contention, starting at
    /// `now`. Returns the cycle after the last completion.
    pub fn run_uncontended(&mut self, mut now: u64, arb: &BankArbiter, mem: &mut Memory) -> u64 {
        while !self.is_idle() {
            let banks = self.requests(now, arb, mem);
            self.advance(&vec![true; banks.len()], mem);
            now += 1;
        }
        now
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{L2_BASE, TCDM_BASE};

    fn setup() -> (Memory, BankArbiter, DmaEngine) {
        let mut mem = Memory::new(128 * 1024, 1 << 20);
        let data: Vec<u8> = (0..8192u32).map(|i| (i * 7 % 251) as u8).collect();
        mem.write_bytes(L2_BASE, &data).unwrap();
        (mem, BankArbiter::new(32, 8, 1), DmaEngine::new(64, 10, 16))
    }

    #[test]
    fn copy_4096_takes_64_busy_cycles() {
        let (mut mem, arb, mut dma) = setup();
        dma.submit(DmaDescriptor::copy(L2_BASE, TCDM_BASE, 4096), 0, &mem).unwrap();
        dma.run_uncontended(0, &arb, &mut mem);
        assert_eq!(dma.stats.busy_cycles, 64);
        assert_eq!(dma.stats.bytes, 4096);
        assert_eq!(
            mem.read_bytes(TCDM_BASE, 4096).unwrap(),
            mem.read_bytes(L2_BASE, 4096).unwrap()
        );
    }

    #[test]
    fn zero_byte_copy_completes_at_once() {
        let (mut mem, arb, mut dma) = setup();
        let before = mem.clone();
        dma.submit(DmaDescriptor::copy(L2_BASE, TCDM_BASE, 0), 0, &mem).unwrap();
        assert!(dma.is_idle());
        assert_eq!(dma.completed(), 1);
        dma.run_uncontended(0, &arb, &mut mem);
        assert_eq!(dma.stats.busy_cycles, 0);
        assert_eq!(mem, before);
    }

    #[test]
    fn two_dimensional_copy() {
        let (mut mem, arb, mut dma) = setup();
        let d = DmaDescriptor::copy_2d(L2_BASE, TCDM_BASE, 384, 384, 384, 12);
        dma.submit(d, 0, &mem).unwrap();
        dma.run_uncontended(0, &arb, &mut mem);
        assert_eq!(dma.stats.busy_cycles, 72);
        for r in 0..12 {
            assert_eq!(
                mem.read_bytes(TCDM_BASE + 384 * r, 384).unwrap(),
                mem.read_bytes(L2_BASE + 384 * r, 384).unwrap()
            );
        }
    }

    #[test]
    fn strided_destination_leaves_gaps_untouched() {
        let (mut mem, arb, mut dma) = setup();
        let d = DmaDescriptor::copy_2d(L2_BASE, TCDM_BASE, 100, 100, 256, 4);
        dma.submit(d, 0, &mem).unwrap();
        dma.run_uncontended(0, &arb, &mut mem);
        assert_eq!(dma.stats.bytes, 400);
        assert_eq!(dma.stats.busy_cycles, 8);
        for r in 0..4 {
            assert_eq!(
                mem.read_bytes(TCDM_BASE + 256 * r, 100).unwrap(),
                mem.read_bytes(L2_BASE + 100 * r, 100).unwrap()
            );
            assert!(mem.read_bytes(TCDM_BASE + 256 * r + 100, 156).unwrap().iter().all(|b| *b == 0));
        }
    }

    #[test]
    fn rejects_bad_descriptors() {
        let (mem, _, mut dma) = setup();
        assert_eq!(
            dma.submit(DmaDescriptor::copy(TCDM_BASE, TCDM_BASE + 8, 64), 0, &mem),
            Err(DmaError::OverlappingTransfer)
        );
        assert!(matches!(
            dma.submit(DmaDescriptor::copy(0x40, TCDM_BASE, 64), 0, &mem),
            Err(DmaError::InvalidDescriptor(_))
        ));
        assert!(matches!(
            dma.submit(DmaDescriptor::copy_2d(L2_BASE, TCDM_BASE, 64, 32, 64, 2), 0, &mem),
            Err(DmaError::InvalidDescriptor(_))
        ));
    }

    #[test]
    fn data_appears_only_at_completion() {
        let (mut mem, arb, mut dma) = setup();
        dma.submit(DmaDescriptor::copy(L2_BASE, TCDM_BASE, 256), 0, &mem).unwrap();
        let mut now = 0;
        loop {
            let banks = dma.requests(now, &arb, &mem);
            let done = dma.advance(&vec![true; banks.len()], &mut mem);
            now += 1;
            if done.is_some() {
                break;
            }
            assert!(mem.read_bytes(TCDM_BASE, 256).unwrap().iter().all(|b| *b == 0));
        }
        // one cycle to issue, ten of latency, four beats
        assert_eq!(now, 1 + 10 + 4);
    }
}
