//! Stream semantic registers: affine address generators that turn reads and
//! writes of `ft0`..`ft2` into memory traffic.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::SsrField;
use crate::memory::{MemError, MemoryPort};

pub const NUM_SLOTS: usize = 3;
pub const MAX_DIMS: usize = 4;
pub const DEFAULT_FIFO_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SsrError {
    #[error("stream configuration changed while streams are enabled")]
    ReconfigWhileActive,
    #[error("invalid stream configuration: {0}")]
    InvalidConfig(String),
    #[error("stream {0} is exhausted")]
    StreamExhausted(usize),
    #[error("stream {0} used against its configured direction")]
    DirectionMismatch(usize),
    #[error("streams are not enabled")]
    NotEnabled,
    #[error(transparent)]
    Mem(#[from] MemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsrDim {
    pub stride: i32,
    pub bound: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsrConfig {
    pub base: u32,
    pub dims: Vec<SsrDim>,
    pub direction: Direction,
    pub element_width: u32,
}

impl SsrConfig {
    pub fn read_1d(base: u32, stride: i32, bound: u32) -> Self {
        SsrConfig {
            base,
            dims: vec![SsrDim { stride, bound }],
            direction: Direction::Read,
            element_width: 8,
        }
    }

    pub fn validate(&self) -> Result<(), SsrError> {
        let bad = |m: String| Err(SsrError::InvalidConfig(m));
        if self.dims.is_empty() || self.dims.len() > MAX_DIMS {
            return bad(format!("{} dimensions, expected 1..={MAX_DIMS}", self.dims.len()));
        }
        if let Some(i) = self.dims.iter().position(|d| d.bound == 0) {
            return bad(format!("bound of dimension {i} is zero"));
        }
        if self.element_width != 4 && self.element_width != 8 {
            return bad(format!("element width {} (expected 4 or 8)", self.element_width));
        }
        Ok(())
    }

    /// Number of elements the stream produces.
    pub fn total_len(&self) -> u64 {
        self.dims.iter().map(|d| d.bound as u64).product()
    }

    pub fn addresses(&self) -> AddressGen {
        AddressGen::new(self)
    }
}

/// Odometer walk over the configured dimensions, innermost first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressGen {
    base: u32,
    dims: Vec<SsrDim>,
    index: [u32; MAX_DIMS],
    issued: u64,
    total: u64,
}

impl AddressGen {
    fn new(cfg: &SsrConfig) -> Self {
        AddressGen {
            base: cfg.base,
            dims: cfg.dims.clone(),
            index: [0; MAX_DIMS],
            issued: 0,
            total: cfg.total_len(),
        }
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn remaining(&self) -> u64 {
        self.total - self.issued
    }

    pub fn peek(&self) -> Option<u32> {
        (self.issued < self.total).then(|| {
            self.dims
                .iter()
                .zip(self.index)
                .fold(self.base, |a, (d, i)| a.wrapping_add((d.stride as u32).wrapping_mul(i)))
        })
    }
}

impl Iterator for AddressGen {
    type Item = u32;

    fn next(&mut self) -> Option<u32> {
        let addr = self.peek()?;
        self.issued += 1;
        for (i, d) in self.dims.iter().enumerate() {
            self.index[i] += 1;
            if self.index[i] < d.bound {
                break;
            }
            self.index[i] = 0;
        }
        Some(addr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    value: u64,
    ready: u64,
}

/// Raw field values as written by `ssr_cfg_write`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Staged {
    base: u32,
    strides: [i32; MAX_DIMS],
    bounds: [u32; MAX_DIMS],
    dir: u32,
    width: u32,
    dims_used: usize,
}

impl Default for Staged {
    fn default() -> Self {
        Staged {
            base: 0,
            strides: [0; MAX_DIMS],
            bounds: [1; MAX_DIMS],
            dir: 0,
            width: 8,
            dims_used: 1,
        }
    }
}

impl Staged {
    fn to_config(&self) -> SsrConfig {
        SsrConfig {
            base: self.base,
            dims: (0..self.dims_used)
                .map(|d| SsrDim {
                    stride: self.strides[d],
                    bound: self.bounds[d],
                })
                .collect(),
            direction: if self.dir == 0 {
                Direction::Read
            } else {
                Direction::Write
            },
            element_width: self.width,
        }
    }

    fn from_config(cfg: &SsrConfig) -> Self {
        let mut s = Staged {
            base: cfg.base,
            dir: (cfg.direction == Direction::Write) as u32,
            width: cfg.element_width,
            dims_used: cfg.dims.len(),
            ..Staged::default()
        };
        for (i, d) in cfg.dims.iter().enumerate() {
            s.strides[i] = d.stride;
            s.bounds[i] = d.bound;
        }
        s
    }
}

/// One stream slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SsrState {
    staged: Option<Staged>,
    config: Option<SsrConfig>,
    gen: Option<AddressGen>,
    fifo: VecDeque<Entry>,
    /// Elements handed to or accepted from the FPU.
    consumed: u64,
    active: bool,
}

impl SsrState {
    fn new() -> Self {
        SsrState {
            staged: None,
            config: None,
            gen: None,
            fifo: VecDeque::new(),
            consumed: 0,
            active: false,
        }
    }

    pub fn config(&self) -> Option<&SsrConfig> {
        self.config.as_ref()
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn issued(&self) -> u64 {
        self.consumed
    }

    fn total(&self) -> u64 {
        self.config.as_ref().map_or(0, SsrConfig::total_len)
    }

    fn width(&self) -> u32 {
        self.config.as_ref().map_or(8, |c| c.element_width)
    }

    fn direction(&self) -> Option<Direction> {
        self.config.as_ref().map(|c| c.direction)
    }
}

/// The three stream slots of one core plus the enable flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SsrEngine {
    slots: [SsrState; NUM_SLOTS],
    enabled: bool,
    fifo_depth: usize,
}

impl Default for SsrEngine {
    fn default() -> Self {
        Self::new(DEFAULT_FIFO_DEPTH)
    }
}

impl SsrEngine {
    pub fn new(fifo_depth: usize) -> Self {
        SsrEngine {
            slots: [SsrState::new(), SsrState::new(), SsrState::new()],
            enabled: false,
            fifo_depth: fifo_depth.max(1),
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn slot(&self, slot: usize) -> &SsrState {
        &self.slots[slot]
    }

    fn check_slot(slot: usize) -> Result<(), SsrError> {
        if slot >= NUM_SLOTS {
            return Err(SsrError::InvalidConfig(format!("no stream slot {slot}")));
        }
        Ok(())
    }

    /// Installs a complete configuration. Only the last slot may write.
    pub fn configure(&mut self, slot: usize, cfg: SsrConfig) -> Result<(), SsrError> {
        if self.enabled {
            return Err(SsrError::ReconfigWhileActive);
        }
        Self::check_slot(slot)?;
        cfg.validate()?;
        if cfg.direction == Direction::Write && slot != NUM_SLOTS - 1 {
            return Err(SsrError::InvalidConfig(format!(
                "stream {slot} is read-only"
            )));
        }
        let s = &mut self.slots[slot];
        s.staged = Some(Staged::from_config(&cfg));
        s.gen = Some(cfg.addresses());
        s.config = Some(cfg);
        s.fifo.clear();
        s.consumed = 0;
        s.active = false;
        Ok(())
    }

    /// Field-wise configuration as performed by `ssr_cfg_write`.
    pub fn write_field(&mut self, slot: usize, field: SsrField, value: u32) -> Result<(), SsrError> {
        if self.enabled {
            return Err(SsrError::ReconfigWhileActive);
        }
        Self::check_slot(slot)?;
        let mut st = self.slots[slot].staged.clone().unwrap_or_default();
        match field {
            SsrField::Base => st.base = value,
            SsrField::Stride(d) => {
                st.strides[d as usize] = value as i32;
                st.dims_used = st.dims_used.max(d as usize + 1);
            }
            SsrField::Bound(d) => {
                st.bounds[d as usize] = value;
                st.dims_used = st.dims_used.max(d as usize + 1);
            }
            SsrField::Dir => st.dir = value,
            SsrField::Width => st.width = value,
        }
        let cfg = st.to_config();
        if value == 0 && matches!(field, SsrField::Bound(_)) {
            cfg.validate()?;
        }
        if cfg.direction == Direction::Write && slot != NUM_SLOTS - 1 {
            return Err(SsrError::InvalidConfig(format!("stream {slot} is read-only")));
        }
        let s = &mut self.slots[slot];
        s.staged = Some(st);
        s.config = Some(cfg);
        Ok(())
    }

    /// Value of a configuration field as seen by `ssr_cfg_read`.
    pub fn read_field(&self, slot: usize, field: SsrField) -> Result<u32, SsrError> {
        Self::check_slot(slot)?;
        let st = self.slots[slot].staged.clone().unwrap_or_default();
        Ok(match field {
            SsrField::Base => st.base,
            SsrField::Stride(d) => st.strides[d as usize] as u32,
            SsrField::Bound(d) => st.bounds[d as usize],
            SsrField::Dir => st.dir,
            SsrField::Width => st.width,
        })
    }

    /// Turns on stream semantics for every configured slot, restarting
    /// their address generators.
    pub fn enable(&mut self) -> Result<(), SsrError> {
        for s in &mut self.slots {
            if let Some(cfg) = &s.config {
                cfg.validate()?;
                s.gen = Some(cfg.addresses());
                s.fifo.clear();
                s.consumed = 0;
                s.active = true;
            }
        }
        self.enabled = true;
        Ok(())
    }

    pub fn disable(&mut self) {
        self.enabled = false;
        for s in &mut self.slots {
            s.active = false;
            s.fifo.clear();
        }
    }

    /// The active stream mapped onto FP register `reg`, if any.
    pub fn stream_of(&self, reg: u8) -> Option<(usize, Direction)> {
        let slot = reg as usize;
        if !self.enabled || slot >= NUM_SLOTS || !self.slots[slot].active {
            return None;
        }
        self.slots[slot].direction().map(|d| (slot, d))
    }

    fn active_slot(&mut self, slot: usize, dir: Direction) -> Result<&mut SsrState, SsrError> {
        if !self.enabled {
            return Err(SsrError::NotEnabled);
        }
        Self::check_slot(slot)?;
        let s = &mut self.slots[slot];
        if !s.active {
            return Err(SsrError::NotEnabled);
        }
        if s.direction() != Some(dir) {
            return Err(SsrError::DirectionMismatch(slot));
        }
        Ok(s)
    }

    /// Reads the next element directly, bypassing the timing model. Returns
    /// the value and the cycles spent waiting for memory (zero when the
    /// element was already buffered).
    pub fn read(&mut self, slot: usize, mem: &mut dyn MemoryPort) -> Result<(u64, u64), SsrError> {
        let s = self.active_slot(slot, Direction::Read)?;
        if s.consumed == s.total() {
            return Err(SsrError::StreamExhausted(slot));
        }
        s.consumed += 1;
        if let Some(e) = s.fifo.pop_front() {
            return Ok((e.value, 0));
        }
        let width = s.width();
        let addr = s.gen.as_mut().and_then(Iterator::next).expect("generator ahead of consumer");
        Ok(mem.load(addr, width)?)
    }

    /// Stores the next element directly.
    pub fn write(&mut self, slot: usize, value: u64, mem: &mut dyn MemoryPort) -> Result<u64, SsrError> {
        let s = self.active_slot(slot, Direction::Write)?;
        if s.consumed == s.total() {
            return Err(SsrError::StreamExhausted(slot));
        }
        let width = s.width();
        let addr = s.gen.as_mut().and_then(Iterator::next).expect("generator ahead of consumer");
        mem.store(addr, width, value & width_mask(width))?;
        s.consumed += 1;
        Ok(0)
    }

    // Cycle-level interface used by the cluster.

    /// Address a read stream wants to prefetch this cycle.
    pub fn prefetch_request(&self, slot: usize) -> Option<(u32, u32)> {
        let s = &self.slots[slot];
        if !self.enabled || !s.active || s.direction() != Some(Direction::Read) {
            return None;
        }
        if s.fifo.len() >= self.fifo_depth {
            return None;
        }
        s.gen.as_ref()?.peek().map(|a| (a, s.width()))
    }

    /// Completes a granted prefetch; the data becomes poppable at `ready`.
    pub fn prefetch_grant(&mut self, slot: usize, value: u64, ready: u64) {
        let s = &mut self.slots[slot];
        s.gen.as_mut().and_then(Iterator::next);
        s.fifo.push_back(Entry { value, ready });
    }

    /// Whether `n` elements can be popped from a read stream at `now`.
    /// Fails when the stream cannot ever supply them.
    pub fn can_pop(&self, slot: usize, n: usize, now: u64) -> Result<bool, SsrError> {
        let s = &self.slots[slot];
        if s.consumed + n as u64 > s.total() {
            return Err(SsrError::StreamExhausted(slot));
        }
        Ok(s.fifo.iter().take(n).filter(|e| e.ready <= now).count() == n)
    }

    pub fn pop(&mut self, slot: usize) -> u64 {
        let s = &mut self.slots[slot];
        s.consumed += 1;
        s.fifo.pop_front().expect("pop checked by can_pop").value
    }

    /// Whether the write stream accepts another element.
    pub fn can_push(&self, slot: usize) -> Result<bool, SsrError> {
        let s = &self.slots[slot];
        if s.consumed >= s.total() {
            return Err(SsrError::StreamExhausted(slot));
        }
        Ok(s.fifo.len() < self.fifo_depth)
    }

    /// Queues a result for the write stream; it is stored once `ready`.
    pub fn push(&mut self, slot: usize, value: u64, ready: u64) {
        let s = &mut self.slots[slot];
        s.consumed += 1;
        s.fifo.push_back(Entry { value, ready });
    }

    /// Store the write stream wants to perform this cycle.
    pub fn store_request(&self, slot: usize, now: u64) -> Option<(u32, u32, u64)> {
        let s = &self.slots[slot];
        if !s.active || s.direction() != Some(Direction::Write) {
            return None;
        }
        let head = s.fifo.front().filter(|e| e.ready <= now)?;
        let w = s.width();
        s.gen.as_ref()?.peek().map(|a| (a, w, head.value & width_mask(w)))
    }

    pub fn store_grant(&mut self, slot: usize) {
        let s = &mut self.slots[slot];
        s.fifo.pop_front();
        s.gen.as_mut().and_then(Iterator::next);
    }

    /// True when no write stream has buffered results left to store.
    pub fn writes_drained(&self) -> bool {
        self.slots
            .iter()
            .all(|s| s.direction() != Some(Direction::Write) || !s.active || s.fifo.is_empty())
    }
}

fn width_mask(width: u32) -> u64 {
    if width == 8 {
        u64::MAX
    } else {
        (1u64 << (8 * width)) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{FixedLatency, Memory, TCDM_BASE};
    use proptest::prelude::*;

    fn enumerate(base: u32, dims: &[SsrDim]) -> Vec<u32> {
        // brute-force nested loops, outermost dimension first
        let mut out = vec![base];
        for d in dims.iter().rev() {
            let mut next = Vec::new();
            for a in &out {
                for i in 0..d.bound {
                    next.push(a.wrapping_add((d.stride as u32).wrapping_mul(i)));
                }
            }
            out = next;
        }
        out
    }

    #[test]
    fn one_dimensional_walk() {
        let cfg = SsrConfig::read_1d(0x1000, 8, 4);
        let got: Vec<_> = cfg.addresses().collect();
        assert_eq!(got, [0x1000, 0x1008, 0x1010, 0x1018]);
    }

    #[test]
    fn two_dimensional_walks() {
        let cfg = SsrConfig {
            base: 0,
            dims: vec![SsrDim { stride: 8, bound: 2 }, SsrDim { stride: 16, bound: 2 }],
            direction: Direction::Read,
            element_width: 8,
        };
        assert_eq!(cfg.addresses().collect::<Vec<_>>(), [0x0, 0x8, 0x10, 0x18]);

        let dims = vec![SsrDim { stride: 8, bound: 48 }, SsrDim { stride: 384, bound: 12 }];
        let cfg = SsrConfig {
            base: 0x2000,
            dims: dims.clone(),
            direction: Direction::Read,
            element_width: 8,
        };
        let got: Vec<_> = cfg.addresses().collect();
        assert_eq!(got.len(), 576);
        assert_eq!(got, enumerate(0x2000, &dims));
        assert_eq!(got[48], 0x2000 + 384);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut e = SsrEngine::default();
        assert!(matches!(
            e.configure(0, SsrConfig::read_1d(0x1000, 8, 0)),
            Err(SsrError::InvalidConfig(_))
        ));
        let mut w = SsrConfig::read_1d(0x1000, 8, 2);
        w.direction = Direction::Write;
        assert!(matches!(e.configure(0, w.clone()), Err(SsrError::InvalidConfig(_))));
        e.configure(2, w).unwrap();
        e.enable().unwrap();
        assert_eq!(
            e.configure(1, SsrConfig::read_1d(0x1000, 8, 2)),
            Err(SsrError::ReconfigWhileActive)
        );
    }

    #[test]
    fn reads_in_order_then_exhausts() {
        let mut mem = Memory::new(1024, 0);
        mem.write_f64s(TCDM_BASE, &[1.0, 2.0, 3.0]).unwrap();
        let mut port = FixedLatency { mem: &mut mem, tcdm_latency: 1, l2_latency: 1 };
        let mut e = SsrEngine::default();
        e.configure(0, SsrConfig::read_1d(TCDM_BASE, 8, 3)).unwrap();
        e.enable().unwrap();
        let vals: Vec<f64> = (0..3)
            .map(|_| f64::from_bits(e.read(0, &mut port).unwrap().0))
            .collect();
        assert_eq!(vals, [1.0, 2.0, 3.0]);
        assert_eq!(e.read(0, &mut port), Err(SsrError::StreamExhausted(0)));
    }

    #[test]
    fn write_stream_stores_and_rejects_reads() {
        let mut mem = Memory::new(1024, 0);
        let mut e = SsrEngine::default();
        e.configure(0, SsrConfig::read_1d(TCDM_BASE + 64, 8, 2)).unwrap();
        let mut w = SsrConfig::read_1d(TCDM_BASE, 8, 2);
        w.direction = Direction::Write;
        e.configure(2, w).unwrap();
        e.enable().unwrap();
        let mut port = FixedLatency { mem: &mut mem, tcdm_latency: 1, l2_latency: 1 };
        e.write(2, 5f64.to_bits(), &mut port).unwrap();
        e.write(2, 7f64.to_bits(), &mut port).unwrap();
        assert_eq!(e.write(0, 0, &mut port), Err(SsrError::DirectionMismatch(0)));
        assert_eq!(e.read(2, &mut port), Err(SsrError::DirectionMismatch(2)));
        assert_eq!(e.write(2, 0, &mut port), Err(SsrError::StreamExhausted(2)));
        assert_eq!(mem.read_f64s(TCDM_BASE, 2).unwrap(), [5.0, 7.0]);
    }

    #[test]
    fn axpy_with_one_read_and_one_write_stream() {
        let n = 16;
        let a = 2.5f64;
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 3.0).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let (xa, ya) = (TCDM_BASE, TCDM_BASE + 8 * n as u32);
        let mut mem = Memory::new(4096, 0);
        mem.write_f64s(xa, &x).unwrap();
        mem.write_f64s(ya, &y).unwrap();
        let mut e = SsrEngine::default();
        e.configure(0, SsrConfig::read_1d(xa, 8, n as u32)).unwrap();
        e.configure(1, SsrConfig::read_1d(ya, 8, n as u32)).unwrap();
        let mut w = SsrConfig::read_1d(ya, 8, n as u32);
        w.direction = Direction::Write;
        e.configure(2, w).unwrap();
        e.enable().unwrap();
        let mut port = FixedLatency { mem: &mut mem, tcdm_latency: 1, l2_latency: 1 };
        for _ in 0..n {
            let xi = f64::from_bits(e.read(0, &mut port).unwrap().0);
            let yi = f64::from_bits(e.read(1, &mut port).unwrap().0);
            e.write(2, a.mul_add(xi, yi).to_bits(), &mut port).unwrap();
        }
        let got = mem.read_f64s(ya, n).unwrap();
        for i in 0..n {
            assert_eq!(got[i].to_bits(), a.mul_add(x[i], y[i]).to_bits());
        }
    }

    #[test]
    fn field_writes_build_configs() {
        let mut e = SsrEngine::default();
        e.write_field(1, SsrField::Base, 0x2000).unwrap();
        e.write_field(1, SsrField::Stride(0), 8).unwrap();
        e.write_field(1, SsrField::Bound(0), 48).unwrap();
        e.write_field(1, SsrField::Stride(1), 384).unwrap();
        e.write_field(1, SsrField::Bound(1), 12).unwrap();
        let cfg = e.slot(1).config().unwrap();
        assert_eq!(cfg.dims.len(), 2);
        assert_eq!(cfg.total_len(), 576);
        assert_eq!(e.read_field(1, SsrField::Stride(1)).unwrap(), 384);
        assert!(matches!(
            e.write_field(0, SsrField::Bound(0), 0),
            Err(SsrError::InvalidConfig(_))
        ));
        assert!(matches!(
            e.write_field(0, SsrField::Dir, 1),
            Err(SsrError::InvalidConfig(_))
        ));
    }

    #[test]
    fn timed_interface_respects_fifo_depth() {
        let mut e = SsrEngine::new(2);
        e.configure(0, SsrConfig::read_1d(TCDM_BASE, 8, 3)).unwrap();
        e.enable().unwrap();
        assert_eq!(e.prefetch_request(0), Some((TCDM_BASE, 8)));
        e.prefetch_grant(0, 1, 5);
        e.prefetch_grant(0, 2, 6);
        assert_eq!(e.prefetch_request(0), None);
        assert_eq!(e.can_pop(0, 1, 4), Ok(false));
        assert_eq!(e.can_pop(0, 1, 5), Ok(true));
        assert_eq!(e.can_pop(0, 2, 5), Ok(false));
        assert_eq!(e.pop(0), 1);
        assert_eq!(e.prefetch_request(0), Some((TCDM_BASE + 16, 8)));
        assert!(e.can_pop(0, 3, 9).is_err());
    }

    fn dims_strategy() -> impl Strategy<Value = Vec<SsrDim>> {
        prop::collection::vec(
            (-64i32..64, 1u32..=8).prop_map(|(stride, bound)| SsrDim { stride, bound }),
            1..=MAX_DIMS,
        )
    }

    proptest! {
        #[test]
        fn address_sequence_matches_nested_loops(base in 0u32..0x10000, dims in dims_strategy()) {
            let cfg = SsrConfig { base, dims: dims.clone(), direction: Direction::Read, element_width: 8 };
            let got: Vec<_> = cfg.addresses().collect();
            prop_assert_eq!(got.len() as u64, cfg.total_len());
            prop_assert_eq!(got, enumerate(base, &dims));
        }
    }
}
