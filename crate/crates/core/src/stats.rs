//! Run statistics and their `key = value` text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::dma::DmaStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StallCause {
    BankConflict,
    Hazard,
    QueueFull,
    StreamEmpty,
    MemLatency,
    ICacheMiss,
    /// Nothing to do: FPU without work, or a halted core.
    Idle,
}

impl StallCause {
    pub const ALL: [StallCause; 7] = [
        StallCause::BankConflict,
        StallCause::Hazard,
        StallCause::QueueFull,
        StallCause::StreamEmpty,
        StallCause::MemLatency,
        StallCause::ICacheMiss,
        StallCause::Idle,
    ];

    pub fn key(self) -> &'static str {
        match self {
            StallCause::BankConflict => "bank_conflict",
            StallCause::Hazard => "hazard",
            StallCause::QueueFull => "queue_full",
            StallCause::StreamEmpty => "stream_empty",
            StallCause::MemLatency => "mem_latency",
            StallCause::ICacheMiss => "icache_miss",
            StallCause::Idle => "idle",
        }
    }
}

/// Cycle accounting of one pipeline: every cycle is either active or
/// attributed to exactly one stall cause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PipeStats {
    pub active: u64,
    pub stalls: [u64; 7],
}

impl PipeStats {
    pub fn stall(&self, cause: StallCause) -> u64 {
        self.stalls[cause as usize]
    }

    pub fn add_stall(&mut self, cause: StallCause) {
        self.stalls[cause as usize] += 1;
    }

    pub fn total(&self) -> u64 {
        self.active + self.stalls.iter().sum::<u64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CoreStats {
    /// Instructions dispatched by the integer pipeline.
    pub fetched: u64,
    /// Instructions executed by the core itself (not offloaded).
    pub int_retired: u64,
    /// Instructions issued by the FPU, including FREP replays.
    pub fp_executed: u64,
    pub fma_executed: u64,
    pub flops: u64,
    pub int: PipeStats,
    pub fp: PipeStats,
    pub tcdm_requests: u64,
    pub tcdm_conflicts: u64,
}

impl CoreStats {
    pub fn executed(&self) -> u64 {
        self.int_retired + self.fp_executed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClusterStats {
    pub cycles: u64,
    pub active_cores: usize,
    pub cores: Vec<CoreStats>,
    pub dma: DmaStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsParseError {
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
    #[error("line {0}: unknown key `{1}`")]
    UnknownKey(usize, String),
    #[error("line {0}: bad value `{1}`")]
    BadValue(usize, String),
    #[error("missing key `{0}`")]
    Missing(String),
}

impl ClusterStats {
    fn sum(&self, f: impl Fn(&CoreStats) -> u64) -> u64 {
        self.cores.iter().map(f).sum()
    }

    pub fn fetched(&self) -> u64 {
        self.sum(|c| c.fetched)
    }

    pub fn int_retired(&self) -> u64 {
        self.sum(|c| c.int_retired)
    }

    pub fn fp_executed(&self) -> u64 {
        self.sum(|c| c.fp_executed)
    }

    pub fn fma_executed(&self) -> u64 {
        self.sum(|c| c.fma_executed)
    }

    pub fn flops(&self) -> u64 {
        self.sum(|c| c.flops)
    }

    pub fn tcdm_requests(&self) -> u64 {
        self.sum(|c| c.tcdm_requests)
    }

    pub fn tcdm_conflicts(&self) -> u64 {
        self.sum(|c| c.tcdm_conflicts)
    }

    /// FMA-class instructions per core-cycle over the active cores.
    pub fn utilization(&self) -> f64 {
        let denom = self.cycles * self.active_cores.max(1) as u64;
        if denom == 0 {
            0.0
        } else {
            self.fma_executed() as f64 / denom as f64
        }
    }

    pub fn flops_per_cycle(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.flops() as f64 / self.cycles as f64
        }
    }

    /// Stable `key = value` rendering. Aggregate keys are informational and
    /// ignored by [`ClusterStats::from_kv`].
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("cycles", self.cycles.to_string());
        kv("active_cores", self.active_cores.to_string());
        kv("utilization", format!("{:.6}", self.utilization()));
        kv("flops_per_cycle", format!("{:.6}", self.flops_per_cycle()));
        kv("total.fetched", self.fetched().to_string());
        kv("total.int_retired", self.int_retired().to_string());
        kv("total.fp_executed", self.fp_executed().to_string());
        kv("total.fma_executed", self.fma_executed().to_string());
        kv("total.flops", self.flops().to_string());
        kv("dma.transfers", self.dma.transfers.to_string());
        kv("dma.bytes", self.dma.bytes.to_string());
        kv("dma.busy_cycles", self.dma.busy_cycles.to_string());
        kv("dma.conflict_cycles", self.dma.conflict_cycles.to_string());
        for (i, c) in self.cores.iter().enumerate() {
            for (k, v) in core_fields(c) {
                kv(&format!("core{i}.{k}"), v.to_string());
            }
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self, StatsParseError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(StatsParseError::Syntax(i + 1))?;
            map.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        fn take(map: &mut BTreeMap<String, (usize, String)>, k: &str) -> Result<u64, StatsParseError> {
            let (line, v) = map.remove(k).ok_or_else(|| StatsParseError::Missing(k.to_string()))?;
            v.parse().map_err(|_| StatsParseError::BadValue(line, v))
        }
        let mut st = ClusterStats {
            cycles: take(&mut map, "cycles")?,
            active_cores: take(&mut map, "active_cores")? as usize,
            cores: Vec::new(),
            dma: DmaStats {
                transfers: take(&mut map, "dma.transfers")?,
                bytes: take(&mut map, "dma.bytes")?,
                busy_cycles: take(&mut map, "dma.busy_cycles")?,
                conflict_cycles: take(&mut map, "dma.conflict_cycles")?,
            },
        };
        let mut i = 0;
        while map.contains_key(&format!("core{i}.fetched")) {
            let mut c = CoreStats::default();
            let keys: Vec<String> = core_fields(&c).into_iter().map(|(k, _)| k).collect();
            let mut vals = Vec::new();
            for k in &keys {
                vals.push(take(&mut map, &format!("core{i}.{k}"))?);
            }
            set_core_fields(&mut c, &vals);
            st.cores.push(c);
            i += 1;
        }
        for (k, (line, _)) in map {
            if !(k.starts_with("total.") || k == "utilization" || k == "flops_per_cycle") {
                return Err(StatsParseError::UnknownKey(line, k));
            }
        }
        Ok(st)
    }
}

fn core_fields(c: &CoreStats) -> Vec<(String, u64)> {
    let mut v = vec![
        ("fetched".to_string(), c.fetched),
        ("int_retired".to_string(), c.int_retired),
        ("fp_executed".to_string(), c.fp_executed),
        ("fma_executed".to_string(), c.fma_executed),
        ("flops".to_string(), c.flops),
        ("tcdm_requests".to_string(), c.tcdm_requests),
        ("tcdm_conflicts".to_string(), c.tcdm_conflicts),
    ];
    for (pipe, p) in [("int", &c.int), ("fp", &c.fp)] {
        v.push((format!("{pipe}.active"), p.active));
        for cause in StallCause::ALL {
            v.push((format!("{pipe}.stall.{}", cause.key()), p.stall(cause)));
        }
    }
    v
}

fn set_core_fields(c: &mut CoreStats, vals: &[u64]) {
    let mut it = vals.iter().copied();
    let mut next = || it.next().unwrap();
    c.fetched = next();
    c.int_retired = next();
    c.fp_executed = next();
    c.fma_executed = next();
    c.flops = next();
    c.tcdm_requests = next();
    c.tcdm_conflicts = next();
    for p in [&mut c.int, &mut c.fp] {
        p.active = next();
        for s in p.stalls.iter_mut() {
            *s = next();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pipe() -> impl Strategy<Value = PipeStats> {
        (0u64..1000, prop::array::uniform7(0u64..1000)).prop_map(|(active, stalls)| PipeStats { active, stalls })
    }

    fn core() -> impl Strategy<Value = CoreStats> {
        (prop::array::uniform7(0u64..100_000), pipe(), pipe()).prop_map(|(a, int, fp)| CoreStats {
            fetched: a[0],
            int_retired: a[1],
            fp_executed: a[2],
            fma_executed: a[3],
            flops: a[4],
            tcdm_requests: a[5],
            tcdm_conflicts: a[6],
            int,
            fp,
        })
    }

    proptest! {
        #[test]
        fn kv_round_trip(cycles in 0u64..1_000_000, cores in prop::collection::vec(core(), 0..9),
                         dma in prop::array::uniform4(0u64..10_000)) {
            let st = ClusterStats {
                cycles,
                active_cores: cores.len(),
                cores,
                dma: DmaStats { transfers: dma[0], bytes: dma[1], busy_cycles: dma[2], conflict_cycles: dma[3] },
            };
            prop_assert_eq!(ClusterStats::from_kv(&st.to_kv()).unwrap(), st);
        }
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut text = ClusterStats::default().to_kv();
        text.push_str("bogus = 1\n");
        assert!(matches!(ClusterStats::from_kv(&text), Err(StatsParseError::UnknownKey(_, _))));
    }
}
