//! Analytic model of the full machine: the bandwidth-thinning tree, the
//! roofline, performance scaling and DVFS operating points.

use std::fmt::{self, Write as _};

use serde::Deserialize;
use thiserror::Error;

use crate::cluster::ClusterConfig;
use crate::stats::ClusterStats;

/// Detachment scenarios used in reports.
pub const DETACHMENT_LOW_INTENSITY: f64 = 0.05;
pub const DETACHMENT_HIGH_INTENSITY: f64 = 0.14;
pub const DETACHMENT_NEAR_RIDGE: f64 = 0.34;

/// Core count of the operating-point measurements.
pub const REFERENCE_CORES: usize = 24;
pub const FULL_SYSTEM_CORES: usize = 4096;

const BUNDLED_CONFIG: &str = include_str!("../../../configs/manticore.toml");
const BUNDLED_WORKLOADS: &str = include_str!("../../../configs/workloads.toml");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("{location}: {msg}")]
    Config { location: String, msg: String },
    #[error("operating point `{0}` has no energy data")]
    MissingEnergyData(String),
}

fn config_err(location: impl Into<String>, msg: impl Into<String>) -> SystemError {
    SystemError::Config { location: location.into(), msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Level {
    pub name: String,
    /// Children per group at this level.
    pub fanout: usize,
    /// Bandwidth of the group's single uplink, bytes/s.
    pub uplink: f64,
    /// Aggregate bandwidth inside the group; informational only.
    #[serde(default)]
    pub internal_bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyTree {
    pub cores_per_cluster: usize,
    /// Bandwidth of each cluster's own link into its first-level group.
    pub cluster_uplink: f64,
    /// Top-level groups sharing the root memory.
    pub chiplets: usize,
    pub hbm_channels: Vec<f64>,
    #[serde(rename = "level")]
    pub levels: Vec<Level>,
}

impl HierarchyTree {
    pub fn root_bandwidth(&self) -> f64 {
        self.hbm_channels.iter().sum()
    }

    /// Clusters below one group of level `idx`.
    pub fn leaves_under(&self, idx: usize) -> usize {
        self.levels[..=idx].iter().map(|l| l.fanout).product()
    }

    pub fn total_clusters(&self) -> usize {
        self.levels.iter().map(|l| l.fanout).product::<usize>() * self.chiplets
    }

    pub fn total_cores(&self) -> usize {
        self.total_clusters() * self.cores_per_cluster
    }

    /// Per-cluster bandwidth from main memory with `active` clusters placed
    /// contiguously and streaming uniformly: the tightest share along the
    /// path, including the root.
    pub fn sustainable_cluster_bandwidth(&self, active: usize) -> f64 {
        let active = active.clamp(1, self.total_clusters().max(1));
        let mut bw = self.cluster_uplink;
        for (i, l) in self.levels.iter().enumerate() {
            let sharing = active.min(self.leaves_under(i));
            bw = bw.min(l.uplink / sharing as f64);
        }
        bw.min(self.root_bandwidth() / active as f64)
    }

    fn validate(&self) -> Result<(), SystemError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if self.cores_per_cluster == 0 || self.chiplets == 0 || self.levels.is_empty() {
            return Err(config_err("tree", "cores_per_cluster, chiplets and levels must be non-empty"));
        }
        if self.hbm_channels.is_empty() || !self.hbm_channels.iter().all(|&b| pos(b)) || !pos(self.cluster_uplink) {
            return Err(config_err("tree", "bandwidths must be positive"));
        }
        for l in &self.levels {
            if l.fanout == 0 || !pos(l.uplink) {
                return Err(config_err(format!("tree.level `{}`", l.name), "fanout and uplink must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Cluster,
    Chiplet,
    System,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::Cluster => "cluster",
            Scope::Chiplet => "chiplet",
            Scope::System => "system",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RooflineConfig {
    pub scope: Scope,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RooflineParams {
    pub peak_flops: f64,
    pub mem_bandwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    ComputeBound,
    MemoryBound,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bound::ComputeBound => "COMPUTE_BOUND",
            Bound::MemoryBound => "MEMORY_BOUND",
        })
    }
}

impl RooflineParams {
    pub fn ridge_intensity(&self) -> f64 {
        self.peak_flops / self.mem_bandwidth
    }

    /// `(1 - detachment) * min(peak, bandwidth * intensity)`; `detachment`
    /// must lie in `[0, 1)`.
    pub fn attainable(&self, intensity: f64, detachment: f64) -> f64 {
        debug_assert!((0.0..1.0).contains(&detachment));
        (1.0 - detachment) * self.peak_flops.min(self.mem_bandwidth * intensity)
    }

    /// Intensities at or above the ridge reach the compute ceiling.
    pub fn classify(&self, intensity: f64) -> Bound {
        if intensity >= self.ridge_intensity() {
            Bound::ComputeBound
        } else {
            Bound::MemoryBound
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingPoint {
    pub name: String,
    pub vdd: f64,
    pub freq_hz: f64,
    /// Measured performance of the 24-core prototype, if stated.
    #[serde(default)]
    pub perf_24core: Option<f64>,
    /// flop/s per watt.
    #[serde(default)]
    pub efficiency: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Double,
    /// Packed single precision doubles the per-cycle rate.
    Single,
}

/// `n_cores * 2 * freq` for double precision.
pub fn scale_performance(point: &OperatingPoint, n_cores: usize, precision: Precision) -> f64 {
    let per_cycle = match precision {
        Precision::Double => 2.0,
        Precision::Single => 4.0,
    };
    n_cores as f64 * per_cycle * point.freq_hz
}

/// Power and efficiency of `n_cores` at `point`. The 24-core figure uses
/// the stated measurement when present; larger systems scale linearly.
pub fn power_and_efficiency(point: &OperatingPoint, n_cores: usize) -> Result<(f64, f64), SystemError> {
    let eff = point
        .efficiency
        .filter(|e| *e > 0.0)
        .ok_or_else(|| SystemError::MissingEnergyData(point.name.clone()))?;
    if n_cores == 0 {
        return Err(SystemError::MissingEnergyData(point.name.clone()));
    }
    let perf = match (n_cores, point.perf_24core) {
        (REFERENCE_CORES, Some(p)) => p,
        _ => scale_performance(point, n_cores, Precision::Double),
    };
    Ok((perf / eff, eff))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManticoreConfig {
    #[serde(default)]
    pub cluster: ClusterConfig,
    pub tree: HierarchyTree,
    pub roofline: RooflineConfig,
    #[serde(default, rename = "operating_point")]
    pub operating_points: Vec<OperatingPoint>,
}

/// Turns a byte offset into `line:col` (1-based).
fn line_col(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    format!("{line}:{col}")
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<T, SystemError> {
    toml::from_str(text).map_err(|e| {
        let at = e.span().map(|s| line_col(text, s.start)).unwrap_or_else(|| "1:1".into());
        config_err(format!("{origin}:{at}"), e.message().to_string())
    })
}

impl ManticoreConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, SystemError> {
        let cfg: ManticoreConfig = parse_toml(text, origin)?;
        cfg.tree.validate()?;
        cfg.cluster
            .validate()
            .map_err(|e| config_err(format!("{origin}: [cluster]"), e.to_string()))?;
        if !(cfg.roofline.freq_hz > 0.0) {
            return Err(config_err(format!("{origin}: [roofline]"), "freq_hz must be positive"));
        }
        for p in &cfg.operating_points {
            if !(p.freq_hz > 0.0 && p.vdd > 0.0) {
                return Err(config_err(format!("{origin}: operating_point `{}`", p.name), "vdd and freq_hz must be positive"));
            }
        }
        Ok(cfg)
    }

    /// The configuration shipped in `configs/manticore.toml`.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_CONFIG, "configs/manticore.toml").expect("bundled config is valid")
    }

    pub fn cores_in(&self, scope: Scope) -> usize {
        let t = &self.tree;
        match scope {
            Scope::Cluster => t.cores_per_cluster,
            Scope::Chiplet => t.leaves_under(t.levels.len() - 1) * t.cores_per_cluster,
            Scope::System => t.total_cores(),
        }
    }

    pub fn clusters_in(&self, scope: Scope) -> usize {
        self.cores_in(scope) / self.tree.cores_per_cluster
    }

    /// Roofline of `scope` at the configured roofline frequency.
    pub fn roofline(&self, scope: Scope) -> RooflineParams {
        let t = &self.tree;
        let mem_bandwidth = match scope {
            Scope::Cluster => t.cluster_uplink,
            Scope::Chiplet => t.levels.last().map_or(t.cluster_uplink, |l| l.uplink),
            Scope::System => t.root_bandwidth(),
        };
        RooflineParams { peak_flops: self.cores_in(scope) as f64 * 2.0 * self.roofline.freq_hz, mem_bandwidth }
    }

    pub fn point(&self, name: &str) -> Option<&OperatingPoint> {
        self.operating_points.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadDescriptor {
    pub name: String,
    pub flops: f64,
    pub bytes: f64,
    pub scope: Option<Scope>,
}

impl WorkloadDescriptor {
    pub fn intensity(&self) -> f64 {
        self.flops / self.bytes
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadFile {
    #[serde(default)]
    workload: Vec<WorkloadEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadEntry {
    name: String,
    flops: f64,
    bytes: f64,
    #[serde(default)]
    scope: Option<Scope>,
}

pub fn parse_workloads(text: &str, origin: &str) -> Result<Vec<WorkloadDescriptor>, SystemError> {
    let file: WorkloadFile = parse_toml(text, origin)?;
    file.workload
        .into_iter()
        .map(|w| {
            if !(w.flops > 0.0 && w.bytes > 0.0 && w.flops.is_finite() && w.bytes.is_finite()) {
                return Err(config_err(format!("{origin}: workload `{}`", w.name), "flops and bytes must be positive"));
            }
            Ok(WorkloadDescriptor { name: w.name, flops: w.flops, bytes: w.bytes, scope: w.scope })
        })
        .collect()
}

pub fn bundled_workloads() -> Vec<WorkloadDescriptor> {
    parse_workloads(BUNDLED_WORKLOADS, "configs/workloads.toml").expect("bundled workloads are valid")
}

/// A single-cluster measurement attached to a workload row.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub workload: String,
    pub stats: ClusterStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RooflineRow {
    pub name: String,
    pub scope: Scope,
    pub intensity: f64,
    pub bound: Bound,
    pub attainable: f64,
    pub measured: Option<f64>,
    pub detachment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RooflineReport {
    pub scope: Scope,
    pub params: RooflineParams,
    pub rows: Vec<RooflineRow>,
}

/// Builds one row per workload. A measured cluster run is scaled to the
/// row's scope assuming every cluster in it performs alike.
pub fn roofline_report(cfg: &ManticoreConfig, workloads: &[WorkloadDescriptor], measured: &[Measurement]) -> RooflineReport {
    let default_scope = cfg.roofline.scope;
    let rows = workloads
        .iter()
        .map(|w| {
            let scope = w.scope.unwrap_or(default_scope);
            let r = cfg.roofline(scope);
            let intensity = w.intensity();
            let attainable = r.attainable(intensity, 0.0);
            let measured = measured.iter().find(|m| m.workload == w.name).map(|m| {
                m.stats.flops_per_cycle() * cfg.roofline.freq_hz * cfg.clusters_in(scope) as f64
            });
            RooflineRow {
                name: w.name.clone(),
                scope,
                intensity,
                bound: r.classify(intensity),
                attainable,
                measured,
                detachment: measured.map(|m| 1.0 - m / attainable),
            }
        })
        .collect();
    RooflineReport { scope: default_scope, params: cfg.roofline(default_scope), rows }
}

fn giga(v: f64) -> String {
    format!("{:.3}", v / 1e9)
}

impl RooflineReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# roofline scope {}: peak {} Gflop/s, bandwidth {} GB/s, ridge {:.3} flop/B",
            self.scope.name(),
            giga(self.params.peak_flops),
            giga(self.params.mem_bandwidth),
            self.params.ridge_intensity()
        );
        let _ = writeln!(
            s,
            "{:<22} {:<8} {:>10} {:<14} {:>16} {:>16} {:>11}",
            "workload", "scope", "flop/B", "bound", "attainable_gf", "measured_gf", "detachment"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<22} {:<8} {:>10.3} {:<14} {:>16} {:>16} {:>11}",
                r.name,
                r.scope.name(),
                r.intensity,
                r.bound.to_string(),
                giga(r.attainable),
                r.measured.map_or("-".into(), giga),
                r.detachment.map_or("-".into(), |d| format!("{:.1}%", 100.0 * d)),
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("workload,scope,intensity,bound,attainable_flops,measured_flops,detachment\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.6},{},{:.6e},{},{}",
                r.name,
                r.scope.name(),
                r.intensity,
                r.bound,
                r.attainable,
                r.measured.map_or(String::new(), |m| format!("{m:.6e}")),
                r.detachment.map_or(String::new(), |d| format!("{d:.6}")),
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointRow {
    pub name: String,
    pub vdd: f64,
    pub freq_hz: f64,
    pub perf_24: f64,
    /// Measured 24-core figure from the configuration, if any.
    pub stated_24: Option<f64>,
    pub perf_full: f64,
    pub efficiency: Option<f64>,
    pub power_24: Option<f64>,
    pub power_full: Option<f64>,
}

pub fn points_table(cfg: &ManticoreConfig) -> Vec<PointRow> {
    cfg.operating_points
        .iter()
        .map(|p| {
            let full = cfg.tree.total_cores();
            PointRow {
                name: p.name.clone(),
                vdd: p.vdd,
                freq_hz: p.freq_hz,
                perf_24: scale_performance(p, REFERENCE_CORES, Precision::Double),
                stated_24: p.perf_24core,
                perf_full: scale_performance(p, full, Precision::Double),
                efficiency: p.efficiency,
                power_24: power_and_efficiency(p, REFERENCE_CORES).ok().map(|(w, _)| w),
                power_full: power_and_efficiency(p, full).ok().map(|(w, _)| w),
            }
        })
        .collect()
}

pub fn points_text(rows: &[PointRow], full_cores: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<18} {:>6} {:>9} {:>14} {:>16} {:>16} {:>13} {:>10} {:>10}",
        "point",
        "vdd_v",
        "freq_ghz",
        "perf24_gflops",
        "stated24_gflops",
        format!("perf{full_cores}_tflops"),
        "eff_gflops_w",
        "power24_w",
        format!("power{full_cores}_w"),
    );
    let opt = |v: Option<f64>, scale: f64, prec: usize| v.map_or("n/a".to_string(), |x| format!("{:.prec$}", x / scale));
    for r in rows {
        let _ = writeln!(
            s,
            "{:<18} {:>6.3} {:>9.3} {:>14.3} {:>16} {:>16.3} {:>13} {:>10} {:>10}",
            r.name,
            r.vdd,
            r.freq_hz / 1e9,
            r.perf_24 / 1e9,
            opt(r.stated_24, 1e9, 3),
            r.perf_full / 1e12,
            opt(r.efficiency, 1e9, 1),
            opt(r.power_24, 1.0, 4),
            opt(r.power_full, 1.0, 2),
        );
    }
    s
}

pub fn points_csv(rows: &[PointRow]) -> String {
    let mut s = String::from("point,vdd,freq_hz,perf_24core,stated_24core,perf_full,efficiency,power_24core,power_full\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6e}"));
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6e},{:.6e},{},{:.6e},{},{},{}",
            r.name,
            r.vdd,
            r.freq_hz,
            r.perf_24,
            opt(r.stated_24),
            r.perf_full,
            opt(r.efficiency),
            opt(r.power_24),
            opt(r.power_full)
        );
    }
    s
}
