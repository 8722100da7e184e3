//! `manticore`: run kernels on the simulated cluster and print system-level
//! reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use manticore::asm::{assemble, disassemble, AsmProgram};
use manticore::cluster::{run_cluster, RunOptions, RunOutput, SimError};
use manticore::image::MemoryImage;
use manticore::kernels::{self, loop_profile, BuiltKernel, KernelError, KernelParams};
use manticore::stats::ClusterStats;
use manticore::system::{
    bundled_workloads, parse_workloads, points_csv, points_table, points_text, roofline_report, ManticoreConfig,
    Measurement, SystemError,
};

#[derive(Parser)]
#[command(name = "manticore", version, about = "Snitch cluster simulator and Manticore system model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a corpus kernel (or an assembly file) on the cluster.
    Run {
        /// Kernel name from `list-kernels`, or a path to an assembly file.
        target: String,
        /// Machine description (TOML); defaults to the bundled one.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Problem size; each kernel has its own default.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Independent integer instructions placed after the frep body.
        #[arg(long, default_value_t = 0)]
        fillers: usize,
        /// Draw kernel inputs from small integers.
        #[arg(long)]
        integers: bool,
        /// Memory image applied before running an assembly file.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Write the cycle trace here.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Write the full `key = value` statistics here.
        #[arg(long)]
        stats_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long, default_value_t = 10_000_000)]
        max_cycles: u64,
        /// Run at several sizes, e.g. `n=16,64,256`; one row per size.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Roofline table for a workload list, optionally with measured runs.
    Roofline {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Workload descriptors; defaults to the bundled DNN sample.
        #[arg(long)]
        workloads: Option<PathBuf>,
        /// Attach a stats file to a workload: `NAME=PATH`.
        #[arg(long)]
        measured: Vec<String>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Operating-point table: performance, efficiency and power.
    Points {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// List the kernel corpus.
    ListKernels,
    /// Assemble a file and print the canonical listing.
    Assemble {
        path: PathBuf,
        /// Write the listing to a file instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// A failure with its exit code; rendered as `error[kind]: message`.
struct Failure {
    kind: &'static str,
    code: u8,
    msg: String,
}

impl Failure {
    fn new(kind: &'static str, code: u8, msg: impl Into<String>) -> Self {
        Failure { kind, code, msg: msg.into() }
    }
    fn usage(msg: impl Into<String>) -> Self {
        Self::new("usage", 2, msg)
    }
    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", 9, format!("{}: {e}", path.display()))
    }
}

impl From<SystemError> for Failure {
    fn from(e: SystemError) -> Self {
        Failure::new("config", 3, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::CycleLimitExceeded { .. } => Failure::new("cycle-limit", 7, e.to_string()),
            SimError::InvalidConfig(_) => Failure::new("config", 3, e.to_string()),
            _ => Failure::new("fault", 6, e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<ManticoreConfig, Failure> {
    match path {
        Some(p) => Ok(ManticoreConfig::parse(&read(p)?, &p.display().to_string())?),
        None => Ok(ManticoreConfig::bundled()),
    }
}

/// One finished run plus the figures derived from its trace.
struct RunResult {
    label: String,
    n: Option<usize>,
    out: RunOutput,
    steady: Option<Steady>,
    check: Option<Result<(), String>>,
}

struct Steady {
    iterations: usize,
    cycles: u64,
    fetched: u64,
    executed: u64,
    fma: u64,
}

fn steady_state(out: &RunOutput, head: u32) -> Option<Steady> {
    let prof = loop_profile(out.trace.as_ref()?, 0, head);
    // the first iteration carries the stream warm-up
    let body = if prof.len() > 2 { &prof[1..] } else { &prof[..] };
    if body.is_empty() {
        return None;
    }
    let sum = |f: fn(&kernels::IterProfile) -> u64| body.iter().map(f).sum::<u64>();
    Some(Steady {
        iterations: body.len(),
        cycles: sum(|p| p.cycles),
        fetched: sum(|p| p.fetched),
        executed: sum(|p| p.executed()),
        fma: sum(|p| p.fma_executed),
    })
}

fn simulate(
    cfg: &ManticoreConfig,
    program: &AsmProgram,
    image: Option<&MemoryImage>,
    max_cycles: u64,
) -> Result<RunOutput, Failure> {
    Ok(run_cluster(&cfg.cluster, program, image, RunOptions { max_cycles, trace: true })?)
}

fn run_kernel(cfg: &ManticoreConfig, name: &str, params: KernelParams, max_cycles: u64) -> Result<RunResult, Failure> {
    let k: BuiltKernel = kernels::build(name, &params).map_err(|e| match e {
        KernelError::Unknown(_) => Failure::new("unknown-kernel", 5, e.to_string()),
        KernelError::BadSize { .. } => Failure::usage(e.to_string()),
        KernelError::Asm(_) => Failure::new("assemble", 4, e.to_string()),
    })?;
    let out = simulate(cfg, &k.program, Some(&k.image), max_cycles)?;
    let steady = k.loop_pc().and_then(|pc| steady_state(&out, pc));
    let check = Some(k.check(&out.memory).map_err(|e| e.to_string()));
    Ok(RunResult { label: name.to_string(), n: Some(k.n), out, steady, check })
}

fn run_file(cfg: &ManticoreConfig, path: &Path, image: Option<&Path>, max_cycles: u64) -> Result<RunResult, Failure> {
    let src = read(path)?;
    let program = assemble(&src).map_err(|e| Failure::new("assemble", 4, format!("{}: {e}", path.display())))?;
    let img = match image {
        Some(p) => Some(MemoryImage::parse(&read(p)?).map_err(|e| Failure::new("image", 3, format!("{}: {e}", p.display())))?),
        None => None,
    };
    let out = simulate(cfg, &program, img.as_ref(), max_cycles)?;
    Ok(RunResult { label: path.display().to_string(), n: None, out, steady: None, check: None })
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn summary_text(r: &RunResult, seed: u64) -> String {
    let st: &ClusterStats = &r.out.stats;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("kernel", r.label.clone());
    if let Some(n) = r.n {
        kv("n", n.to_string());
        kv("seed", seed.to_string());
    }
    kv("cycles", st.cycles.to_string());
    kv("active_cores", st.active_cores.to_string());
    kv("utilization", format!("{:.6}", st.utilization()));
    kv("flops_per_cycle", format!("{:.6}", st.flops_per_cycle()));
    kv("fetched", st.fetched().to_string());
    kv("int_retired", st.int_retired().to_string());
    kv("fp_executed", st.fp_executed().to_string());
    kv("fma_executed", st.fma_executed().to_string());
    kv("tcdm_conflicts", st.tcdm_conflicts().to_string());
    kv("dma_bytes", st.dma.bytes.to_string());
    if let Some(sd) = &r.steady {
        let it = sd.iterations as u64;
        kv("steady.iterations", it.to_string());
        kv("steady.fetched_per_iteration", format!("{}", ratio(sd.fetched, it)));
        kv("steady.executed_per_iteration", format!("{}", ratio(sd.executed, it)));
        kv("steady.fma_per_iteration", format!("{}", ratio(sd.fma, it)));
        kv("steady.cycles_per_iteration", format!("{}", ratio(sd.cycles, it)));
        kv("steady.utilization", format!("{:.6}", ratio(sd.fma, sd.cycles)));
        kv("steady.fetched_per_cycle", format!("{:.6}", ratio(sd.fetched, sd.cycles)));
    }
    if let Some(c) = &r.check {
        kv("check", if c.is_ok() { "pass".into() } else { "FAIL".into() });
    }
    s
}

const CSV_HEADER: &str = "kernel,n,seed,cycles,active_cores,utilization,flops_per_cycle,fetched,fp_executed,fma_executed,\
steady_utilization,fetched_per_iteration,check\n";

fn summary_csv(r: &RunResult, seed: u64) -> String {
    let st = &r.out.stats;
    let (su, fpi) = match &r.steady {
        Some(sd) => (format!("{:.6}", ratio(sd.fma, sd.cycles)), format!("{}", ratio(sd.fetched, sd.iterations as u64))),
        None => (String::new(), String::new()),
    };
    let check = match &r.check {
        Some(Ok(())) => "pass",
        Some(Err(_)) => "fail",
        None => "",
    };
    format!(
        "{},{},{},{},{},{:.6},{:.6},{},{},{},{},{},{}\n",
        r.label,
        r.n.map_or(String::new(), |n| n.to_string()),
        seed,
        st.cycles,
        st.active_cores,
        st.utilization(),
        st.flops_per_cycle(),
        st.fetched(),
        st.fp_executed(),
        st.fma_executed(),
        su,
        fpi,
        check
    )
}

fn parse_sweep(spec: &str) -> Result<Vec<usize>, Failure> {
    let list = spec
        .strip_prefix("n=")
        .ok_or_else(|| Failure::usage(format!("--sweep expects `n=a,b,...`, got `{spec}`")))?;
    list.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| Failure::usage(format!("bad sweep size `{v}`"))))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    target: &str,
    config: Option<&Path>,
    n: Option<usize>,
    seed: u64,
    fillers: usize,
    integers: bool,
    image: Option<&Path>,
    trace_out: Option<&Path>,
    stats_out: Option<&Path>,
    format: Format,
    max_cycles: u64,
    sweep: Option<&str>,
) -> Result<String, Failure> {
    let cfg = load_config(config)?;
    let is_file = target.ends_with(".s") || target.ends_with(".S") || Path::new(target).is_file();
    let sizes = match sweep {
        Some(spec) => {
            if is_file || trace_out.is_some() || stats_out.is_some() {
                return Err(Failure::usage("--sweep runs corpus kernels and writes no trace or stats files"));
            }
            parse_sweep(spec)?.into_iter().map(Some).collect()
        }
        None => vec![n],
    };
    let mut results = Vec::new();
    for size in sizes {
        let r = if is_file {
            run_file(&cfg, Path::new(target), image, max_cycles)?
        } else {
            let params = KernelParams { n: size, seed, fillers, integers };
            run_kernel(&cfg, target, params, max_cycles)?
        };
        results.push(r);
    }
    if let Some(p) = trace_out {
        write(p, &results[0].out.trace.as_ref().map(|t| t.to_string()).unwrap_or_default())?;
    }
    if let Some(p) = stats_out {
        write(p, &results[0].out.stats.to_kv())?;
    }
    let mut text = String::new();
    match format {
        Format::Csv => {
            text.push_str(CSV_HEADER);
            for r in &results {
                text.push_str(&summary_csv(r, seed));
            }
        }
        Format::Text => {
            for (i, r) in results.iter().enumerate() {
                if i > 0 {
                    text.push('\n');
                }
                text.push_str(&summary_text(r, seed));
            }
        }
    }
    if let Some((r, Some(Err(e)))) = results.iter().map(|r| (r, r.check.as_ref())).find(|(_, c)| matches!(c, Some(Err(_)))) {
        print!("{text}");
        return Err(Failure::new("check", 8, format!("{}: {e}", r.label)));
    }
    Ok(text)
}

fn cmd_roofline(config: Option<&Path>, workloads: Option<&Path>, measured: &[String], format: Format) -> Result<String, Failure> {
    let cfg = load_config(config)?;
    let ws = match workloads {
        Some(p) => parse_workloads(&read(p)?, &p.display().to_string())?,
        None => bundled_workloads(),
    };
    if ws.is_empty() {
        return Err(Failure::usage("the workload list is empty"));
    }
    let mut ms = Vec::new();
    for m in measured {
        let (name, path) = m
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--measured expects NAME=PATH, got `{m}`")))?;
        if !ws.iter().any(|w| w.name == name) {
            return Err(Failure::usage(format!("--measured names unknown workload `{name}`")));
        }
        let path = Path::new(path);
        let stats = ClusterStats::from_kv(&read(path)?)
            .map_err(|e| Failure::new("config", 3, format!("{}: {e}", path.display())))?;
        ms.push(Measurement { workload: name.to_string(), stats });
    }
    let rep = roofline_report(&cfg, &ws, &ms);
    Ok(match format {
        Format::Text => rep.to_text(),
        Format::Csv => rep.to_csv(),
    })
}

fn cmd_points(config: Option<&Path>, format: Format) -> Result<String, Failure> {
    let cfg = load_config(config)?;
    if cfg.operating_points.is_empty() {
        return Err(Failure::new("config", 3, "configuration defines no operating points"));
    }
    let rows = points_table(&cfg);
    Ok(match format {
        Format::Text => points_text(&rows, cfg.tree.total_cores()),
        Format::Csv => points_csv(&rows),
    })
}

fn cmd_list() -> String {
    let mut s = String::new();
    for k in kernels::KERNELS {
        let _ = writeln!(s, "{:<20} n={:<5} {}", k.name, k.default_n, k.description);
    }
    s
}

fn cmd_assemble(path: &Path, output: Option<&Path>) -> Result<String, Failure> {
    let src = read(path)?;
    let prog = assemble(&src).map_err(|e| Failure::new("assemble", 4, format!("{}: {e}", path.display())))?;
    let listing = disassemble(&prog);
    match output {
        Some(o) => {
            write(o, &listing)?;
            Ok(String::new())
        }
        None => Ok(listing),
    }
}

fn dispatch(cmd: Cmd) -> Result<String, Failure> {
    match cmd {
        Cmd::Run { target, config, n, seed, fillers, integers, image, trace_out, stats_out, format, max_cycles, sweep } => {
            cmd_run(
                &target,
                config.as_deref(),
                n,
                seed,
                fillers,
                integers,
                image.as_deref(),
                trace_out.as_deref(),
                stats_out.as_deref(),
                format,
                max_cycles,
                sweep.as_deref(),
            )
        }
        Cmd::Roofline { config, workloads, measured, format } => {
            cmd_roofline(config.as_deref(), workloads.as_deref(), &measured, format)
        }
        Cmd::Points { config, format } => cmd_points(config.as_deref(), format),
        Cmd::ListKernels => Ok(cmd_list()),
        Cmd::Assemble { path, output } => cmd_assemble(&path, output.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.cmd) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error[{}]: {}", f.kind, f.msg.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}
