mod common;

use std::path::PathBuf;

use common::run_kernel;
use manticore::kernels::{KernelParams, KERNELS};

#[test]
fn repeated_runs_are_identical() {
    for info in KERNELS {
        let (_, a) = run_kernel(info.name, KernelParams::default());
        let (_, b) = run_kernel(info.name, KernelParams::default());
        assert_eq!(a.trace.unwrap().to_string(), b.trace.unwrap().to_string(), "{}", info.name);
        assert_eq!(a.stats.to_kv(), b.stats.to_kv(), "{}", info.name);
    }
}

/// The opening of the matvec trace: stream setup, the first frep capture
/// and the start of replay. Regenerate with `UPDATE_GOLDEN=1`.
#[test]
fn matvec_trace_head_matches_golden() {
    let (_, out) = run_kernel("matvec48_ssr_frep", KernelParams::default());
    let text = out.trace.unwrap().to_string();
    let head: String = text.lines().take(64).map(|l| format!("{l}\n")).collect();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/matvec48_ssr_frep.trace");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &head).unwrap();
    }
    let golden = std::fs::read_to_string(&path).unwrap();
    assert_eq!(head, golden);
}
