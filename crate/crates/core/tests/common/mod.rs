#![allow(dead_code)]

use manticore::asm::assemble;
use manticore::cluster::{run_cluster, ClusterConfig, RunOptions, RunOutput, SimError};
use manticore::kernels::{build, BuiltKernel, KernelParams};

pub fn traced() -> RunOptions {
    RunOptions { trace: true, ..RunOptions::default() }
}

pub fn run_src(src: &str) -> Result<RunOutput, SimError> {
    let prog = assemble(src).unwrap_or_else(|e| panic!("{e}\n{src}"));
    run_cluster(&ClusterConfig::default(), &prog, None, traced())
}

pub fn run_kernel(name: &str, params: KernelParams) -> (BuiltKernel, RunOutput) {
    let k = build(name, &params).unwrap();
    let out = run_cluster(&ClusterConfig::default(), &k.program, Some(&k.image), traced())
        .unwrap_or_else(|e| panic!("{name}: {e}"));
    (k, out)
}

pub fn sized(n: usize) -> KernelParams {
    KernelParams { n: Some(n), ..KernelParams::default() }
}
