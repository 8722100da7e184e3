mod common;

use manticore::asm::{assemble, disassemble};
use manticore::cluster::{run_cluster, ClusterConfig, RunOptions};
use manticore::kernels::{build, BuiltKernel, KernelParams, KERNELS};
use manticore::memory::Memory;

const SEEDS: u64 = 100;

/// A size that varies with the seed but stays legal for the kernel.
fn size_for(name: &str, seed: u64) -> usize {
    let s = seed as usize;
    match name {
        "dot_baseline" | "dot_ssr" | "dot_ssr_frep" => 4 * (1 + s % 64),
        "matvec48_baseline" | "matvec48_ssr_frep" => 4 * (1 + s % 12),
        "matmul_ssr_frep" => 8 * (1 + s % 4),
        "axpy_ssr" => 1 + (7 * s) % 300,
        "dma_stream" => 1 + s % 16,
        _ => 8 * (1 + s % 32),
    }
}

fn run(k: &BuiltKernel) -> Memory {
    run_cluster(&ClusterConfig::default(), &k.program, Some(&k.image), RunOptions::default())
        .unwrap_or_else(|e| panic!("{} n={}: {e}", k.name, k.n))
        .memory
}

#[test]
fn every_kernel_matches_reference_over_many_seeds() {
    for info in KERNELS {
        for seed in 0..SEEDS {
            let params = KernelParams {
                n: Some(size_for(info.name, seed)),
                seed,
                integers: seed % 2 == 0,
                ..KernelParams::default()
            };
            let k = build(info.name, &params).unwrap();
            let mem = run(&k);
            k.check(&mem).unwrap_or_else(|e| panic!("{} seed {seed} n={}: {e}", info.name, k.n));
        }
    }
}

#[test]
fn default_sizes_match_reference() {
    for info in KERNELS {
        for seed in 0..4 {
            let k = build(info.name, &KernelParams { seed, ..KernelParams::default() }).unwrap();
            k.check(&run(&k)).unwrap_or_else(|e| panic!("{} seed {seed}: {e}", info.name));
        }
    }
}

#[test]
fn dot_variants_agree_bit_for_bit() {
    for seed in 0..SEEDS {
        let p = KernelParams { n: Some(4 * (1 + seed as usize % 64)), seed, ..KernelParams::default() };
        let results: Vec<u64> = ["dot_baseline", "dot_ssr", "dot_ssr_frep"]
            .iter()
            .map(|name| {
                let k = build(name, &p).unwrap();
                run(&k).load_f64(k.program.symbol("res").unwrap()).unwrap().to_bits()
            })
            .collect();
        assert!(results.windows(2).all(|w| w[0] == w[1]), "seed {seed}: {results:x?}");
    }
}

#[test]
fn dot_of_ones_is_exact() {
    let mut k = build("dot_ssr_frep", &common::sized(256)).unwrap();
    let (x, y) = (k.program.symbol("x").unwrap(), k.program.symbol("y").unwrap());
    k.image.push_f64s(x, &[1.0; 256]);
    k.image.push_f64s(y, &[1.0; 256]);
    let mem = run(&k);
    assert_eq!(mem.load_f64(k.program.symbol("res").unwrap()).unwrap(), 256.0);
}

#[test]
fn matvec_with_identity_returns_x() {
    for name in ["matvec48_baseline", "matvec48_ssr_frep"] {
        let mut k = build(name, &KernelParams::default()).unwrap();
        let mut eye = vec![0.0; 48 * 48];
        for i in 0..48 {
            eye[i * 48 + i] = 1.0;
        }
        let x: Vec<f64> = (1..=48).map(f64::from).collect();
        k.image.push_f64s(k.program.symbol("A").unwrap(), &eye);
        k.image.push_f64s(k.program.symbol("x").unwrap(), &x);
        let mem = run(&k);
        assert_eq!(mem.read_f64s(k.program.symbol("y").unwrap(), 48).unwrap(), x, "{name}");
    }
}

#[test]
fn small_integer_matmul_is_exact() {
    let k = build("matmul_ssr_frep", &KernelParams { n: Some(8), seed: 7, integers: true, ..KernelParams::default() })
        .unwrap();
    k.check(&run(&k)).unwrap();
}

#[test]
fn kernel_sources_round_trip_through_disassembly() {
    for info in KERNELS {
        let k = build(info.name, &KernelParams::default()).unwrap();
        let again = assemble(&disassemble(&k.program)).unwrap();
        assert_eq!(again, k.program, "{}", info.name);
        assert_eq!(disassemble(&again), disassemble(&k.program));
    }
}
