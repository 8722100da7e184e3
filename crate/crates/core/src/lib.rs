//! Cycle-approximate model of a Snitch compute cluster with stream semantic
//! registers and FP repetition, plus an analytic model of the Manticore
//! memory hierarchy, roofline and operating points.

pub mod asm;
pub mod core;
pub mod dma;
pub mod fpu;
pub mod frep;
pub mod isa;
pub mod memory;
pub mod ssr;
pub mod tcdm;
pub mod cluster;
pub mod image;
pub mod kernels;
pub mod stats;
pub mod system;
