#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod dcopf;
pub mod encode;
pub mod grid;
pub mod linalg;
pub mod lp;
pub mod math;
pub mod metrics;
pub mod mlp;
pub mod verify;
