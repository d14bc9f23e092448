#![no_std]
//! Sample-size procedures for two-stage sequential multiple assignment
//! randomized trials (SMARTs).

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod design;
pub mod error;
pub mod experiment;
pub mod exec;
pub mod linalg;
pub mod normal;
pub mod projection;
pub mod qlearn;
pub mod report;
pub mod rng;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
