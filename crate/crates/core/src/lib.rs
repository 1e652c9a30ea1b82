#![no_std]
#![doc = include_str!("../README.md")]

extern crate alloc;

pub mod analysis;
pub mod error;
pub mod features;
pub mod lstm;
pub mod math;
pub mod pca;
pub mod pipeline;
pub mod rng;
pub mod runin;
pub mod sequence;
pub mod sim;

pub use error::{Error, Result};
