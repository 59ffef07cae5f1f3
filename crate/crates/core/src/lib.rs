#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod decode;
pub mod dialect;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod layers;
pub mod model;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{Precision, Tensor};
