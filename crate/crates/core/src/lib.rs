//! TripleNet: model construction, static cost analysis, CPU execution and training.

pub mod bench;
pub mod connectivity;
pub mod cost;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod parallel;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Float, Tensor};
