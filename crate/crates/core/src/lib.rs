pub mod allocator;
pub mod error;
mod format;
pub(crate) mod gauss;
pub mod grids;
pub mod harness;
pub mod hadamard;
pub mod linearity;
pub mod quantizer;
pub mod rng;

pub use error::{Error, FormatError, Result};
