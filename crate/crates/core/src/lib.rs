pub mod blobpipe;
pub mod consensus;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod metrics;
pub mod net;
pub mod tensor;

pub use error::{Error, Result};
