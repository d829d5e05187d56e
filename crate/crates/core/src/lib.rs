pub mod archive;
pub mod blocks;
pub mod cli;
pub mod embedding;
pub mod error;
pub mod model;
pub mod reparam;
pub mod tensor;

pub use error::{Error, Result};
