pub mod audio;
pub mod audit;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod ffc;
pub mod models;
pub mod nn;
pub mod phase;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
