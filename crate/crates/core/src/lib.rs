pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod formats;
pub mod nn;
pub mod recon;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
