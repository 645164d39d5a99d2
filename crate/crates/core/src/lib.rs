pub mod backbones;
pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod grad;
pub mod model;
pub mod prompt;
pub mod recommend;
pub mod training;

pub use error::{Error, Result};
