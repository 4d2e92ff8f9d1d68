pub mod bootstrap;
pub mod cli;
pub mod data;
pub mod demo;
pub mod error;
pub mod estimators;
pub mod overlap;
pub mod sensitivity;
pub mod simulate;

pub use error::{Error, Result};
