pub mod active;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod gp;
pub mod grid;
pub mod numeric;
pub mod problems;
pub mod samplers;
pub mod verify;

pub use error::{Error, Result};
