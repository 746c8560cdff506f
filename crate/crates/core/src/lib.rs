//! Numerical lab for positional versus symbolic rotary attention heads.

pub mod attention;
pub mod behavior;
pub mod error;
pub mod experiments;
pub mod heads;
pub mod metric;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
