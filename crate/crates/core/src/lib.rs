pub mod collocation;
pub mod config;
pub mod error;
pub mod io;
pub mod neighbors;
pub mod network;
pub mod numerics;
pub mod oracle;
pub mod problems;
pub mod run;
pub mod solver;
pub mod zeroset;

pub use error::{Error, Result};
