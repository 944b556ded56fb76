//! Std companion of `rcmtwin-core`: configuration files, the wire
//! protocol, the live twin session, the real-time service and benchmark
//! output.

pub mod config;
pub mod drills;
pub mod error;
pub mod protocol;
pub mod report;
pub mod service;
pub mod session;

pub use error::{Error, Result};
