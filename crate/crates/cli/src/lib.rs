//! Library surface of the experiment harness: configuration types and the
//! experiment drivers, so integration tests and other tools can run sweeps
//! without going through the binary.

pub mod config;
pub mod experiments;
