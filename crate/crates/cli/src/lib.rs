//! Library surface of the pipeline CLI, exposed so integration tests can
//! drive stages without spawning the binary.

pub mod config;
pub mod manifest;
pub mod plot;
pub mod stages;
