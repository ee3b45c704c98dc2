//! Configuration, persistence and the command-line stages.

pub mod commands;
pub mod config;
pub mod csv;
pub mod manifest;
pub mod ppm;

pub use commands::Context;
pub use config::RunConfig;
pub use manifest::RunManifest;
