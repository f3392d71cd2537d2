//! Configuration, artifact manifests and pipeline stages behind the
//! `mutraj` command.

pub mod config;
pub mod manifest;
pub mod pipeline;
