//! Filesystem, network and command-line layer over `steptree-core`.
//!
//! The `steptree` binary is a thin wrapper over [`pipeline`]; everything it
//! does is also callable from here.

pub mod config;
pub mod files;
pub mod http;
pub mod pipeline;
pub mod transcript;
pub mod treefile;
