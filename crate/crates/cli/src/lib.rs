//! Command implementations behind the `lattice-eit` binary, and the session
//! server.

pub mod commands;
pub mod server;

pub use lattice_eit_core as core;
