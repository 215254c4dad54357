//! Command-line and HTTP front ends for fishbone rigs.

pub mod augment;
pub mod batch;
pub mod server;
pub mod session;
pub mod wire;
