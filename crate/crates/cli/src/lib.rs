//! File formats, configuration, and the command implementations behind the
//! `viewrank` binary. Kept as a library so the commands stay testable
//! without spawning processes.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod report;
pub mod snapshot;
