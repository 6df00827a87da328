//! Command implementations behind the `e2mc` binary.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{run, Cli, Outcome};

pub const TOOL: &str = "e2mc";

/// Process exit status for a command result: 0 success, 1 user error,
/// 2 internal error or failed verification.
pub fn exit_code(result: &e2mc_core::Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::Failed) => 2,
        Err(e) if e.is_user_error() => 1,
        Err(_) => 2,
    }
}
