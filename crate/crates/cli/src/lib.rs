//! Command-line front end for `powersym`.
//!
//! Exit codes: 0 when every check passes, 1 on a numerical or tolerance
//! failure, 2 on a configuration error.

pub mod commands;
pub mod error;
pub mod output;
pub mod report;
pub mod scenario;

pub use commands::{execute, run, Cli, Command, Outcome};
pub use error::CliError;
