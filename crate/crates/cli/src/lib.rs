//! Library side of the `metrise3d` command-line tool.

pub mod commands;
pub mod document;
pub mod report;

pub use document::{CliError, InputDocument, SigmaDocument};
pub use report::{Report, SCHEMA_VERSION};
