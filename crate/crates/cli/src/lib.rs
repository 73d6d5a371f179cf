//! Command-line front end, HTTP shard service and fan-out client for
//! `lshensemble` indexes.

pub mod commands;
pub mod error;
pub mod fanout;
pub mod server;
pub mod shard;
pub mod wire;

pub use error::{CliError, Result};
pub use fanout::{FanoutResult, ShardSet};
