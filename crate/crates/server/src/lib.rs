//! Command-line tools and HTTP chat service over the clonebot engine.

pub mod bundle;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod http;

pub use error::CliError;
