//! The `snowseg` command-line front end.

pub mod commands;
pub mod config;
pub mod palette;

pub use commands::Flags;
pub use config::RunConfig;
pub use palette::Palette;
