//! Command-line front end: run configuration, on-disk formats and the
//! processing stages behind the `echosplit` binary.

pub mod config;
pub mod formats;
pub mod images;
pub mod stages;

pub use config::RunConfig;
pub use stages::Ctx;
