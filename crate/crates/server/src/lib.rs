//! HTTP service and command-line front end for the coverage aggregates in
//! `coverage-core`.

pub mod api;
pub mod config;
pub mod wire;

pub use api::{router, AppState};
pub use config::ServiceConfig;
