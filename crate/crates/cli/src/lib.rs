//! HTTP/JSON server and command-line interface over `neuroscope-core`.

pub mod api;
pub mod cli;
pub mod error;
pub mod format;
pub mod jobs;
pub mod session;

pub use api::{router, App};
pub use error::ApiError;
