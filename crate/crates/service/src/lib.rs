//! Command-line entry points and the HTTP service around the text-effect model.

pub mod api;
pub mod cli;
pub mod jobs;
pub mod server;
pub mod store;

pub use api::ApiError;
pub use server::{router, AppState};
