//! HTTP API and facilitator CLI over the `esi-core` project store.

pub mod api;
pub mod cli;
pub mod ops;
mod render;

pub use api::{router, status_for, ApiError};
