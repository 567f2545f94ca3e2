//! Session service and command line around `geoseg-core`.

pub mod cli;
pub mod engine;
pub mod files;
pub mod http;
pub mod wire;

pub use engine::{Engine, ModelRegistry, ServiceError};
