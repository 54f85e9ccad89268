//! Plan sessions, plan comparison, export, the HTTP API and the command line
//! front end for the `brachynav_core` planning engine.

pub mod api;
pub mod cli;
pub mod diff;
pub mod error;
pub mod export;
pub mod session;

pub use error::{ErrorCode, ServiceError};
