//! Operations layer for the pebble-bed run-in toolkit: file formats, run
//! manifests, parallel training, the live session, its HTTP API and the
//! `pebble` command line.

pub mod api;
pub mod artifact;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod reports;
pub mod session;
pub mod training;

pub use error::{OpsError, Result};
