//! Interactive latent direction discovery over HTTP.

pub mod adapter;
pub mod cli;
pub mod config;
pub mod error;
pub mod routes;
pub mod server;
pub mod state;
