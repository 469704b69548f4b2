//! Command-line tools and the websocket service for interactive sessions.

pub mod cli;
pub mod connection;
pub mod server;
