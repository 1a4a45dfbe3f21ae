//! Command-line front end and the HTTP annotation server.

pub mod server;
