//! Enrollment and verification over HTTP, plus the `gazeauth` command line.

pub mod api;
pub mod cli;
pub mod client;
