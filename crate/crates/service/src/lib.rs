//! HTTP service and command-line front end for the coverage repair engine.

pub mod api;
pub mod cli;
pub mod queue;
pub mod worker;
