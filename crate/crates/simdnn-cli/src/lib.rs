//! Library surface of the command-line front end, split out so integration
//! tests can drive commands without spawning processes.

pub mod config;
pub mod runner;
