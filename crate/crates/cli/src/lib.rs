//! Configuration-driven front end: builtin and custom problems, search
//! runs with their data files, and oracle-backed verification suites.

pub mod builtins;
pub mod config;
pub mod error;
pub mod output;
pub mod problem;
pub mod run;
pub mod verify;
