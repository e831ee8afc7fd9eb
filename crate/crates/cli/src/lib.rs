//! Command implementations and the experiment runner behind the `mend`
//! binary.

pub mod config;
pub mod data;
pub mod error;
pub mod manifest;
pub mod parallel;
pub mod pipeline;
pub mod commands;
pub mod table;
