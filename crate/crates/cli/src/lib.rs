//! Configuration ingestion, batch driver and artifact output for the
//! `screwdyn` command.

pub mod config;
pub mod driver;
pub mod output;
