//! Experiment drivers behind the `fecnn` command.

pub mod audit;
pub mod bitstats;
pub mod cli;
pub mod evalplan;
pub mod setup;
pub mod sweep;
pub mod train;
pub mod twophase;
