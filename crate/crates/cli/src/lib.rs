//! Experiment driver for the class-aided multisensor tracker: configuration,
//! seeded Monte Carlo batches, CSV output and the oracle suite.

pub mod config;
pub mod experiment;
pub mod output;
pub mod validation;
