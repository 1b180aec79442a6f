//! Experiment configuration, orchestration and rate fitting behind the
//! `smadmm` binary.

pub mod config;
pub mod experiment;
pub mod ratefit;
