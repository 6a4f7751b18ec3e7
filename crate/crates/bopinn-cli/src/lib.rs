//! Experiment orchestration for the wave-velocity estimation study: the
//! three-case setup, repeated seeded runs, and plot-ready exports.

pub mod config;
pub mod experiment;
pub mod report;
