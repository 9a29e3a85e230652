//! File formats, the worked example and the Monte Carlo harness on top of
//! `ebri-core`.

pub mod example;
pub mod harness;
pub mod io;

pub use ebri_core as core;
