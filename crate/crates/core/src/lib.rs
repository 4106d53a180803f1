//! Confidence estimation from transformer internal states.

pub mod bound;
pub mod calib;
pub mod graph;
pub mod objective;
pub mod probe;
pub mod store;
pub mod toylm;
pub mod trainer;
