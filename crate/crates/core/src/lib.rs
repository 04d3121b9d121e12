//! Mixture Gaussian prior pruning for small transformer encoders.

pub mod data;
pub mod harness;
pub mod optim;
pub mod params;
pub mod prior;
pub mod prune;
pub mod schedule;
pub mod tensor;
pub mod transformer;
