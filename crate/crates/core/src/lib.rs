//! Desk-scale machinery for cost-efficient flow-matching video generation.

pub mod condition;
pub mod datapipe;
pub mod dcae;
pub mod error;
pub mod flow_match;
pub mod guidance;
pub mod inf_scale;
pub mod mmdit;
pub mod nn;
pub mod rng;
pub mod sched_cost;
pub mod tensor;
pub mod toy;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::Tensor;
