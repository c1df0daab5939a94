//! Curriculum reinforcement-learning laboratory.
//!
//! Group-relative policy optimization with verifiable rewards, online
//! difficulty soft weighting, a dynamic cosine length reward, and a three-stage
//! easy/medium/hard curriculum, all run against a synthetic task whose policy
//! is a small logit table with exact gradients.

pub mod curriculum;
pub mod env;
pub mod error;
pub mod harness;
pub mod odsw;
pub mod optimizer;
pub mod rewards;
pub mod rollout;
pub mod seeds;

pub use error::{Error, Result};
