//! Inference-time fusion of a main policy with behavioral sub-policies,
//! plus everything needed to train and evaluate them on small gridworlds.

pub mod check;
pub mod control;
pub mod fusion;
pub mod gridworld;
pub mod persist;
pub mod rng;
pub mod trainer;
pub mod harness;
pub mod irl;
