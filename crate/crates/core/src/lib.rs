//! Behavioral-cloning pretraining and real-time recurrent reinforcement
//! learning (RTRRL) fine-tuning of recurrent driving policies.

pub mod agent;
pub mod bc;
pub mod cells;
pub mod env;
pub mod harness;
pub mod heads;
pub mod math;
pub mod online_grad;
pub mod persist;
pub mod policy;
pub mod seeds;
