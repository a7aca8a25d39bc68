//! Deterministic multi-agent construction simulator with gated, cost-sensitive
//! coordination escalation.

pub mod agent;
pub mod cli;
pub mod gate;
pub mod harness;
pub mod memory;
pub mod protocol;
pub mod scenarios;
pub mod solver;
pub mod world;
