//! Single-agent coverage scheduling over square areas.
//!
//! A schedule visits every area once, choosing for each an entry corner and
//! a coverage pattern. The crate provides map generation, exact and
//! heuristic solvers, a graph-attention policy trained with REINFORCE, and
//! evaluation tooling comparing the two.

pub mod decoder;
pub mod encoder;
pub mod geometry;
pub mod harness;
pub mod mapgen;
pub mod policy;
pub mod solvers;
pub mod training;

pub use geometry::{CostModel, Decision, Schedule};
pub use mapgen::AreaMap;
pub use policy::{Policy, PolicyConfig};
