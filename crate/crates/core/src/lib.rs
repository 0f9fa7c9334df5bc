//! Masking reward behavior trees (MRBTs).
//!
//! An MRBT is a behavior tree whose leaves are small three-state reward
//! machines carrying an action mask. Ticking the tree with the set of
//! formulas that currently hold yields a reward (the sum over ticked leaves)
//! and an action mask (that of the last ticked leaf). This crate provides
//! the formula language, the tree engine and its construction template, a
//! bounded verifier for subtask formulas, the generate/verify/refine
//! pipeline, gridworld task spaces and a small RL trainer.

pub mod formula;
pub mod schema;
pub mod mbrm;
pub mod bt;
pub mod template;
pub mod gridworld;
pub mod verifier;
pub mod pipeline;
pub mod trainer;
