//! Search core for step-level reward modeling: the reasoning-step domain
//! model, MCTS preference collection, reward-model input views, and
//! reward-guided beam search. `no_std` with `alloc`.

#![no_std]
extern crate alloc;

pub mod answer;
pub mod mcts;
pub mod policy;
pub mod search;
pub mod synthetic;
pub mod types;
pub mod util;
pub mod views;
