//! Text-mediated grid games, language-agent policies over a small log-linear
//! token model, and a multi-step group-relative policy optimization trainer.
//!
//! The crate is organised bottom-up:
//!
//! - [`tmsg`]: the game contract and the agent-environment loop,
//! - [`env`]: Frozen Lake and two-player Snake with text observations,
//! - [`policy`]: the token model, its sampler and exact gradients,
//! - [`lap`]: prompt templates, generation settings and the action parser,
//! - [`reward`]: invalid-action and format penalties,
//! - [`trainer`]: advantages, episode selection, the surrogate and the loop,
//! - [`eval`]: value iteration, scripted baselines and evaluation suites.
//!
//! Independent work (episodes of a group, suite episodes) runs through
//! [`exec::Execution`], which is data-parallel with the default `parallel`
//! feature and sequential otherwise. Both give bit-identical results.

pub mod env;
pub mod eval;
pub mod exec;
pub mod lap;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod tmsg;
pub mod trainer;

pub use exec::Execution;
