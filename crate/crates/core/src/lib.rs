//! Learned orchestration of a registry of image generation and editing experts.
//!
//! An episode starts from a prompt and a blank canvas (or an input image). At
//! every step a DQN agent picks one expert from the registry, the expert
//! executes the current atomic command, a critic scores the result and
//! rewrites the outstanding command ledger, and the next command is extracted.
//!
//! The crate is organised bottom-up:
//!
//! * [`embedder`] turns the textual reflection state into a fixed-width vector.
//! * [`registry`] holds the experts, the canvas model and action eligibility.
//! * [`reflection`] is the critic, the attempt policy and command extraction.
//! * [`env`](mod@env) glues those into an MDP with `reset` / `step`.
//! * [`agent`] is the Q-network, Adam, replay buffer and checkpoint format.
//! * [`sim`] generates synthetic prompts and ground-truth oracles.
//! * [`harness`] drives training, evaluation, baselines, statistics and logs.

pub mod agent;
pub mod embedder;
pub mod env;
pub mod error;
pub mod harness;
pub mod reflection;
pub mod registry;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
