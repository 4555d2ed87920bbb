//! Imitation of latent policies from state-only demonstrations.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense networks, a reverse-mode tape, losses and Adam.
//! - [`envs`]: deterministic cartpole, acrobot and mountain car simulators.
//! - [`experts`]: scripted controllers and demonstration datasets.
//! - [`latent_policy`]: offline learning of a latent forward model and latent prior.
//! - [`remap`]: grounding latent actions to real actions through interaction.
//! - [`baselines`]: behavioral cloning and behavioral cloning from observation.
//! - [`harness`]: experiment orchestration, learning curves and CLI plumbing.

pub mod baselines;
pub mod checkpoint;
pub mod envs;
pub mod error;
pub mod experts;
pub mod harness;
pub mod latent_policy;
pub mod nn;
pub mod remap;
pub mod seed;

pub use error::{Error, Result};
