//! Learning pipeline on top of `visracer-core`.
//!
//! Phase 1 fits an image-to-observation regressor and keeps its 64-wide
//! bottleneck as the embedding. Phase 2 trains a soft actor-critic policy
//! on that embedding plus the dedicated features, with the reward, trial
//! protocol, frame delay and two-lap evaluation in [`env`] and [`train`].

// `!(x > 0.0)` is the NaN-rejecting form of the validation checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod delay;
pub mod env;
pub mod phase1;
pub mod sac;
pub mod seed;
pub mod toy;
pub mod train;

pub use delay::DelayStream;

pub use phase1::{Phase1Config, RegressionSample, ReprNetwork};

pub use env::{compute_reward, EnvSetup, ObsMode, RacingEnv};
pub use sac::{ReplayBuffer, SacAgent, SacConfig, Transition};
pub use train::{evaluate_policy, train_policy, LapReport};
