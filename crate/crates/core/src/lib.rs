//! Single-timescale actor-critic with an evolving reward on finite MDPs.
//!
//! The crate is organised bottom-up: [`mdp`] holds the environment, exact
//! visitation and soft values; [`policy`] the tabular softmax actor;
//! [`reward`] the reward parameterisation and the reward oracles;
//! [`oracle`] the exact TD system and policy gradient; [`actor_critic`]
//! the sampled algorithm; [`metrics`] the finite-horizon summaries; and
//! [`experiment`] the config-driven runner behind the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actor_critic;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod reward;
pub mod verify;

pub use error::{Error, Result};
