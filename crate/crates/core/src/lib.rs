//! Dead-end discovery on offline decision data.
//!
//! The crate splits into an exact side, which works on a known
//! [`mdp::TabularMdp`] (value iteration, special-state fixed points, outcome
//! probabilities, theorem checks), and a learned side, which estimates the
//! same dual value functions from trajectories (tabular Q-learning, fitted
//! double-Q networks over a learned history embedding). [`engine`] turns
//! either kind of value into state/treatment flags and secured policies, and
//! [`analysis`] aggregates flags over a cohort.
//!
//! Everything here is `no_std` + `alloc`; file formats and the command line
//! live in the companion `ded` crate.
#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod mdp;
pub mod nn;
pub mod engine;
pub mod learner;
pub mod lifegate;
pub mod policy;
pub mod sc;
pub mod solver;
pub mod synth;
pub mod theorem;

pub use error::{Error, Result};
