//! Robust multi-agent fleet balancing for electric autonomous
//! mobility-on-demand: a grid-city simulator, a constrained actor-critic
//! trainer with adversarial observation perturbation, a projection engine,
//! and an evaluation harness.

pub mod city;
pub mod config;
pub mod error;
pub mod eval;
pub mod game;
pub mod gradcheck;
pub mod neural;
pub mod projection;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
