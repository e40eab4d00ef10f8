//! Simulation, learning and exploration components for training a
//! depth-camera UAV to avoid obstacles and people with a dueling double
//! deep Q-network.
//!
//! The crate is organized bottom-up:
//!
//! - [`worldsim`]: kinematic world, collisions and the ray-cast depth camera
//! - [`perception`]: depth augmentation and the per-step reward
//! - [`nn`]: dense networks, backpropagation, SGD/Adam and binary weights
//! - [`qpolicy`]: dueling Q-network, online/target pair, TD learning
//! - [`memory`]: FIFO replay with rank-based prioritized sampling
//! - [`gmm`]: state embeddings and a regularized Gaussian mixture
//! - [`explore`]: epsilon-greedy, convergence and guidance exploration
//! - [`trainer`]: the episode loop, experiment driver and block metrics

pub mod config;
pub mod error;
pub mod explore;
pub mod gmm;
pub mod memory;
pub mod nn;
pub mod perception;
pub mod qpolicy;
pub mod trainer;
pub mod worldsim;

pub use error::{Error, Result};
