//! Quality-diversity imitation learning at desk scale: a toy walker
//! environment, a MAP-Elites archive, adversarial reward models trained in
//! a Wasserstein autoencoder latent space, vectorized PPO gradient
//! estimation and an xNES-driven outer loop.

pub mod archive;
pub mod config;
pub mod demos;
pub mod env;
pub mod error;
pub mod explorer;
pub mod nn;
pub mod qd;
pub mod reward;
pub mod vppo;
pub mod xnes;
pub mod rng;

pub use error::{Error, Result};
