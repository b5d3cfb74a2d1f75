//! Multi-agent relay placement for mmWave vehicular networks.
//!
//! Vehicles on a gridded highway form relay chains over line-of-sight
//! mmWave links. Controllable vehicles learn with asynchronous advantage
//! actor-critic to move so that the chains, and with them the reach of
//! roadside units, get longer.

pub mod a3c;
pub mod baselines;
pub mod config;
pub mod connectivity;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod modelfile;
pub mod policy;
pub mod svg;
pub mod world;

pub use error::{Error, Result};
