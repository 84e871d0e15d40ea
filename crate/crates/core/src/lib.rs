//! Core library of the wave-packet emulation workbench: Schrödinger
//! simulation, windowed curriculum construction, a small reverse-mode tensor
//! engine, the four benchmark architectures with their training loop,
//! window-based recurrent rollout, and evaluation/attribution analysis.

pub mod analysis;
pub mod autodiff;
pub mod curriculum;
pub mod error;
pub mod models;
pub mod rollout;
pub mod sim;

pub use error::{CoreError, Result};
pub use sim::{GaussianPacketSpec, PotentialSpec, PropagationMethod, SimGrid, Trajectory};
