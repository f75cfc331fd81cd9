//! Spiking diffusion policy: LIF neurons with learnable channel-wise
//! thresholds inside a DDPM action denoiser, plus a toy pushing benchmark and
//! a synaptic-operation energy estimator.

pub mod cli;
pub mod codec;
pub mod diffusion;
pub mod energy;
pub mod env;
pub mod error;
pub mod io;
pub mod lif;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
