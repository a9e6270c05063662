//! Multi-modal pedestrian trajectory forecasting by denoising diffusion over
//! per-timestep bivariate Gaussian statistics.

pub mod cli;
pub mod data;
pub mod diffusion;
pub mod distribution;
pub mod error;
pub mod guidance;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
