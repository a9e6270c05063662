//! Joint objective and the training loop.

mod fit;
mod losses;

pub use fit::{fit, fit_normalization, train_step, FitOutcome, TrainConfig, TrainState, LOG_HEADER};
pub use losses::{
    draw_diffusion, loss_consistency, loss_diffusion, loss_diffusion_with, loss_likelihood, objective,
    DiffusionDraw, LossReport, LossWeights, Objective,
};
