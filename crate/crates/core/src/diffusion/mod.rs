//! Noise schedule, conditional noise predictor and the reverse sampler.

mod denoiser;
mod sampler;
mod schedule;

pub use denoiser::{step_embedding, Backbone, Denoiser, NoiseParam};
pub use sampler::{posterior_step, posterior_with_noise, reconstruct_y0, reverse_chain, reverse_generate,
    standard_normals,
};
pub use schedule::{build_schedule, forward_marginal, GammaMode, Schedule};
