//! Bivariate Gaussian statistics: converter, density, sampling, normalisation.

mod converter;
mod gaussian;
mod norm;

pub use converter::{convert_trajectory, Converter};
pub use gaussian::{
    constrain, log_pdf, log_pdf_var, raw_from_sigma, sample_location, ConstrainedVars, Gaussian5, StatsField,
    RHO_CAP, SIGMA_FLOOR, STAT_CHANNELS,
};
pub use norm::{NormStats, MIN_FITTED_SCALE};
