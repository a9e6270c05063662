use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{Float, Tape, Tensor, Var};

pub const SIGMA_FLOOR: f64 = 1e-4;
pub const RHO_CAP: f64 = 0.99;
/// Raw statistic channels: mu1, mu2, sigma1, sigma2, rho.
pub const STAT_CHANNELS: usize = 5;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Bivariate normal over one displacement step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian5 {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
}

impl Gaussian5 {
    pub fn new(mu1: f64, mu2: f64, sigma1: f64, sigma2: f64, rho: f64) -> Result<Self> {
        let g = Gaussian5 { mu1, mu2, sigma1, sigma2, rho };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu1, self.mu2, self.sigma1, self.sigma2, self.rho]
            .iter()
            .all(|v| v.is_finite());
        if finite && self.sigma1 > 0.0 && self.sigma2 > 0.0 && self.rho.abs() <= RHO_CAP {
            Ok(())
        } else {
            Err(Error::Invalid(format!("not a valid bivariate gaussian: {self:?}")))
        }
    }

    /// Constraint map from one raw 5-vector.
    pub fn from_raw(raw: &[f32]) -> Self {
        Gaussian5 {
            mu1: raw[0] as f64,
            mu2: raw[1] as f64,
            sigma1: softplus(raw[2] as f64) + SIGMA_FLOOR,
            sigma2: softplus(raw[3] as f64) + SIGMA_FLOOR,
            rho: RHO_CAP * (raw[4] as f64).tanh(),
        }
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let c = self.rho * self.sigma1 * self.sigma2;
        [[self.sigma1 * self.sigma1, c], [c, self.sigma2 * self.sigma2]]
    }

    pub fn determinant(&self) -> f64 {
        (self.sigma1 * self.sigma2).powi(2) * (1.0 - self.rho * self.rho)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of `softplus(x) + SIGMA_FLOOR`, for building raw values from sigmas.
pub fn raw_from_sigma(sigma: f64) -> f64 {
    let s = (sigma - SIGMA_FLOOR).max(1e-12);
    if s > 30.0 {
        s
    } else {
        s.exp_m1().ln()
    }
}

pub fn log_pdf(y: [f64; 2], g: &Gaussian5) -> Result<f64> {
    g.validate()?;
    let d1 = (y[0] - g.mu1) / g.sigma1;
    let d2 = (y[1] - g.mu2) / g.sigma2;
    let one_minus = 1.0 - g.rho * g.rho;
    let z = d1 * d1 + d2 * d2 - 2.0 * g.rho * d1 * d2;
    Ok(-LN_2PI - (g.sigma1 * g.sigma2).ln() - 0.5 * one_minus.ln() - z / (2.0 * one_minus))
}

/// One draw through the 2x2 Cholesky factor.
pub fn sample_location<R: Rng + ?Sized>(g: &Gaussian5, rng: &mut R) -> [f64; 2] {
    let u: f64 = rng.sample(StandardNormal);
    let v: f64 = rng.sample(StandardNormal);
    [
        g.mu1 + g.sigma1 * u,
        g.mu2 + g.sigma2 * (g.rho * u + (1.0 - g.rho * g.rho).sqrt() * v),
    ]
}

/// Raw statistics `[N, T', 5]` with their constrained view.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsField {
    pub raw: Tensor<f32>,
}

impl StatsField {
    pub fn new(raw: Tensor<f32>) -> Result<Self> {
        if raw.rank() != 3 || raw.shape()[2] != STAT_CHANNELS {
            return Err(Error::shape("stats_field", format!("expected [N, T', 5], got {:?}", raw.shape())));
        }
        Ok(StatsField { raw })
    }

    pub fn num_peds(&self) -> usize {
        self.raw.shape()[0]
    }

    pub fn horizon(&self) -> usize {
        self.raw.shape()[1]
    }

    pub fn gaussian(&self, n: usize, t: usize) -> Gaussian5 {
        let i = (n * self.horizon() + t) * STAT_CHANNELS;
        Gaussian5::from_raw(&self.raw.data()[i..i + STAT_CHANNELS])
    }

    /// Mean displacement row of pedestrian `n`, flat `[T', 2]`.
    pub fn mean_steps(&self, n: usize) -> Vec<f32> {
        (0..self.horizon())
            .flat_map(|t| {
                let i = (n * self.horizon() + t) * STAT_CHANNELS;
                [self.raw.data()[i], self.raw.data()[i + 1]]
            })
            .collect()
    }

    /// Sum of `log_pdf(own mean; own gaussian)` over all entries.
    pub fn self_likelihood(&self) -> f64 {
        let mut total = 0.0;
        for n in 0..self.num_peds() {
            for t in 0..self.horizon() {
                let g = self.gaussian(n, t);
                total += log_pdf([g.mu1, g.mu2], &g).unwrap_or(f64::NEG_INFINITY);
            }
        }
        total
    }
}

/// Constrained components of raw statistics on a tape.
pub struct ConstrainedVars {
    /// [.., 2]
    pub mean: Var,
    pub sigma1: Var,
    pub sigma2: Var,
    pub rho: Var,
}

pub fn constrain<T: Float>(tape: &Tape<'_, T>, raw: Var) -> Result<ConstrainedVars> {
    let axis = tape.shape(raw).len() - 1;
    let sigma = |c: usize| -> Result<Var> {
        let s = tape.softplus(tape.slice(raw, axis, c, c + 1)?)?;
        tape.add_scalar(s, SIGMA_FLOOR)
    };
    let rho = tape.scale(tape.tanh(tape.slice(raw, axis, 4, 5)?)?, RHO_CAP)?;
    Ok(ConstrainedVars {
        mean: tape.slice(raw, axis, 0, 2)?,
        sigma1: sigma(2)?,
        sigma2: sigma(3)?,
        rho,
    })
}

/// Element-wise log density of `y [.., 2]` under raw statistics `[.., 5]`;
/// returns `[.., 1]`.
pub fn log_pdf_var<T: Float>(tape: &Tape<'_, T>, y: Var, raw: Var) -> Result<Var> {
    let axis = tape.shape(raw).len() - 1;
    let c = constrain(tape, raw)?;
    let diff = tape.sub(y, c.mean)?;
    let d1 = tape.div(tape.slice(diff, axis, 0, 1)?, c.sigma1)?;
    let d2 = tape.div(tape.slice(diff, axis, 1, 2)?, c.sigma2)?;
    let rho_d = tape.mul(tape.mul(c.rho, d1)?, d2)?;
    let z = tape.sub(tape.add(tape.square(d1)?, tape.square(d2)?)?, tape.scale(rho_d, 2.0)?)?;
    let one_minus = tape.add_scalar(tape.scale(tape.square(c.rho)?, -1.0)?, 1.0)?;
    let log_norm = tape.add(
        tape.add(tape.log(c.sigma1)?, tape.log(c.sigma2)?)?,
        tape.scale(tape.log(one_minus)?, 0.5)?,
    )?;
    let quad = tape.div(z, tape.scale(one_minus, 2.0)?)?;
    let neg = tape.add(log_norm, quad)?;
    tape.add_scalar(tape.scale(neg, -1.0)?, -LN_2PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_values() {
        let g = Gaussian5::new(0.3, -0.2, 1.0, 1.0, 0.0).unwrap();
        assert!((log_pdf([0.3, -0.2], &g).unwrap() + 1.837877).abs() < 1e-6);
        let g = Gaussian5::new(0.0, 0.0, 1.0, 1.0, 0.5).unwrap();
        assert!((log_pdf([0.0, 0.0], &g).unwrap() + 1.694036).abs() < 1e-6);
    }

    #[test]
    fn rejects_invalid() {
        assert!(Gaussian5::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(Gaussian5::new(0.0, 0.0, 1.0, 1.0, 0.995).is_err());
        let bad = Gaussian5 { mu1: 0.0, mu2: 0.0, sigma1: -1.0, sigma2: 1.0, rho: 0.0 };
        assert!(log_pdf([0.0, 0.0], &bad).is_err());
    }

    #[test]
    fn constraint_map_extremes() {
        for raw in [[0.0f32, 0.0, -80.0, -80.0, 50.0], [1e3, -1e3, 80.0, 0.0, -50.0]] {
            let g = Gaussian5::from_raw(&raw);
            g.validate().unwrap();
            assert!(g.determinant() > 0.0);
        }
        assert!((softplus(raw_from_sigma(2.0)) + SIGMA_FLOOR - 2.0).abs() < 1e-12);
        let g = Gaussian5::from_raw(&[0.0, 0.0, raw_from_sigma(0.7) as f32, 0.0, 0.0]);
        assert!((g.sigma1 - 0.7).abs() < 1e-6);
    }

    #[test]
    fn floor_sigma_samples_hug_mean() {
        let g = Gaussian5::new(1.0, 2.0, SIGMA_FLOOR, SIGMA_FLOOR, -0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = sample_location(&g, &mut rng);
            assert!((s[0] - 1.0).abs() < 1e-3 && (s[1] - 2.0).abs() < 1e-3);
        }
    }

    #[test]
    fn tape_log_pdf_matches_scalar() {
        let raw = [0.2f32, -0.1, 0.3, -0.4, 0.7, 1.0, 0.5, -1.2, 0.1, -0.3];
        let y = [0.5f32, 0.2, -0.4, 1.1];
        let tape: Tape<'_, f64> = Tape::detached();
        let rv = tape.constant(&Tensor::new(vec![2, 5], raw.to_vec()).unwrap());
        let yv = tape.constant(&Tensor::new(vec![2, 2], y.to_vec()).unwrap());
        let lp = tape.value(log_pdf_var(&tape, yv, rv).unwrap());
        for i in 0..2 {
            let g = Gaussian5::from_raw(&raw[i * 5..i * 5 + 5]);
            let expect = log_pdf([y[2 * i] as f64, y[2 * i + 1] as f64], &g).unwrap();
            assert!((lp.data()[i] - expect).abs() < 1e-9);
        }
    }
}
