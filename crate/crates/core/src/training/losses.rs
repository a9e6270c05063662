use rand::Rng;

use crate::diffusion::{Denoiser, Schedule};
use crate::distribution::{log_pdf_var, STAT_CHANNELS};
use crate::error::{Error, Result};
use crate::model::{Batch, Model};
use crate::numerics::{Float, Tape, Tensor, Var};

use crate::diffusion::standard_normals as normals;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub diffusion: f64,
    pub likelihood: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            diffusion: 1.0,
            likelihood: 1.0,
            consistency: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.diffusion, self.likelihood, self.consistency];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || w.iter().all(|&v| v == 0.0) {
            return Err(Error::Config(format!("loss weights must be non-negative and not all zero: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub diffusion: f64,
    pub likelihood: f64,
    pub consistency: f64,
}

/// Diffusion step per row and the noise to add, drawn once per batch.
/// All pedestrians of a window share one step, uniform on the sub-sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionDraw {
    pub steps: Vec<usize>,
    pub eps: Tensor<f32>,
}

pub fn draw_diffusion<R: Rng + ?Sized>(rng: &mut R, batch: &Batch, sched: &Schedule) -> Result<DiffusionDraw> {
    let window_steps: Vec<usize> = (0..batch.n_windows)
        .map(|_| sched.tau[rng.random_range(0..sched.tau.len())])
        .collect();
    let steps = batch.window_of.iter().map(|&w| window_steps[w]).collect();
    let horizon = batch.future.shape()[1];
    let n = batch.rows() * horizon * STAT_CHANNELS;
    Ok(DiffusionDraw {
        steps,
        eps: Tensor::new(vec![batch.rows(), horizon, STAT_CHANNELS], normals(rng, n))?,
    })
}

/// Mean squared error between predicted and drawn noise, per coordinate.
/// `predict` maps the noisy state to the noise estimate.
pub fn loss_diffusion_with<T: Float, F>(
    tape: &Tape<'_, T>,
    y0: Var,
    draw: &DiffusionDraw,
    sched: &Schedule,
    predict: F,
) -> Result<Var>
where
    F: FnOnce(Var) -> Result<Var>,
{
    let shape = tape.shape(y0);
    if shape != draw.eps.shape() || shape[0] != draw.steps.len() {
        return Err(Error::shape("loss_diffusion", format!("{shape:?} vs {:?}", draw.eps.shape())));
    }
    let per_row = shape[1..].iter().product::<usize>();
    let coef = |f: fn(f64) -> f64| -> Result<Tensor<f32>> {
        let data = draw
            .steps
            .iter()
            .flat_map(|&k| std::iter::repeat_n(f(sched.alpha[k]) as f32, per_row))
            .collect();
        Tensor::new(shape.clone(), data)
    };
    let signal = tape.mul(y0, tape.constant(&coef(|a| a.sqrt())?))?;
    let noise = tape.constant(&coef(|a| (1.0 - a).sqrt())?);
    let eps = tape.constant(&draw.eps);
    let noisy = tape.add(signal, tape.mul(noise, eps)?)?;
    let pred = predict(noisy)?;
    tape.mean(tape.square(tape.sub(pred, eps)?)?)
}

pub fn loss_diffusion<T: Float>(
    tape: &Tape<'_, T>,
    denoiser: &Denoiser,
    y0: Var,
    guidance: Var,
    draw: &DiffusionDraw,
    sched: &Schedule,
) -> Result<Var> {
    loss_diffusion_with(tape, y0, draw, sched, |noisy| {
        denoiser.forward(tape, noisy, &draw.steps, &sched.alpha, guidance)
    })
}

/// Negative log-likelihood summed over pedestrians and steps, averaged over
/// windows.
pub fn loss_likelihood<T: Float>(tape: &Tape<'_, T>, future: Var, raw: Var, n_windows: usize) -> Result<Var> {
    let (fs, rs) = (tape.shape(future), tape.shape(raw));
    if fs.len() != 3 || rs.len() != 3 || fs[..2] != rs[..2] || fs[2] != 2 || rs[2] != STAT_CHANNELS {
        return Err(Error::shape("loss_likelihood", format!("{fs:?} vs {rs:?}")));
    }
    let lp = log_pdf_var(tape, future, raw)?;
    tape.scale(tape.sum(lp)?, -1.0 / n_windows.max(1) as f64)
}

/// Squared error of the first predicted mean, averaged over pedestrians.
pub fn loss_consistency<T: Float>(tape: &Tape<'_, T>, future: Var, raw: Var) -> Result<Var> {
    let (fs, rs) = (tape.shape(future), tape.shape(raw));
    if fs.len() != 3 || rs.len() != 3 || fs[..2] != rs[..2] {
        return Err(Error::shape("loss_consistency", format!("{fs:?} vs {rs:?}")));
    }
    let first = tape.slice(future, 1, 0, 1)?;
    let mean = tape.slice(tape.slice(raw, 1, 0, 1)?, 2, 0, 2)?;
    let sq = tape.sum(tape.square(tape.sub(first, mean)?)?)?;
    tape.scale(sq, 1.0 / fs[0] as f64)
}

pub struct Objective {
    pub total: Var,
    pub diffusion: Var,
    pub likelihood: Var,
    pub consistency: Var,
}

impl Objective {
    pub fn report<T: Float>(&self, tape: &Tape<'_, T>) -> LossReport {
        let v = |x: Var| tape.value(x).item().as_f64();
        LossReport {
            total: v(self.total),
            diffusion: v(self.diffusion),
            likelihood: v(self.likelihood),
            consistency: v(self.consistency),
        }
    }
}

/// λ-weighted sum of the three terms for one batch.
pub fn objective<T: Float>(
    tape: &Tape<'_, T>,
    model: &Model,
    batch: &Batch,
    weights: &LossWeights,
    draw: &DiffusionDraw,
) -> Result<Objective> {
    let future = tape.constant(&batch.future);
    let raw = model.converter.forward(tape, future)?;
    let y0 = model.norm.normalize_var(tape, raw)?;
    let guidance = model.guidance_var(tape, batch)?;
    let diffusion = loss_diffusion(tape, &model.denoiser, y0, guidance, draw, &model.schedule)?;
    let likelihood = loss_likelihood(tape, future, raw, batch.n_windows)?;
    let consistency = loss_consistency(tape, future, raw)?;
    let total = tape.add(
        tape.add(
            tape.scale(diffusion, weights.diffusion)?,
            tape.scale(likelihood, weights.likelihood)?,
        )?,
        tape.scale(consistency, weights.consistency)?,
    )?;
    Ok(Objective {
        total,
        diffusion,
        likelihood,
        consistency,
    })
}
