use rand::Rng;

use crate::distribution::STAT_CHANNELS;
use crate::error::{Error, Result};
use crate::numerics::{Conv1d, Float, Linear, Padding, ParamStore, Tape, Tensor, Var};

/// Sinusoidal embedding of integer steps, `[len(steps), dim]`.
pub fn step_embedding(steps: &[usize], dim: usize) -> Tensor<f32> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(steps.len() * dim);
    for &k in steps {
        for i in 0..half {
            let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
            data.push((k as f64 * freq).sin() as f32);
        }
        for i in 0..half {
            let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
            data.push((k as f64 * freq).cos() as f32);
        }
        if dim % 2 == 1 {
            data.push(0.0);
        }
    }
    Tensor::new(vec![steps.len().max(1), dim], data).unwrap_or_else(|_| Tensor::zeros(vec![1, dim]))
}

/// How the network output becomes a noise estimate at step k.
///
/// `Eps` returns it as is. `Skip` adds `sqrt(1 - alpha) * y_k`, the exact
/// predictor for standard-normal data. `Velocity` additionally scales the
/// network output by `sqrt(alpha)`, so it is trained on the velocity
/// `sqrt(alpha) * eps - sqrt(1 - alpha) * y_0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoiseParam {
    #[default]
    Eps,
    Skip,
    Velocity,
}

impl std::str::FromStr for NoiseParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eps" => Ok(NoiseParam::Eps),
            "skip" => Ok(NoiseParam::Skip),
            "v" | "velocity" => Ok(NoiseParam::Velocity),
            other => Err(Error::Config(format!("unknown noise parameterisation {other:?}"))),
        }
    }
}

impl std::fmt::Display for NoiseParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseParam::Eps => "eps",
            NoiseParam::Skip => "skip",
            NoiseParam::Velocity => "v",
        })
    }
}

/// Network body shared by every noise parameterisation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Backbone {
    /// Residual MLP over the flattened `T' x 5` state.
    #[default]
    Mlp,
    /// Residual temporal convolutions over `T'`, with the step embedding and
    /// guidance projected into every block.
    Conv,
}

impl std::str::FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Backbone::Mlp),
            "conv" => Ok(Backbone::Conv),
            other => Err(Error::Config(format!("unknown denoiser backbone {other:?}"))),
        }
    }
}

impl std::fmt::Display for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backbone::Mlp => "mlp",
            Backbone::Conv => "conv",
        })
    }
}

#[derive(Clone, Debug)]
enum Layers {
    Mlp {
        input: Linear,
        blocks: Vec<(Linear, Linear)>,
        output: Linear,
    },
    Conv {
        input: Conv1d,
        cond: Vec<Linear>,
        blocks: Vec<(Conv1d, Conv1d)>,
        output: Conv1d,
    },
}

/// Per-pedestrian network predicting the noise in a diffusion state.
#[derive(Clone, Debug)]
pub struct Denoiser {
    layers: Layers,
    pub horizon: usize,
    pub embed_dim: usize,
    pub guidance_dim: usize,
    pub param: NoiseParam,
}

impl Denoiser {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        backbone: Backbone,
        horizon: usize,
        embed_dim: usize,
        guidance_dim: usize,
        width: usize,
        n_blocks: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = match backbone {
            Backbone::Mlp => {
                let state = horizon * STAT_CHANNELS;
                let input = Linear::new(store, &format!("{name}.input"), state + embed_dim + guidance_dim, width, rng)?;
                let blocks = (0..n_blocks)
                    .map(|b| {
                        Ok((
                            Linear::new(store, &format!("{name}.block{b}.fc1"), width, width, rng)?,
                            Linear::new(store, &format!("{name}.block{b}.fc2"), width, width, rng)?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let output = Linear::new(store, &format!("{name}.output"), width, state, rng)?;
                Layers::Mlp { input, blocks, output }
            }
            Backbone::Conv => {
                let conv = |store: &mut ParamStore, n: String, i, o, rng: &mut R| {
                    Conv1d::new(store, &n, i, o, 3, Padding::Same, rng)
                };
                let input = conv(store, format!("{name}.input"), STAT_CHANNELS, width, rng)?;
                let mut cond = Vec::with_capacity(n_blocks);
                let mut blocks = Vec::with_capacity(n_blocks);
                for b in 0..n_blocks {
                    cond.push(Linear::new(store, &format!("{name}.block{b}.cond"), embed_dim + guidance_dim, width, rng)?);
                    blocks.push((
                        conv(store, format!("{name}.block{b}.conv1"), width, width, rng)?,
                        conv(store, format!("{name}.block{b}.conv2"), width, width, rng)?,
                    ));
                }
                let output = conv(store, format!("{name}.output"), width, STAT_CHANNELS, rng)?;
                Layers::Conv { input, cond, blocks, output }
            }
        };
        Ok(Denoiser {
            layers,
            horizon,
            embed_dim,
            guidance_dim,
            param: NoiseParam::Eps,
        })
    }

    pub fn backbone(&self) -> Backbone {
        match self.layers {
            Layers::Mlp { .. } => Backbone::Mlp,
            Layers::Conv { .. } => Backbone::Conv,
        }
    }

    /// `state [P, T', 5]`, one step per row, `guidance [P, G]`. `alpha` is the
    /// schedule's cumulative product indexed by step.
    pub fn forward<T: Float>(
        &self,
        tape: &Tape<'_, T>,
        state: Var,
        steps: &[usize],
        alpha: &[f64],
        guidance: Var,
    ) -> Result<Var> {
        let shape = tape.shape(state);
        let p = shape[0];
        if shape != [p, self.horizon, STAT_CHANNELS] || steps.len() != p {
            return Err(Error::shape(
                "denoiser",
                format!("state {shape:?} with {} steps", steps.len()),
            ));
        }
        if tape.shape(guidance) != [p, self.guidance_dim] {
            return Err(Error::shape(
                "denoiser",
                format!("guidance {:?} for {p} rows", tape.shape(guidance)),
            ));
        }
        let emb = tape.constant(&step_embedding(steps, self.embed_dim));
        let out = match &self.layers {
            Layers::Mlp { input, blocks, output } => {
                let flat = tape.reshape(state, &[p, self.horizon * STAT_CHANNELS])?;
                let x = tape.concat(&[flat, emb, guidance], 1)?;
                let mut h = input.forward(tape, x)?;
                for (fc1, fc2) in blocks {
                    let inner = fc1.forward(tape, tape.silu(h)?)?;
                    let delta = fc2.forward(tape, tape.silu(inner)?)?;
                    h = tape.add(h, delta)?;
                }
                let out = output.forward(tape, tape.silu(h)?)?;
                tape.reshape(out, &[p, self.horizon, STAT_CHANNELS])?
            }
            Layers::Conv { input, cond, blocks, output } => {
                let context = tape.concat(&[emb, guidance], 1)?;
                let mut h = input.forward(tape, tape.transpose(state, 1, 2)?)?;
                let width = tape.shape(h)[1];
                for (proj, (c1, c2)) in cond.iter().zip(blocks) {
                    // one conditioning vector per row, repeated along time
                    let c = tape.reshape(proj.forward(tape, context)?, &[p, width, 1])?;
                    let c = tape.concat(&vec![c; self.horizon], 2)?;
                    let inner = tape.add(c1.forward(tape, tape.silu(h)?)?, c)?;
                    h = tape.add(h, c2.forward(tape, tape.silu(inner)?)?)?;
                }
                tape.transpose(output.forward(tape, tape.silu(h)?)?, 1, 2)?
            }
        };
        if self.param == NoiseParam::Eps {
            return Ok(out);
        }
        if let Some(&k) = steps.iter().find(|&&k| k >= alpha.len()) {
            return Err(Error::Invalid(format!("step {k} outside the schedule")));
        }
        let per_row = self.horizon * STAT_CHANNELS;
        let coef = |f: &dyn Fn(f64) -> f64| -> Result<Tensor<f32>> {
            let data = steps
                .iter()
                .flat_map(|&k| std::iter::repeat_n(f(alpha[k]) as f32, per_row))
                .collect();
            Tensor::new(vec![p, self.horizon, STAT_CHANNELS], data)
        };
        let skip = tape.mul(state, tape.constant(&coef(&|a| (1.0 - a).sqrt())?))?;
        let out = match self.param {
            NoiseParam::Velocity => tape.mul(out, tape.constant(&coef(&|a| a.sqrt())?))?,
            _ => out,
        };
        tape.add(skip, out)
    }
}
