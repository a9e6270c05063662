use rand::Rng;

use super::ops::Padding;
use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{Float, Tensor};
use crate::error::Result;

/// Affine map over the last axis: `x W + b`, `W` stored `[in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (input as f32).sqrt();
        Ok(Linear {
            weight: store.add_uniform(format!("{name}.weight"), &[input, output], bound, rng)?,
            bias: store.add_uniform(format!("{name}.bias"), &[output], bound, rng)?,
        })
    }

    /// Same as [`Linear::new`] but with zero-initialised weights and bias.
    pub fn zeroed(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Linear {
            weight: store.add(format!("{name}.weight"), Tensor::zeros(vec![input, output]))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![output]))?,
        })
    }

    pub fn forward<T: Float>(&self, tape: &Tape<'_, T>, x: Var) -> Result<Var> {
        let h = tape.matmul(x, tape.param(self.weight)?)?;
        tape.add(h, tape.param(self.bias)?)
    }
}

/// Temporal convolution over `[B, Cin, L]` with bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub padding: Padding,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / ((input * kernel) as f32).sqrt();
        Ok(Conv1d {
            weight: store.add_uniform(format!("{name}.weight"), &[output, input, kernel], bound, rng)?,
            bias: store.add_uniform(format!("{name}.bias"), &[output], bound, rng)?,
            padding,
        })
    }

    pub fn forward<T: Float>(&self, tape: &Tape<'_, T>, x: Var) -> Result<Var> {
        tape.conv1d(
            x,
            tape.param(self.weight)?,
            Some(tape.param(self.bias)?),
            self.padding,
        )
    }
}
