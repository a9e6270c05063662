use rand::Rng;

use super::gaussian::{StatsField, STAT_CHANNELS};
use crate::error::{Error, Result};
use crate::numerics::{Conv1d, Float, Padding, ParamStore, Tape, Tensor, Var};

/// Two-layer temporal CNN from future displacements `[N, T', 2]` to raw
/// statistics `[N, T', 5]`.
#[derive(Clone, Copy, Debug)]
pub struct Converter {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    /// Adds the input displacement to the two mean channels.
    pub mean_skip: bool,
}

impl Converter {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        mean_skip: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Converter {
            conv1: Conv1d::new(store, &format!("{name}.conv1"), 2, hidden, 3, Padding::Same, rng)?,
            conv2: Conv1d::new(store, &format!("{name}.conv2"), hidden, STAT_CHANNELS, 3, Padding::Same, rng)?,
            mean_skip,
        })
    }

    pub fn forward<T: Float>(&self, tape: &Tape<'_, T>, future: Var) -> Result<Var> {
        let shape = tape.shape(future);
        if shape.len() != 3 || shape[2] != 2 {
            return Err(Error::shape("convert_trajectory", format!("expected [N, T', 2], got {shape:?}")));
        }
        let x = tape.transpose(future, 1, 2)?;
        let h = tape.silu(self.conv1.forward(tape, x)?)?;
        let out = tape.transpose(self.conv2.forward(tape, h)?, 1, 2)?;
        if !self.mean_skip {
            return Ok(out);
        }
        let mean = tape.add(tape.slice(out, 2, 0, 2)?, future)?;
        tape.concat(&[mean, tape.slice(out, 2, 2, STAT_CHANNELS)?], 2)
    }
}

/// Convenience wrapper for evaluation outside training.
pub fn convert_trajectory(conv: &Converter, store: &ParamStore, future: &Tensor<f32>) -> Result<StatsField> {
    let tape: Tape = Tape::inference(store);
    let y = tape.constant(future);
    let raw = conv.forward(&tape, y)?;
    StatsField::new((*tape.value(raw)).clone())
}
