use super::gaussian::STAT_CHANNELS;
use crate::error::{Error, Result};
use crate::numerics::{Float, Tape, Tensor, Var};

/// Per-channel affine normalisation of raw statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: [f32; STAT_CHANNELS],
    pub scale: [f32; STAT_CHANNELS],
}

/// Smallest scale `from_samples` will produce for a near-constant channel.
pub const MIN_FITTED_SCALE: f32 = 1e-3;

impl NormStats {
    pub fn new(mean: [f32; STAT_CHANNELS], scale: [f32; STAT_CHANNELS]) -> Result<Self> {
        if scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Invalid(format!("normalisation scale must be positive, got {scale:?}")));
        }
        Ok(NormStats { mean, scale })
    }

    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; STAT_CHANNELS],
            scale: [1.0; STAT_CHANNELS],
        }
    }

    /// Fits mean and standard deviation per channel over any tensor whose
    /// last axis has five channels.
    pub fn from_samples(raw: &[&Tensor<f32>]) -> Result<Self> {
        let mut sum = [0f64; STAT_CHANNELS];
        let mut sq = [0f64; STAT_CHANNELS];
        let mut count = 0usize;
        for t in raw {
            if t.shape().last() != Some(&STAT_CHANNELS) {
                return Err(Error::shape("norm_stats", format!("last axis must be 5, got {:?}", t.shape())));
            }
            for row in t.data().chunks_exact(STAT_CHANNELS) {
                for c in 0..STAT_CHANNELS {
                    sum[c] += row[c] as f64;
                    sq[c] += (row[c] as f64).powi(2);
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Data("no samples to fit normalisation".into()));
        }
        let mut mean = [0f32; STAT_CHANNELS];
        let mut scale = [0f32; STAT_CHANNELS];
        for c in 0..STAT_CHANNELS {
            let m = sum[c] / count as f64;
            let var = (sq[c] / count as f64 - m * m).max(0.0);
            mean[c] = m as f32;
            scale[c] = (var.sqrt() as f32).max(MIN_FITTED_SCALE);
        }
        Self::new(mean, scale)
    }

    pub fn normalize(&self, raw: &Tensor<f32>) -> Tensor<f32> {
        self.map(raw, |v, c| (v - self.mean[c]) / self.scale[c])
    }

    pub fn denormalize(&self, x: &Tensor<f32>) -> Tensor<f32> {
        self.map(x, |v, c| v * self.scale[c] + self.mean[c])
    }

    fn map(&self, t: &Tensor<f32>, f: impl Fn(f32, usize) -> f32) -> Tensor<f32> {
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = f(*v, i % STAT_CHANNELS);
        }
        out
    }

    pub fn normalize_var<T: Float>(&self, tape: &Tape<'_, T>, raw: Var) -> Result<Var> {
        let mean = tape.constant(&Tensor::new(vec![STAT_CHANNELS], self.mean.to_vec())?);
        let scale = tape.constant(&Tensor::new(vec![STAT_CHANNELS], self.scale.to_vec())?);
        tape.div(tape.sub(raw, mean)?, scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor<f32> {
        let data: Vec<f32> = (0..200).map(|i| ((i * 37 % 101) as f32 * 0.13).sin() * (1 + i % 5) as f32 + (i % 5) as f32).collect();
        Tensor::new(vec![4, 10, 5], data).unwrap()
    }

    #[test]
    fn identity_leaves_values() {
        let x = sample();
        assert_eq!(NormStats::identity().normalize(&x), x);
    }

    #[test]
    fn round_trip_and_moments() {
        let x = sample();
        let stats = NormStats::from_samples(&[&x]).unwrap();
        let z = stats.normalize(&x);
        let back = stats.denormalize(&z);
        let err = x.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err < 1e-5, "{err}");
        for c in 0..5 {
            let vals: Vec<f64> = z.data().iter().skip(c).step_by(5).map(|&v| v as f64).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 0.05 && (v - 1.0).abs() < 0.05, "channel {c}: {m} {v}");
        }
    }

    #[test]
    fn zero_scale_rejected() {
        assert!(NormStats::new([0.0; 5], [1.0, 1.0, 0.0, 1.0, 1.0]).is_err());
    }
}
