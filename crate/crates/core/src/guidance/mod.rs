//! Per-pedestrian conditioning from own history and aggregated neighbors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Conv1d, Float, Linear, Padding, ParamStore, Tape, Tensor, Var};

/// Conv / last-step / self-attention / projection pipeline over `[N, T, 2]`.
///
/// The T temporal kernels are realised as one convolution with `T * C`
/// output channels; kernel i owns channels `i*C..(i+1)*C`.
#[derive(Clone, Copy, Debug)]
pub struct TemporalEncoder {
    pub conv: Conv1d,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub proj: Linear,
    pub obs_len: usize,
    pub channels: usize,
}

impl TemporalEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        obs_len: usize,
        channels: usize,
        kernel: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let c = channels;
        Ok(TemporalEncoder {
            conv: Conv1d::new(store, &format!("{name}.conv"), 2, obs_len * c, kernel, Padding::Left, rng)?,
            query: Linear::new(store, &format!("{name}.query"), c, c, rng)?,
            key: Linear::new(store, &format!("{name}.key"), c, c, rng)?,
            value: Linear::new(store, &format!("{name}.value"), c, c, rng)?,
            proj: Linear::new(store, &format!("{name}.proj"), obs_len * c, out_dim, rng)?,
            obs_len,
            channels,
        })
    }

    pub fn forward<T: Float>(&self, tape: &Tape<'_, T>, seq: Var) -> Result<Var> {
        let shape = tape.shape(seq);
        if shape.len() != 3 || shape[1] != self.obs_len || shape[2] != 2 {
            return Err(Error::shape(
                "temporal_encoder",
                format!("expected [N, {}, 2], got {shape:?}", self.obs_len),
            ));
        }
        let n = shape[0];
        let (t, c) = (self.obs_len, self.channels);
        let maps = self.conv.forward(tape, tape.transpose(seq, 1, 2)?)?;
        let last = tape.slice(maps, 2, t - 1, t)?;
        let tokens = tape.tanh(tape.reshape(last, &[n, t, c])?)?;
        let q = self.query.forward(tape, tokens)?;
        let k = self.key.forward(tape, tokens)?;
        let v = self.value.forward(tape, tokens)?;
        let attended = tape.add(tape.attention(q, k, v)?, tokens)?;
        self.proj.forward(tape, tape.reshape(attended, &[n, t * c])?)
    }
}

/// Masked mean of neighbors' displacements per timestep, `[N, T, 2]`.
/// Rows without neighbors are zero.
pub fn aggregate_neighbors(observed: &Tensor<f32>, mask: &[bool]) -> Result<Tensor<f32>> {
    let shape = observed.shape();
    if shape.len() != 3 || shape[2] != 2 {
        return Err(Error::shape("aggregate_neighbors", format!("expected [N, T, 2], got {shape:?}")));
    }
    let (n, t) = (shape[0], shape[1]);
    if mask.len() != n * n {
        return Err(Error::shape("aggregate_neighbors", format!("mask has {} entries for N = {n}", mask.len())));
    }
    if (0..n).any(|i| mask[i * n + i]) {
        return Err(Error::Invalid("neighbor mask diagonal must be false".into()));
    }
    let obs = observed.data();
    let row = t * 2;
    let mut out = vec![0f32; n * row];
    for i in 0..n {
        let neigh: Vec<usize> = (0..n).filter(|&j| mask[i * n + j]).collect();
        if neigh.is_empty() {
            continue;
        }
        let dst = &mut out[i * row..(i + 1) * row];
        for &j in &neigh {
            for (d, s) in dst.iter_mut().zip(&obs[j * row..(j + 1) * row]) {
                *d += *s;
            }
        }
        let inv = 1.0 / neigh.len() as f32;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    Tensor::new(vec![n, t, 2], out)
}

pub fn encode_history<T: Float>(tape: &Tape<'_, T>, observed: Var, phi: &TemporalEncoder) -> Result<Var> {
    phi.forward(tape, observed)
}

/// `aggregated` comes from [`aggregate_neighbors`]; the aggregation has no
/// parameters, so callers compute it once per window.
pub fn encode_neighbors<T: Float>(tape: &Tape<'_, T>, aggregated: Var, psi: &TemporalEncoder) -> Result<Var> {
    psi.forward(tape, aggregated)
}

/// Guidance rows `[N, D_phi + D_psi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceContext {
    pub embedding: Tensor<f32>,
    pub history_dim: usize,
}

impl GuidanceContext {
    pub fn num_peds(&self) -> usize {
        self.embedding.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.embedding.shape()[1]
    }

    pub fn history_part(&self) -> Result<Tensor<f32>> {
        self.columns(0, self.history_dim)
    }

    pub fn neighbor_part(&self) -> Result<Tensor<f32>> {
        self.columns(self.history_dim, self.width())
    }

    fn columns(&self, start: usize, end: usize) -> Result<Tensor<f32>> {
        let w = self.width();
        let data = self
            .embedding
            .data()
            .chunks_exact(w)
            .flat_map(|r| r[start..end].iter().copied())
            .collect();
        Tensor::new(vec![self.num_peds(), end - start], data)
    }
}

pub fn build_guidance<T: Float>(tape: &Tape<'_, T>, history: Var, neighbors: Var) -> Result<Var> {
    let (a, b) = (tape.shape(history), tape.shape(neighbors));
    if a.len() != 2 || b.len() != 2 || a[0] != b[0] {
        return Err(Error::shape("build_guidance", format!("{a:?} vs {b:?}")));
    }
    tape.concat(&[history, neighbors], 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(store: &mut ParamStore, name: &str, c: usize, d: usize) -> TemporalEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
        TemporalEncoder::new(store, name, 8, c, 3, d, &mut rng).unwrap()
    }

    fn seq(n: usize, seed: f32) -> Tensor<f32> {
        let data = (0..n * 16).map(|i| ((i as f32 + seed) * 0.61).sin() * 0.3).collect();
        Tensor::new(vec![n, 8, 2], data).unwrap()
    }

    fn run(store: &ParamStore, enc: &TemporalEncoder, x: &Tensor<f32>) -> Tensor<f32> {
        let tape: Tape = Tape::inference(store);
        let v = tape.constant(x);
        (*tape.value(enc.forward(&tape, v).unwrap())).clone()
    }

    #[test]
    fn history_shape_and_equivariance() {
        let mut store = ParamStore::new();
        let phi = encoder(&mut store, "phi", 8, 6);
        let x = seq(3, 0.0);
        let out = run(&store, &phi, &x);
        assert_eq!(out.shape(), &[3, 6]);
        // rows 2,0,1
        let d = x.data();
        let perm = [&d[32..48], &d[0..16], &d[16..32]].concat();
        let out_p = run(&store, &phi, &Tensor::new(vec![3, 8, 2], perm).unwrap());
        assert_eq!(&out_p.data()[0..6], &out.data()[12..18]);
        assert_eq!(&out_p.data()[6..12], &out.data()[0..6]);
        let dup = [&d[0..16], &d[0..16]].concat();
        let out_d = run(&store, &phi, &Tensor::new(vec![2, 8, 2], dup).unwrap());
        assert_eq!(&out_d.data()[..6], &out_d.data()[6..]);
    }

    #[test]
    fn neighbor_aggregation_invariances() {
        let x = seq(4, 1.0);
        let mut mask = vec![false; 16];
        for j in [1, 2, 3] {
            mask[j] = true;
        }
        let agg = aggregate_neighbors(&x, &mask).unwrap();
        // relabel neighbors: swap rows 1 and 3
        let d = x.data();
        let swapped = [&d[0..16], &d[48..64], &d[32..48], &d[16..32]].concat();
        let agg_s = aggregate_neighbors(&Tensor::new(vec![4, 8, 2], swapped).unwrap(), &mask).unwrap();
        for (a, b) in agg.data()[..16].iter().zip(&agg_s.data()[..16]) {
            assert!((a - b).abs() < 1e-6);
        }
        // pedestrians 1..3 have no neighbors
        assert!(agg.data()[16..].iter().all(|&v| v == 0.0));
        // two identical neighbors vs one
        let twin = [&d[0..16], &d[16..32], &d[16..32]].concat();
        let twin_mask = [false, true, true, false, false, false, false, false, false];
        let agg_t = aggregate_neighbors(&Tensor::new(vec![3, 8, 2], twin).unwrap(), &twin_mask).unwrap();
        let one = [false, true, false, false, false, false, false, false, false];
        let agg_o = aggregate_neighbors(
            &Tensor::new(vec![3, 8, 2], [&d[0..16], &d[16..32], &d[16..32]].concat()).unwrap(),
            &one,
        )
        .unwrap();
        assert_eq!(&agg_t.data()[..16], &agg_o.data()[..16]);
        assert!(aggregate_neighbors(&x, &[true; 16]).is_err());
    }

    #[test]
    fn lonely_pedestrian_gets_zero_pipeline() {
        let mut store = ParamStore::new();
        let psi = encoder(&mut store, "psi", 4, 5);
        let x = seq(2, 2.0);
        let agg = aggregate_neighbors(&x, &[false; 4]).unwrap();
        let out = run(&store, &psi, &agg);
        let zero = run(&store, &psi, &Tensor::zeros(vec![1, 8, 2]));
        assert_eq!(&out.data()[..5], zero.data());
    }

    #[test]
    fn guidance_concat_and_slices() {
        let mut store = ParamStore::new();
        let phi = encoder(&mut store, "phi", 4, 32);
        let psi = encoder(&mut store, "psi", 4, 32);
        let x = seq(3, 0.5);
        let tape: Tape = Tape::inference(&store);
        let xv = tape.constant(&x);
        let av = tape.constant(&aggregate_neighbors(&x, &[false; 9]).unwrap());
        let h = encode_history(&tape, xv, &phi).unwrap();
        let n = encode_neighbors(&tape, av, &psi).unwrap();
        let g = build_guidance(&tape, h, n).unwrap();
        let ctx = GuidanceContext {
            embedding: (*tape.value(g)).clone(),
            history_dim: 32,
        };
        assert_eq!(ctx.width(), 64);
        assert_eq!(ctx.history_part().unwrap(), *tape.value(h));
        assert_eq!(ctx.neighbor_part().unwrap(), *tape.value(n));
        let short = tape.constant(&Tensor::zeros(vec![2, 32]));
        assert!(build_guidance(&tape, h, short).is_err());
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let phi = encoder(&mut store, "phi", 3, 4);
        let psi = encoder(&mut store, "psi", 3, 4);
        let x = seq(2, 0.25);
        let mut mask = vec![false; 4];
        mask[1] = true;
        mask[2] = true;
        let agg = aggregate_neighbors(&x, &mask).unwrap();
        let report = finite_difference_check(
            |tape| {
                let h = encode_history(tape, tape.constant(&x), &phi)?;
                let n = encode_neighbors(tape, tape.constant(&agg), &psi)?;
                let g = build_guidance(tape, h, n)?;
                let w = tape.constant(&Tensor::new(vec![8], (0..8).map(|i| i as f32 * 0.3 - 1.0).collect())?);
                tape.sum(tape.tanh(tape.mul(g, w)?)?)
            },
            &store,
            1e-6,
            1e-2,
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }
}
