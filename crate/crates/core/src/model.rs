//! The full parameter set Θ and its wiring.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SceneWindow;
use crate::diffusion::{build_schedule, Backbone, Denoiser, GammaMode, NoiseParam, Schedule};
use crate::distribution::{Converter, NormStats, STAT_CHANNELS};
use crate::error::{Error, Result};
use crate::guidance::{aggregate_neighbors, build_guidance, GuidanceContext, TemporalEncoder};
use crate::numerics::{Container, Float, NamedArray, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub obs_len: usize,
    pub pred_len: usize,
    pub enc_channels: usize,
    pub enc_kernel: usize,
    pub history_dim: usize,
    pub neighbor_dim: usize,
    pub converter_hidden: usize,
    pub converter_skip: bool,
    pub noise_param: NoiseParam,
    pub denoiser_backbone: Backbone,
    pub embed_dim: usize,
    pub denoiser_width: usize,
    pub denoiser_blocks: usize,
    pub diffusion_steps: usize,
    pub sampling_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            obs_len: 8,
            pred_len: 12,
            enc_channels: 32,
            enc_kernel: 3,
            history_dim: 32,
            neighbor_dim: 32,
            converter_hidden: 32,
            converter_skip: false,
            noise_param: NoiseParam::Velocity,
            denoiser_backbone: Backbone::Mlp,
            embed_dim: 32,
            denoiser_width: 128,
            denoiser_blocks: 3,
            diffusion_steps: 200,
            sampling_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.05,
        }
    }
}

macro_rules! config_fields {
    ($($field:ident),* $(,)?) => {
        /// `(key, value)` pairs in a stable order.
        pub fn to_pairs(&self) -> Vec<(String, String)> {
            vec![$((stringify!($field).to_string(), self.$field.to_string())),*]
        }

        /// Sets one field from text. Unknown keys are an error naming the key.
        pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
            match key {
                $(stringify!($field) => {
                    self.$field = value.trim().parse().map_err(|_| {
                        Error::Config(format!("bad value {value:?} for {key}"))
                    })?;
                })*
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
            Ok(())
        }

        pub fn keys() -> &'static [&'static str] {
            &[$(stringify!($field)),*]
        }
    };
}
pub(crate) use config_fields;

impl ModelConfig {
    config_fields!(
        obs_len,
        pred_len,
        enc_channels,
        enc_kernel,
        history_dim,
        neighbor_dim,
        converter_hidden,
        converter_skip,
        noise_param,
        denoiser_backbone,
        embed_dim,
        denoiser_width,
        denoiser_blocks,
        diffusion_steps,
        sampling_steps,
        beta_start,
        beta_end,
    );

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.obs_len,
            self.pred_len,
            self.enc_channels,
            self.enc_kernel,
            self.history_dim,
            self.neighbor_dim,
            self.converter_hidden,
            self.embed_dim,
            self.denoiser_width,
            self.diffusion_steps,
            self.sampling_steps,
        ];
        if sizes.iter().any(|&s| s == 0) || self.obs_len < 2 {
            return Err(Error::Config(format!("model sizes must be positive: {self:?}")));
        }
        if self.sampling_steps > self.diffusion_steps {
            return Err(Error::Config("sampling_steps must not exceed diffusion_steps".into()));
        }
        Ok(())
    }

    pub fn guidance_dim(&self) -> usize {
        self.history_dim + self.neighbor_dim
    }
}

/// Stacked pedestrians of several windows.
#[derive(Clone, Debug)]
pub struct Batch {
    /// [P, T, 2]
    pub observed: Tensor<f32>,
    /// Masked-mean neighbor displacements, [P, T, 2].
    pub aggregated: Tensor<f32>,
    /// [P, T', 2]
    pub future: Tensor<f32>,
    /// Window of each row.
    pub window_of: Vec<usize>,
    pub n_windows: usize,
}

impl Batch {
    pub fn from_windows(windows: &[&SceneWindow]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let (t, tp) = (windows[0].obs_len(), windows[0].pred_len());
        let mut obs = Vec::new();
        let mut agg = Vec::new();
        let mut fut = Vec::new();
        let mut window_of = Vec::new();
        for (i, w) in windows.iter().enumerate() {
            if w.obs_len() != t || w.pred_len() != tp {
                return Err(Error::Data("windows in a batch must share horizons".into()));
            }
            obs.extend_from_slice(w.observed.data());
            agg.extend_from_slice(aggregate_neighbors(&w.observed, &w.neighbor_mask)?.data());
            fut.extend_from_slice(w.future.data());
            window_of.extend(std::iter::repeat_n(i, w.num_peds()));
        }
        let p = window_of.len();
        Ok(Batch {
            observed: Tensor::new(vec![p, t, 2], obs)?,
            aggregated: Tensor::new(vec![p, t, 2], agg)?,
            future: Tensor::new(vec![p, tp, 2], fut)?,
            window_of,
            n_windows: windows.len(),
        })
    }

    pub fn rows(&self) -> usize {
        self.window_of.len()
    }
}

/// Θ = {φ, ψ, converter, denoiser} plus the frozen schedule and
/// normalisation statistics.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub phi: TemporalEncoder,
    pub psi: TemporalEncoder,
    pub converter: Converter,
    pub denoiser: Denoiser,
    pub schedule: Schedule,
    pub norm: NormStats,
}

impl Model {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let phi = TemporalEncoder::new(&mut store, "phi", c.obs_len, c.enc_channels, c.enc_kernel, c.history_dim, &mut rng)?;
        let psi = TemporalEncoder::new(&mut store, "psi", c.obs_len, c.enc_channels, c.enc_kernel, c.neighbor_dim, &mut rng)?;
        let converter = Converter::new(&mut store, "converter", c.converter_hidden, c.converter_skip, &mut rng)?;
        let mut denoiser = Denoiser::new(
            &mut store,
            "denoiser",
            c.denoiser_backbone,
            c.pred_len,
            c.embed_dim,
            c.guidance_dim(),
            c.denoiser_width,
            c.denoiser_blocks,
            &mut rng,
        )?;
        denoiser.param = c.noise_param;
        let schedule = build_schedule(
            c.diffusion_steps,
            c.beta_start,
            c.beta_end,
            c.sampling_steps,
            GammaMode::Deterministic,
        )?;
        Ok(Model {
            config: config.clone(),
            store,
            phi,
            psi,
            converter,
            denoiser,
            schedule,
            norm: NormStats::identity(),
        })
    }

    /// Guidance rows for a batch on any tape.
    pub fn guidance_var<T: Float>(&self, tape: &Tape<'_, T>, batch: &Batch) -> Result<Var> {
        let h = self.phi.forward(tape, tape.constant(&batch.observed))?;
        let n = self.psi.forward(tape, tape.constant(&batch.aggregated))?;
        build_guidance(tape, h, n)
    }

    pub fn guidance(&self, window: &SceneWindow) -> Result<GuidanceContext> {
        let batch = Batch::from_windows(&[window])?;
        let tape: Tape = Tape::inference(&self.store);
        let g = self.guidance_var(&tape, &batch)?;
        Ok(GuidanceContext {
            embedding: (*tape.value(g)).clone(),
            history_dim: self.config.history_dim,
        })
    }

    /// Raw converter statistics of ground-truth futures, `[P, T', 5]`.
    pub fn convert(&self, future: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape: Tape = Tape::inference(&self.store);
        let raw = self.converter.forward(&tape, tape.constant(future))?;
        Ok((*tape.value(raw)).clone())
    }

    /// Writes Θ, schedule, normalisation and config into `c`.
    pub fn write_to(&self, c: &mut Container) -> Result<()> {
        for (k, v) in self.config.to_pairs() {
            c.set_meta(format!("model.{k}"), v);
        }
        for (_, name, t) in self.store.iter() {
            c.push(NamedArray::from_f32(format!("param.{name}"), t))?;
        }
        self.schedule.write_to(c)?;
        c.push(NamedArray::from_f32("norm.mean", &Tensor::new(vec![STAT_CHANNELS], self.norm.mean.to_vec())?))?;
        c.push(NamedArray::from_f32("norm.scale", &Tensor::new(vec![STAT_CHANNELS], self.norm.scale.to_vec())?))
    }

    pub fn read_from(c: &Container) -> Result<Self> {
        let mut config = ModelConfig::default();
        for key in ModelConfig::keys() {
            config.set(key, c.meta(&format!("model.{key}"))?)?;
        }
        let mut model = Model::new(&config, 0)?;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let name = format!("param.{}", model.store.name(id));
            let t = c.get(&name)?.to_f32()?;
            model
                .store
                .set(id, t)
                .map_err(|e| Error::Format(format!("{name}: {e}")))?;
        }
        model.schedule = Schedule::read_from(c)?;
        let vec5 = |name: &str| -> Result<[f32; STAT_CHANNELS]> {
            let t = c.get(name)?.to_f32()?;
            t.data()
                .try_into()
                .map_err(|_| Error::Format(format!("{name} must hold 5 values")))
        };
        model.norm = NormStats::new(vec5("norm.mean")?, vec5("norm.scale")?)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let mut c = Container::new();
        c.set_meta("kind", "model");
        self.write_to(&mut c)?;
        c.save(path)?;
        Ok(c.digest())
    }

    /// Loads a model or training checkpoint; returns the model and the
    /// container digest.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let c = Container::load(path)?;
        Ok((Self::read_from(&c)?, c.digest()))
    }
}
