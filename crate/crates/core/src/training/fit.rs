use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::losses::{draw_diffusion, objective, LossReport, LossWeights};
use crate::data::SceneWindow;
use crate::distribution::NormStats;
use crate::error::{Error, Result};
use crate::model::{config_fields, Batch, Model, ModelConfig};
use crate::numerics::{Adam, ClipScope, Container, NamedArray, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub learning_rate: f32,
    pub clip_norm: f32,
    pub clip_scope: ClipScope,
    /// Windows per batch.
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many updates; 0 means no cap.
    pub max_steps: usize,
    pub seed: u64,
    /// Write a numbered checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Refit normalisation at the start of every this many epochs; 0 fits once
    /// before the first update and freezes.
    pub norm_refresh: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            clip_scope: ClipScope::Tensor,
            batch_size: 64,
            epochs: 50,
            max_steps: 0,
            seed: 0,
            checkpoint_every: 0,
            norm_refresh: 1,
        }
    }
}

impl TrainConfig {
    config_fields!(
        lambda1,
        lambda2,
        lambda3,
        learning_rate,
        clip_norm,
        clip_scope,
        batch_size,
        epochs,
        max_steps,
        seed,
        checkpoint_every,
        norm_refresh,
    );

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            diffusion: self.lambda1,
            likelihood: self.lambda2,
            consistency: self.lambda3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("learning_rate and clip_norm must be positive".into()));
        }
        Ok(())
    }

    fn total_steps(&self, n_windows: usize) -> usize {
        let per_epoch = n_windows.div_ceil(self.batch_size);
        let all = per_epoch.saturating_mul(self.epochs);
        if self.max_steps > 0 {
            all.min(self.max_steps)
        } else {
            all
        }
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub opt: Adam,
    pub step: usize,
    pub train: TrainConfig,
}

impl TrainState {
    pub fn new(model_cfg: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        train.validate()?;
        let model = Model::new(model_cfg, train.seed)?;
        let opt = Adam::new(&model.store, train.learning_rate, Some(train.clip_norm)).with_scope(train.clip_scope);
        Ok(TrainState {
            model,
            opt,
            step: 0,
            train: train.clone(),
        })
    }

    pub fn write_to(&self, c: &mut Container) -> Result<()> {
        self.model.write_to(c)?;
        for (k, v) in self.train.to_pairs() {
            c.set_meta(format!("train.{k}"), v);
        }
        c.set_meta("train.step", self.step);
        c.set_meta("adam.step", self.opt.step);
        for (id, name, _) in self.model.store.iter() {
            c.push(NamedArray::from_f32(format!("adam.m.{name}"), &self.opt.first[id.index()]))?;
            c.push(NamedArray::from_f32(format!("adam.v.{name}"), &self.opt.second[id.index()]))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let mut c = Container::new();
        c.set_meta("kind", "training");
        self.write_to(&mut c)?;
        c.save(path)?;
        Ok(c.digest())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        let model = Model::read_from(&c)?;
        let mut train = TrainConfig::default();
        for key in TrainConfig::keys() {
            train.set(key, c.meta(&format!("train.{key}"))?)?;
        }
        let mut opt = Adam::new(&model.store, train.learning_rate, Some(train.clip_norm)).with_scope(train.clip_scope);
        opt.step = c.meta_parse("adam.step")?;
        for (id, name, t) in model.store.iter() {
            let m = c.get(&format!("adam.m.{name}"))?.to_f32()?;
            let v = c.get(&format!("adam.v.{name}"))?.to_f32()?;
            if m.shape() != t.shape() || v.shape() != t.shape() {
                return Err(Error::Format(format!("optimizer state for {name} has the wrong shape")));
            }
            opt.first[id.index()] = m;
            opt.second[id.index()] = v;
        }
        Ok(TrainState {
            model,
            opt,
            step: c.meta_parse("train.step")?,
            train,
        })
    }
}

/// Normalisation fitted to the converter's output on all training windows.
pub fn fit_normalization(model: &Model, windows: &[SceneWindow]) -> Result<NormStats> {
    let raws = windows
        .iter()
        .map(|w| model.convert(&w.future))
        .collect::<Result<Vec<_>>>()?;
    NormStats::from_samples(&raws.iter().collect::<Vec<_>>())
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64 + 1);
    rng
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One optimizer update. Returns the loss report and the pre-clip gradient norm.
pub fn train_step(state: &mut TrainState, batch: &Batch) -> Result<(LossReport, f32)> {
    let mut rng = step_rng(state.train.seed, state.step);
    let draw = draw_diffusion(&mut rng, batch, &state.model.schedule)?;
    let weights = state.train.weights();
    let (report, grads) = {
        let tape: Tape = Tape::new(&state.model.store);
        let obj = objective(&tape, &state.model, batch, &weights, &draw)?;
        let report = obj.report(&tape);
        let finite = [report.total, report.diffusion, report.likelihood, report.consistency]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFiniteLoss {
                step: state.step,
                detail: format!("{report:?}"),
            });
        }
        (report, tape.backward(obj.total)?)
    };
    let norm = state.opt.update(&mut state.model.store, &grads);
    if !norm.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            detail: "gradient norm is not finite".into(),
        });
    }
    state.step += 1;
    Ok((report, norm))
}

pub const LOG_HEADER: &str = "step,epoch,total,diffusion,likelihood,consistency,grad_norm";

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub checkpoint: PathBuf,
    pub digest: String,
    pub log: PathBuf,
    pub steps: usize,
    pub last: LossReport,
    pub state: TrainState,
}

/// Trains from scratch, or continues from `resume`, writing into `out_dir`:
/// `train_log.csv` (deterministic), `train_timing.csv` (wall-clock) and
/// `model.ddck`, plus `checkpoint_<step>.ddck` at the configured cadence.
pub fn fit(
    windows: &[SceneWindow],
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<FitOutcome> {
    if windows.is_empty() {
        return Err(Error::Data("training set has no windows".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("train_log.csv");
    let timing_path = out_dir.join("train_timing.csv");
    let (mut state, mut log, mut timing) = match resume {
        Some(path) => {
            let state = TrainState::load(path)?;
            let keep = |p: &Path| -> Result<String> {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let mut out = String::new();
                for (i, line) in text.lines().enumerate() {
                    let step: Option<usize> = line.split(',').next().and_then(|s| s.parse().ok());
                    if i == 0 || step.is_some_and(|s| s < state.step) {
                        out.push_str(line);
                        out.push('\n');
                    }
                }
                Ok(out)
            };
            let log = keep(&log_path)?;
            let timing = keep(&timing_path).unwrap_or_else(|_| "step,wall_ms\n".into());
            (state, log, timing)
        }
        None => {
            let mut state = TrainState::new(model_cfg, train)?;
            state.model.norm = fit_normalization(&state.model, windows)?;
            (state, format!("{LOG_HEADER}\n"), "step,wall_ms\n".to_string())
        }
    };
    let per_epoch = windows.len().div_ceil(state.train.batch_size);
    let total = state.train.total_steps(windows.len());
    let mut last = LossReport::default();
    let mut order_epoch = usize::MAX;
    let mut order = Vec::new();
    while state.step < total {
        let epoch = state.step / per_epoch;
        let refresh = state.train.norm_refresh;
        if state.step % per_epoch == 0 && epoch > 0 && refresh > 0 && epoch % refresh == 0 {
            state.model.norm = fit_normalization(&state.model, windows)?;
        }
        if epoch != order_epoch {
            order = epoch_order(state.train.seed, epoch, windows.len());
            order_epoch = epoch;
        }
        let b = state.step % per_epoch;
        let bs = state.train.batch_size;
        let picked: Vec<&SceneWindow> = order[b * bs..((b + 1) * bs).min(order.len())]
            .iter()
            .map(|&i| &windows[i])
            .collect();
        let batch = Batch::from_windows(&picked)?;
        let started = Instant::now();
        let step = state.step;
        let (report, norm) = train_step(&mut state, &batch)?;
        let _ = writeln!(
            log,
            "{step},{epoch},{},{},{},{},{}",
            report.total, report.diffusion, report.likelihood, report.consistency, norm
        );
        let _ = writeln!(timing, "{step},{:.3}", started.elapsed().as_secs_f64() * 1e3);
        last = report;
        let every = state.train.checkpoint_every;
        if every > 0 && state.step % every == 0 && state.step < total {
            state.save(&out_dir.join(format!("checkpoint_{:06}.ddck", state.step)))?;
        }
    }
    std::fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
    std::fs::write(&timing_path, &timing).map_err(|e| Error::io(&timing_path, e))?;
    let checkpoint = out_dir.join("model.ddck");
    let digest = state.save(&checkpoint)?;
    Ok(FitOutcome {
        checkpoint,
        digest,
        log: log_path,
        steps: state.step,
        last,
        state,
    })
}
