//! Hybrid sampling, candidate selection and Best-of-N evaluation.

mod metrics;
mod sampling;

pub use metrics::{ade, best_of_n, fde, EvalReport, Path2, SceneMetrics};
pub use sampling::{
    candidates_from_fields, hybrid_sample, select_best, Accounting, PredictionSet, Provenance, SampleConfig,
    Selection, Strategy,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::SceneWindow;
use crate::diffusion::Schedule;
use crate::error::{Error, Result};
use crate::model::Model;

/// Independent stream for window `index` under a root seed.
pub fn window_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Best-of-N over arbitrary candidate producers, in parallel across windows.
pub fn evaluate_with<F>(windows: &[SceneWindow], protocol: &str, produce: F) -> Result<EvalReport>
where
    F: Fn(usize, &SceneWindow) -> Result<PredictionSet> + Sync,
{
    if windows.is_empty() {
        return Err(Error::Data("test set has no windows".into()));
    }
    let per_window = windows
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let set = produce(i, w)?;
            if set.num_peds() != w.num_peds() {
                return Err(Error::shape("evaluate", "prediction set and window disagree on N"));
            }
            let gt = w.future_positions();
            let errs = set
                .candidates
                .iter()
                .zip(&gt)
                .map(|(c, g)| best_of_n(c, g).map(|(_, a, f)| (a, f)))
                .collect::<Result<Vec<_>>>()?;
            Ok((w.scene_id.clone(), errs))
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_windows(protocol, &per_window)
}

pub fn evaluate_best_of_n(
    model: &Model,
    windows: &[SceneWindow],
    sched: &Schedule,
    cfg: &SampleConfig,
    seed: u64,
) -> Result<EvalReport> {
    evaluate_with(windows, &cfg.protocol(), |i, w| {
        hybrid_sample(model, w, sched, cfg, true, &mut window_rng(seed, i))
    })
}

/// Repeats each pedestrian's last observed displacement.
pub fn constant_velocity(window: &SceneWindow) -> PredictionSet {
    let (t, tp) = (window.obs_len(), window.pred_len());
    let obs = window.observed.data();
    let o = window.origin.data();
    let candidates = (0..window.num_peds())
        .map(|n| {
            let i = (n * t + t - 1) * 2;
            let v = [obs[i] as f64, obs[i + 1] as f64];
            let path = (1..=tp)
                .map(|k| [o[2 * n] + v[0] * k as f64, o[2 * n + 1] + v[1] * k as f64])
                .collect();
            vec![path]
        })
        .collect();
    PredictionSet {
        candidates,
        provenance: vec![vec![Provenance { run: 0, draw: None }]; window.num_peds()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_scenes, window_scenes, SynthConfig, WindowConfig};

    fn windows() -> Vec<SceneWindow> {
        let tracks = synthesize_scenes(&SynthConfig {
            n_scenes: 2,
            peds_per_scene: 3,
            frames: 24,
            ..Default::default()
        })
        .unwrap();
        window_scenes(&tracks, &WindowConfig::default()).unwrap()
    }

    #[test]
    fn oracle_candidates_score_zero() {
        let ws = windows();
        let r = evaluate_with(&ws, "oracle", |_, w| {
            let mut set = constant_velocity(w);
            for (c, g) in set.candidates.iter_mut().zip(w.future_positions()) {
                c.push(g);
            }
            Ok(set)
        })
        .unwrap();
        assert_eq!(r.scenes.len(), 2);
        assert!(r.avg_ade < 1e-6 && r.avg_fde < 1e-6);
        assert!(evaluate_with(&[], "x", |_, w| Ok(constant_velocity(w))).is_err());
    }

    #[test]
    fn straight_walkers_are_constant_velocity() {
        let tracks = synthesize_scenes(&SynthConfig {
            n_scenes: 1,
            peds_per_scene: 1,
            frames: 20,
            turn_noise: 0.0,
            box_size: 1e4,
            ..Default::default()
        })
        .unwrap();
        let ws = window_scenes(&tracks, &WindowConfig::default()).unwrap();
        let r = evaluate_with(&ws, "cv", |_, w| Ok(constant_velocity(w))).unwrap();
        assert!(r.avg_ade < 1e-4, "{}", r.avg_ade);
    }
}
