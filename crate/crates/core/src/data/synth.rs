use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ingest::RawTrack;
use crate::error::{Error, Result};

/// Seconds between frames.
pub const FRAME_DT: f64 = 0.4;
/// Frame ids advance by this much per step, as in the public benchmark files.
pub const FRAME_ID_STEP: i64 = 10;
/// Pairs closer than this push each other apart.
pub const REPULSION_RANGE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_scenes: usize,
    pub peds_per_scene: usize,
    pub frames: usize,
    /// Walking speed bounds in m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Heading noise per frame, radians.
    pub turn_noise: f64,
    /// Repulsion velocity in m/s at zero distance.
    pub repulsion_gain: f64,
    pub box_size: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_scenes: 20,
            peds_per_scene: 8,
            frames: 40,
            speed_min: 0.6,
            speed_max: 1.6,
            turn_noise: 0.15,
            repulsion_gain: 1.5,
            box_size: 20.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    crate::model::config_fields!(
        n_scenes,
        peds_per_scene,
        frames,
        speed_min,
        speed_max,
        turn_noise,
        repulsion_gain,
        box_size,
        seed,
    );

    fn validate(&self) -> Result<()> {
        let positive = self.n_scenes > 0
            && self.peds_per_scene > 0
            && self.frames > 0
            && self.speed_min >= 0.0
            && self.speed_max >= self.speed_min
            && self.turn_noise >= 0.0
            && self.repulsion_gain >= 0.0
            && self.box_size > 0.0;
        let finite = [self.speed_min, self.speed_max, self.turn_noise, self.repulsion_gain, self.box_size]
            .iter()
            .all(|v| v.is_finite());
        if positive && finite {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synthetic config {self:?}")))
        }
    }
}

/// Initial state of a simulated walker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Walker {
    pub pos: [f64; 2],
    pub heading: f64,
    pub speed: f64,
}

pub fn scene_name(index: usize) -> String {
    format!("synth_{index:02}")
}

/// Generates `n_scenes` scenes of noisy constant-velocity walkers.
pub fn synthesize_scenes(cfg: &SynthConfig) -> Result<Vec<RawTrack>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.n_scenes * cfg.peds_per_scene * cfg.frames);
    for s in 0..cfg.n_scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(s as u64);
        let walkers: Vec<Walker> = (0..cfg.peds_per_scene)
            .map(|_| Walker {
                pos: [
                    rng.random::<f64>() * cfg.box_size,
                    rng.random::<f64>() * cfg.box_size,
                ],
                heading: rng.random::<f64>() * std::f64::consts::TAU,
                speed: cfg.speed_min + rng.random::<f64>() * (cfg.speed_max - cfg.speed_min),
            })
            .collect();
        let name = scene_name(s);
        for (k, frame) in simulate(&walkers, cfg, &mut rng).into_iter().enumerate() {
            for (p, pos) in frame.into_iter().enumerate() {
                out.push(RawTrack {
                    scene_id: name.clone(),
                    frame_id: k as i64 * FRAME_ID_STEP,
                    ped_id: p as i64 + 1,
                    x: pos[0],
                    y: pos[1],
                });
            }
        }
    }
    out.sort_by(|a, b| (&a.scene_id, a.ped_id, a.frame_id).cmp(&(&b.scene_id, b.ped_id, b.frame_id)));
    Ok(out)
}

/// Rolls walkers forward for `cfg.frames` frames; returns positions per frame.
pub fn simulate<R: Rng + ?Sized>(start: &[Walker], cfg: &SynthConfig, rng: &mut R) -> Vec<Vec<[f64; 2]>> {
    let mut ws = start.to_vec();
    let noise = Normal::new(0.0, cfg.turn_noise.max(0.0)).expect("finite std");
    let mut frames = Vec::with_capacity(cfg.frames);
    frames.push(ws.iter().map(|w| w.pos).collect::<Vec<_>>());
    for _ in 1..cfg.frames {
        for w in ws.iter_mut() {
            if cfg.turn_noise > 0.0 {
                w.heading += noise.sample(rng);
            }
        }
        let positions: Vec<[f64; 2]> = ws.iter().map(|w| w.pos).collect();
        for (i, w) in ws.iter_mut().enumerate() {
            let mut v = [w.speed * w.heading.cos(), w.speed * w.heading.sin()];
            let mut pushed = false;
            if cfg.repulsion_gain > 0.0 {
                for (j, q) in positions.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let d = [w.pos[0] - q[0], w.pos[1] - q[1]];
                    let dist = (d[0] * d[0] + d[1] * d[1]).sqrt();
                    if dist < REPULSION_RANGE && dist > 1e-9 {
                        let mag = cfg.repulsion_gain * (1.0 - dist / REPULSION_RANGE);
                        v[0] += mag * d[0] / dist;
                        v[1] += mag * d[1] / dist;
                        pushed = true;
                    }
                }
            }
            if pushed {
                w.heading = v[1].atan2(v[0]);
            }
            w.pos[0] += v[0] * FRAME_DT;
            w.pos[1] += v[1] * FRAME_DT;
            reflect(w, cfg.box_size);
        }
        frames.push(ws.iter().map(|w| w.pos).collect());
    }
    frames
}

fn reflect(w: &mut Walker, size: f64) {
    use std::f64::consts::PI;
    // Steps are far shorter than the box, so one fold per axis suffices.
    if w.pos[0] < 0.0 {
        w.pos[0] = -w.pos[0];
        w.heading = PI - w.heading;
    } else if w.pos[0] > size {
        w.pos[0] = 2.0 * size - w.pos[0];
        w.heading = PI - w.heading;
    }
    if w.pos[1] < 0.0 {
        w.pos[1] = -w.pos[1];
        w.heading = -w.heading;
    } else if w.pos[1] > size {
        w.pos[1] = 2.0 * size - w.pos[1];
        w.heading = -w.heading;
    }
    w.pos[0] = w.pos[0].clamp(0.0, size);
    w.pos[1] = w.pos[1].clamp(0.0, size);
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn tracks_by_ped(tracks: &[RawTrack]) -> BTreeMap<(String, i64), Vec<[f64; 2]>> {
        let mut m: BTreeMap<(String, i64), Vec<[f64; 2]>> = BTreeMap::new();
        for t in tracks {
            m.entry((t.scene_id.clone(), t.ped_id)).or_default().push([t.x, t.y]);
        }
        m
    }

    #[test]
    fn degenerate_dynamics_are_straight() {
        let cfg = SynthConfig {
            turn_noise: 0.0,
            repulsion_gain: 0.0,
            box_size: 1.0e4,
            n_scenes: 2,
            ..Default::default()
        };
        for (_, track) in tracks_by_ped(&synthesize_scenes(&cfg).unwrap()) {
            let d0 = [track[1][0] - track[0][0], track[1][1] - track[0][1]];
            for w in track.windows(2) {
                let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
                assert!((d[0] - d0[0]).abs() < 1e-9 && (d[1] - d0[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_same_tracks() {
        let cfg = SynthConfig::default();
        assert_eq!(synthesize_scenes(&cfg).unwrap(), synthesize_scenes(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(synthesize_scenes(&cfg).unwrap(), synthesize_scenes(&other).unwrap());
    }

    #[test]
    fn positions_stay_in_box() {
        let cfg = SynthConfig {
            frames: 200,
            n_scenes: 3,
            ..Default::default()
        };
        for t in synthesize_scenes(&cfg).unwrap() {
            assert!((0.0..=20.0).contains(&t.x) && (0.0..=20.0).contains(&t.y));
        }
    }

    fn head_on_min_distance(gain: f64) -> f64 {
        let cfg = SynthConfig {
            turn_noise: 0.0,
            repulsion_gain: gain,
            frames: 60,
            ..Default::default()
        };
        let start = [
            Walker { pos: [4.0, 10.0], heading: 0.0, speed: 0.5 },
            Walker { pos: [16.0, 10.05], heading: std::f64::consts::PI, speed: 0.5 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        simulate(&start, &cfg, &mut rng)
            .iter()
            .map(|f| ((f[0][0] - f[1][0]).powi(2) + (f[0][1] - f[1][1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn repulsion_keeps_walkers_apart() {
        let off = head_on_min_distance(0.0);
        let on = head_on_min_distance(2.0);
        assert!(on > off, "on {on} off {off}");
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SynthConfig { n_scenes: 0, ..Default::default() };
        assert!(synthesize_scenes(&cfg).is_err());
        let cfg = SynthConfig { speed_max: f64::NAN, ..Default::default() };
        assert!(synthesize_scenes(&cfg).is_err());
    }
}
