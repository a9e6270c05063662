use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::numerics::{Container, NamedArray, Tensor};

use super::ingest::RawTrack;

#[derive(Clone, Debug, PartialEq)]
pub struct WindowConfig {
    pub obs_len: usize,
    pub pred_len: usize,
    /// Distance between window starts, in grid steps.
    pub stride: usize,
    pub max_peds: usize,
    pub neighbor_radius: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            obs_len: 8,
            pred_len: 12,
            stride: 1,
            max_peds: 32,
            neighbor_radius: 5.0,
        }
    }
}

/// A fixed-horizon sample of one scene.
///
/// `observed[n][0]` is zero; `observed[n][t]` is the step from frame t-1 to
/// t. `future[n][j]` is the step into future frame j, so the first future
/// step starts at `origin`, the last observed position.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneWindow {
    pub scene_id: String,
    pub start_frame: i64,
    pub ped_ids: Vec<i64>,
    /// [N, T, 2]
    pub observed: Tensor<f32>,
    /// [N, T', 2]
    pub future: Tensor<f32>,
    /// [N, 2]
    pub origin: Tensor<f64>,
    /// Row-major [N, N].
    pub neighbor_mask: Vec<bool>,
}

impl SceneWindow {
    pub fn num_peds(&self) -> usize {
        self.ped_ids.len()
    }

    pub fn obs_len(&self) -> usize {
        self.observed.shape()[1]
    }

    pub fn pred_len(&self) -> usize {
        self.future.shape()[1]
    }

    pub fn is_neighbor(&self, i: usize, j: usize) -> bool {
        self.neighbor_mask[i * self.num_peds() + j]
    }

    /// Absolute observed positions, [N][T].
    pub fn observed_positions(&self) -> Vec<Vec<[f64; 2]>> {
        let t_len = self.obs_len();
        let obs = self.observed.data();
        (0..self.num_peds())
            .map(|n| {
                let o = self.origin.data();
                let mut out = vec![[0.0; 2]; t_len];
                let mut p = [o[2 * n], o[2 * n + 1]];
                out[t_len - 1] = p;
                for t in (1..t_len).rev() {
                    let i = (n * t_len + t) * 2;
                    p[0] -= obs[i] as f64;
                    p[1] -= obs[i + 1] as f64;
                    out[t - 1] = p;
                }
                out
            })
            .collect()
    }

    /// Absolute future positions, [N][T'].
    pub fn future_positions(&self) -> Vec<Vec<[f64; 2]>> {
        let n_peds = self.num_peds();
        let o = self.origin.data();
        (0..n_peds)
            .map(|n| {
                let row = &self.future.data()[n * self.pred_len() * 2..(n + 1) * self.pred_len() * 2];
                cumulate([o[2 * n], o[2 * n + 1]], row)
            })
            .collect()
    }
}

/// Absolute positions from a start point and a flat `[steps, 2]` displacement row.
pub fn cumulate(start: [f64; 2], steps: &[f32]) -> Vec<[f64; 2]> {
    let mut p = start;
    steps
        .chunks_exact(2)
        .map(|d| {
            p[0] += d[0] as f64;
            p[1] += d[1] as f64;
            p
        })
        .collect()
}

/// Grid spacing of a scene's frames; every frame must sit on `f0 + k * step`.
fn frame_step(scene: &str, frames: &BTreeSet<i64>) -> Result<i64> {
    let sorted: Vec<i64> = frames.iter().copied().collect();
    let diffs: Vec<i64> = sorted.windows(2).map(|w| w[1] - w[0]).collect();
    let step = match diffs.iter().min() {
        Some(&s) => s,
        None => return Ok(1),
    };
    if let Some(bad) = diffs.iter().find(|&&d| d % step != 0) {
        return Err(Error::Data(format!(
            "scene {scene}: non-uniform frame grid (gap {bad} is not a multiple of {step})"
        )));
    }
    Ok(step)
}

/// Cuts tracks into windows where every included pedestrian is present for
/// all `obs_len + pred_len` frames.
pub fn window_scenes(tracks: &[RawTrack], cfg: &WindowConfig) -> Result<Vec<SceneWindow>> {
    if cfg.obs_len < 2 || cfg.pred_len < 1 || cfg.stride < 1 || cfg.max_peds < 1 {
        return Err(Error::Invalid(format!("bad window config {cfg:?}")));
    }
    if !(cfg.neighbor_radius > 0.0) {
        return Err(Error::Invalid("neighbor radius must be positive".into()));
    }
    let mut scenes: BTreeMap<&str, Vec<&RawTrack>> = BTreeMap::new();
    for t in tracks {
        scenes.entry(t.scene_id.as_str()).or_default().push(t);
    }
    let span = cfg.obs_len + cfg.pred_len;
    let mut windows = Vec::new();
    for (scene, rows) in scenes {
        let frames: BTreeSet<i64> = rows.iter().map(|t| t.frame_id).collect();
        let step = frame_step(scene, &frames)?;
        let mut positions: BTreeMap<(i64, i64), [f64; 2]> = BTreeMap::new();
        let mut track_len: BTreeMap<i64, usize> = BTreeMap::new();
        for t in &rows {
            if positions.insert((t.ped_id, t.frame_id), [t.x, t.y]).is_some() {
                return Err(Error::Data(format!(
                    "scene {scene}: duplicate pedestrian {} at frame {}",
                    t.ped_id, t.frame_id
                )));
            }
            *track_len.entry(t.ped_id).or_default() += 1;
        }
        let first = *frames.iter().next().expect("scene has rows");
        let last = *frames.iter().next_back().expect("scene has rows");
        let mut start = first;
        while start + (span as i64 - 1) * step <= last {
            let window_frames: Vec<i64> = (0..span as i64).map(|k| start + k * step).collect();
            let mut present: Vec<i64> = track_len
                .keys()
                .copied()
                .filter(|&p| window_frames.iter().all(|&f| positions.contains_key(&(p, f))))
                .collect();
            if present.len() > cfg.max_peds {
                present.sort_by_key(|p| (std::cmp::Reverse(track_len[p]), *p));
                present.truncate(cfg.max_peds);
                present.sort();
            }
            if !present.is_empty() {
                let abs: Vec<Vec<[f64; 2]>> = present
                    .iter()
                    .map(|&p| window_frames.iter().map(|&f| positions[&(p, f)]).collect())
                    .collect();
                windows.push(build_window(scene, start, present, &abs, cfg)?);
            }
            start += cfg.stride as i64 * step;
        }
    }
    Ok(windows)
}

/// The last `obs_len` frames up to `anchor` for every pedestrian of a scene.
#[derive(Clone, Debug)]
pub struct HistoryWindow {
    /// Future steps are zero for pedestrians without `pred_len` frames after the anchor.
    pub window: SceneWindow,
    pub has_future: Vec<bool>,
    /// Pedestrians left out, with the reason.
    pub skipped: Vec<(i64, String)>,
}

/// Builds a prediction window anchored at `anchor` (default: the scene's last
/// frame). Pedestrians missing any history frame are skipped, not fatal.
pub fn history_window(tracks: &[RawTrack], cfg: &WindowConfig, anchor: Option<i64>) -> Result<HistoryWindow> {
    let scene = match tracks.first() {
        Some(t) => t.scene_id.as_str(),
        None => return Err(Error::Data("no tracks to predict from".into())),
    };
    if tracks.iter().any(|t| t.scene_id != scene) {
        return Err(Error::Data("history window needs a single scene".into()));
    }
    let frames: BTreeSet<i64> = tracks.iter().map(|t| t.frame_id).collect();
    let step = frame_step(scene, &frames)?;
    let anchor = anchor.unwrap_or(*frames.iter().next_back().expect("non-empty"));
    let mut positions: BTreeMap<i64, BTreeMap<i64, [f64; 2]>> = BTreeMap::new();
    for t in tracks {
        if positions.entry(t.ped_id).or_default().insert(t.frame_id, [t.x, t.y]).is_some() {
            return Err(Error::Data(format!(
                "scene {scene}: duplicate pedestrian {} at frame {}",
                t.ped_id, t.frame_id
            )));
        }
    }
    let (t_obs, t_pred) = (cfg.obs_len as i64, cfg.pred_len as i64);
    let start = anchor - (t_obs - 1) * step;
    let mut ids = Vec::new();
    let mut abs = Vec::new();
    let mut has_future = Vec::new();
    let mut skipped = Vec::new();
    for (&ped, track) in &positions {
        let hist: Vec<[f64; 2]> = (0..t_obs).filter_map(|k| track.get(&(start + k * step)).copied()).collect();
        if hist.len() < t_obs as usize {
            skipped.push((ped, format!("{} of {} history frames up to frame {anchor}", hist.len(), t_obs)));
            continue;
        }
        let fut: Vec<[f64; 2]> = (1..=t_pred).filter_map(|k| track.get(&(anchor + k * step)).copied()).collect();
        let full = fut.len() == t_pred as usize;
        let last = hist[hist.len() - 1];
        let mut row = hist;
        if full {
            row.extend(fut);
        } else {
            row.extend(std::iter::repeat_n(last, t_pred as usize));
        }
        ids.push(ped);
        abs.push(row);
        has_future.push(full);
    }
    if ids.is_empty() {
        return Err(Error::Data(format!(
            "scene {scene}: no pedestrian has {t_obs} history frames up to frame {anchor}"
        )));
    }
    if ids.len() > cfg.max_peds {
        return Err(Error::Data(format!("scene {scene}: {} pedestrians exceed max_peds {}", ids.len(), cfg.max_peds)));
    }
    Ok(HistoryWindow {
        window: build_window(scene, start, ids, &abs, cfg)?,
        has_future,
        skipped,
    })
}

fn build_window(
    scene: &str,
    start: i64,
    ped_ids: Vec<i64>,
    abs: &[Vec<[f64; 2]>],
    cfg: &WindowConfig,
) -> Result<SceneWindow> {
    let n = ped_ids.len();
    let (t_obs, t_pred) = (cfg.obs_len, cfg.pred_len);
    let mut observed = Vec::with_capacity(n * t_obs * 2);
    let mut future = Vec::with_capacity(n * t_pred * 2);
    let mut origin = Vec::with_capacity(n * 2);
    for track in abs {
        observed.extend([0.0f32, 0.0]);
        for t in 1..t_obs + t_pred {
            let d = [
                (track[t][0] - track[t - 1][0]) as f32,
                (track[t][1] - track[t - 1][1]) as f32,
            ];
            if t < t_obs {
                observed.extend(d);
            } else {
                future.extend(d);
            }
        }
        origin.extend(track[t_obs - 1]);
    }
    let observed_abs: Vec<Vec<[f64; 2]>> = abs.iter().map(|tr| tr[..t_obs].to_vec()).collect();
    Ok(SceneWindow {
        scene_id: scene.to_string(),
        start_frame: start,
        ped_ids,
        observed: Tensor::new(vec![n, t_obs, 2], observed)?,
        future: Tensor::new(vec![n, t_pred, 2], future)?,
        origin: Tensor::new(vec![n, 2], origin)?,
        neighbor_mask: mask_from_positions(&observed_abs, cfg.neighbor_radius),
    })
}

fn mask_from_positions(tracks: &[Vec<[f64; 2]>], radius: f64) -> Vec<bool> {
    let n = tracks.len();
    let mut mask = vec![false; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let min_d = tracks[i]
                .iter()
                .zip(&tracks[j])
                .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            if min_d <= radius {
                mask[i * n + j] = true;
                mask[j * n + i] = true;
            }
        }
    }
    mask
}

/// Recomputes a window's neighbor mask with a different radius.
pub fn neighbor_sets(window: &SceneWindow, radius: f64) -> Result<Vec<bool>> {
    if !(radius > 0.0) {
        return Err(Error::Invalid("neighbor radius must be positive".into()));
    }
    Ok(mask_from_positions(&window.observed_positions(), radius))
}

/// Packs windows into a container for caching.
pub fn windows_to_container(windows: &[SceneWindow]) -> Result<Container> {
    let mut c = Container::new();
    c.set_meta("kind", "windows");
    c.set_meta("count", windows.len());
    for (i, w) in windows.iter().enumerate() {
        c.set_meta(format!("w{i}.scene"), &w.scene_id);
        c.set_meta(format!("w{i}.start"), w.start_frame);
        let n = w.num_peds();
        c.push(NamedArray::from_i64(format!("w{i}.peds"), vec![n], &w.ped_ids))?;
        c.push(NamedArray::from_f32(format!("w{i}.observed"), &w.observed))?;
        c.push(NamedArray::from_f32(format!("w{i}.future"), &w.future))?;
        c.push(NamedArray::from_f64(format!("w{i}.origin"), vec![n, 2], w.origin.data()))?;
        let mask: Vec<u8> = w.neighbor_mask.iter().map(|&b| b as u8).collect();
        c.push(NamedArray::from_u8(format!("w{i}.mask"), vec![n, n], &mask))?;
    }
    Ok(c)
}

pub fn windows_from_container(c: &Container) -> Result<Vec<SceneWindow>> {
    if c.meta("kind")? != "windows" {
        return Err(Error::Format("container does not hold windows".into()));
    }
    let count: usize = c.meta_parse("count")?;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let ped_ids = c.get(&format!("w{i}.peds"))?.to_i64_vec()?;
        let n = ped_ids.len();
        let observed = c.get(&format!("w{i}.observed"))?.to_f32()?;
        let future = c.get(&format!("w{i}.future"))?.to_f32()?;
        let origin_arr = c.get(&format!("w{i}.origin"))?;
        let origin = Tensor::new(origin_arr.shape.clone(), origin_arr.to_f64_vec()?)?;
        let mask = c.get(&format!("w{i}.mask"))?.as_u8()?;
        let shapes_ok = observed.rank() == 3
            && observed.shape()[0] == n
            && observed.shape()[2] == 2
            && future.rank() == 3
            && future.shape()[0] == n
            && future.shape()[2] == 2
            && origin.shape() == [n, 2]
            && mask.len() == n * n;
        if !shapes_ok {
            return Err(Error::Format(format!("window {i} has inconsistent shapes")));
        }
        out.push(SceneWindow {
            scene_id: c.meta(&format!("w{i}.scene"))?.to_string(),
            start_frame: c.meta_parse(&format!("w{i}.start"))?,
            ped_ids,
            observed,
            future,
            origin,
            neighbor_mask: mask.iter().map(|&b| b != 0).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(scene: &str, ped: i64, frames: std::ops::Range<i64>, start: [f64; 2], v: [f64; 2]) -> Vec<RawTrack> {
        frames
            .map(|k| RawTrack {
                scene_id: scene.into(),
                frame_id: k * 10,
                ped_id: ped,
                x: start[0] + v[0] * k as f64,
                y: start[1] + v[1] * k as f64,
            })
            .collect()
    }

    #[test]
    fn twenty_five_frames_give_six_windows() {
        let tracks = straight("s", 1, 0..25, [0.0, 0.0], [0.1, 0.0]);
        let w = window_scenes(&tracks, &WindowConfig::default()).unwrap();
        assert_eq!(w.len(), 6);
        assert!(w.iter().all(|w| w.num_peds() == 1));
    }

    #[test]
    fn nineteen_frames_give_nothing() {
        let tracks = straight("s", 1, 0..19, [0.0, 0.0], [0.1, 0.0]);
        assert!(window_scenes(&tracks, &WindowConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn constant_velocity_displacements() {
        let tracks = straight("s", 1, 0..20, [3.0, -2.0], [0.1, 0.0]);
        let w = &window_scenes(&tracks, &WindowConfig::default()).unwrap()[0];
        let obs = w.observed.data();
        assert_eq!(&obs[..2], &[0.0, 0.0]);
        for d in obs[2..].chunks(2).chain(w.future.data().chunks(2)) {
            assert!((d[0] - 0.1).abs() < 1e-6 && d[1] == 0.0, "{d:?}");
        }
        let o = w.origin.data();
        assert!((o[0] - 3.7).abs() < 1e-12 && o[1] == -2.0);
    }

    #[test]
    fn non_uniform_grid_rejected() {
        let mut tracks = straight("s", 1, 0..3, [0.0, 0.0], [0.1, 0.0]);
        tracks[2].frame_id = 25;
        assert!(matches!(
            window_scenes(&tracks, &WindowConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn reconstruction_matches_raw_positions() {
        let mut tracks = Vec::new();
        for p in 0..3 {
            tracks.extend(
                straight("s", p, 0..30, [p as f64, 1.0], [0.07, -0.03])
                    .into_iter()
                    .enumerate()
                    .map(|(k, mut t)| {
                        t.x += (k as f64 * 1.3 + p as f64).sin() * 0.2;
                        t
                    }),
            );
        }
        let by_key: BTreeMap<(i64, i64), [f64; 2]> = tracks
            .iter()
            .map(|t| ((t.ped_id, t.frame_id), [t.x, t.y]))
            .collect();
        for w in window_scenes(&tracks, &WindowConfig::default()).unwrap() {
            let obs = w.observed_positions();
            let fut = w.future_positions();
            for (n, &ped) in w.ped_ids.iter().enumerate() {
                let all = obs[n].iter().chain(&fut[n]);
                for (k, p) in all.enumerate() {
                    let raw = by_key[&(ped, w.start_frame + 10 * k as i64)];
                    assert!((p[0] - raw[0]).abs() < 1e-5 && (p[1] - raw[1]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn cap_keeps_longest_tracks() {
        let mut tracks = Vec::new();
        for p in 0..5 {
            tracks.extend(straight("s", p, 0..20 + p, [p as f64, 0.0], [0.1, 0.0]));
        }
        let cfg = WindowConfig {
            max_peds: 2,
            ..Default::default()
        };
        let w = window_scenes(&tracks, &cfg).unwrap();
        assert_eq!(w[0].ped_ids, vec![3, 4]);
    }

    #[test]
    fn neighbor_radius_rules() {
        let mut tracks = straight("s", 1, 0..20, [0.0, 0.0], [0.1, 0.0]);
        tracks.extend(straight("s", 2, 0..20, [0.0, 0.5], [0.1, 0.0]));
        tracks.extend(straight("s", 3, 0..20, [100.0, 0.0], [0.1, 0.0]));
        let w = &window_scenes(&tracks, &WindowConfig::default()).unwrap()[0];
        assert!(w.is_neighbor(0, 1) && w.is_neighbor(1, 0));
        assert!(!w.is_neighbor(0, 2) && !w.is_neighbor(2, 1));
        assert!((0..3).all(|i| !w.is_neighbor(i, i)));
        assert_eq!(neighbor_sets(w, 5.0).unwrap(), w.neighbor_mask);
        assert!(neighbor_sets(w, 0.1).unwrap().iter().all(|&b| !b));
        assert!(neighbor_sets(w, 0.0).is_err());
    }

    #[test]
    fn history_window_anchor_and_skips() {
        let mut tracks = straight("s", 1, 0..8, [0.0, 0.0], [1.0, 0.0]);
        tracks.extend(straight("s", 2, 3..8, [5.0, 0.0], [0.0, 1.0]));
        let h = history_window(&tracks, &WindowConfig::default(), None).unwrap();
        assert_eq!(h.window.ped_ids, vec![1]);
        assert_eq!(h.skipped.len(), 1);
        assert_eq!(h.has_future, vec![false]);
        assert_eq!(h.window.origin.data(), &[7.0, 0.0]);
        assert!(h.window.future.data().iter().all(|&v| v == 0.0));
        let long = straight("s", 1, 0..20, [0.0, 0.0], [1.0, 0.0]);
        let h = history_window(&long, &WindowConfig::default(), Some(70)).unwrap();
        assert_eq!(h.has_future, vec![true]);
        let w = &window_scenes(&long, &WindowConfig::default()).unwrap()[0];
        assert_eq!(&h.window, w);
        assert!(history_window(&tracks[..3], &WindowConfig::default(), None).is_err());
    }

    #[test]
    fn container_cache_round_trip() {
        let mut tracks = straight("a", 1, 0..22, [0.0, 0.0], [0.1, 0.2]);
        tracks.extend(straight("b", 4, 0..21, [1.0, 0.5], [-0.1, 0.0]));
        let w = window_scenes(&tracks, &WindowConfig::default()).unwrap();
        let c = windows_to_container(&w).unwrap();
        let back = windows_from_container(&Container::decode(&c.encode()).unwrap()).unwrap();
        assert_eq!(w, back);
    }
}
