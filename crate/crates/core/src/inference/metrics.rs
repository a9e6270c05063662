use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

pub type Path2 = Vec<[f64; 2]>;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_lengths(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Invalid(format!(
            "trajectory lengths differ or are empty: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Mean Euclidean distance over timesteps.
pub fn ade(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    check_lengths(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(&p, &g)| dist(p, g)).sum::<f64>() / pred.len() as f64)
}

/// Euclidean distance at the last timestep.
pub fn fde(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    check_lengths(pred, gt)?;
    Ok(dist(*pred.last().expect("non-empty"), *gt.last().expect("non-empty")))
}

/// ADE-minimising candidate and its (ADE, FDE). Ties keep the earliest candidate.
pub fn best_of_n(candidates: &[Path2], gt: &[[f64; 2]]) -> Result<(usize, f64, f64)> {
    if candidates.is_empty() {
        return Err(Error::Invalid("no candidates".into()));
    }
    let mut best = (0, f64::INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let a = ade(c, gt)?;
        if a < best.1 {
            best = (i, a);
        }
    }
    Ok((best.0, best.1, fde(&candidates[best.0], gt)?))
}

/// Accumulated errors for one scene.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SceneMetrics {
    pub scene: String,
    pub ade: f64,
    pub fde: f64,
    pub windows: usize,
    pub pedestrians: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// e.g. "10+10" or "20".
    pub protocol: String,
    pub scenes: Vec<SceneMetrics>,
    pub avg_ade: f64,
    pub avg_fde: f64,
}

impl EvalReport {
    /// Groups per-window `(ade, fde)` lists by scene. Scene rows average over
    /// pedestrians; AVG is the unweighted mean of scene rows.
    pub fn from_windows(protocol: &str, per_window: &[(String, Vec<(f64, f64)>)]) -> Result<Self> {
        if per_window.is_empty() {
            return Err(Error::Data("no windows to evaluate".into()));
        }
        let mut by_scene: BTreeMap<&str, SceneMetrics> = BTreeMap::new();
        for (scene, errs) in per_window {
            let m = by_scene.entry(scene).or_insert_with(|| SceneMetrics {
                scene: scene.clone(),
                ..Default::default()
            });
            m.windows += 1;
            m.pedestrians += errs.len();
            for (a, f) in errs {
                m.ade += a;
                m.fde += f;
            }
        }
        let scenes: Vec<SceneMetrics> = by_scene
            .into_values()
            .map(|mut m| {
                let n = m.pedestrians.max(1) as f64;
                m.ade /= n;
                m.fde /= n;
                m
            })
            .collect();
        let k = scenes.len() as f64;
        Ok(EvalReport {
            protocol: protocol.to_string(),
            avg_ade: scenes.iter().map(|s| s.ade).sum::<f64>() / k,
            avg_fde: scenes.iter().map(|s| s.fde).sum::<f64>() / k,
            scenes,
        })
    }

    /// `# key=value` metadata lines, a header, one row per scene and an AVG row.
    pub fn to_csv(&self, meta: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in meta {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str("scene,n_protocol,ade,fde,windows,pedestrians\n");
        for s in &self.scenes {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{},{}\n",
                s.scene, self.protocol, s.ade, s.fde, s.windows, s.pedestrians
            ));
        }
        let (w, p) = self
            .scenes
            .iter()
            .fold((0, 0), |(w, p), s| (w + s.windows, p + s.pedestrians));
        out.push_str(&format!(
            "AVG,{},{:.6},{:.6},{},{}\n",
            self.protocol, self.avg_ade, self.avg_fde, w, p
        ));
        out
    }

    pub fn to_json(&self, meta: &[(String, String)]) -> String {
        let meta: BTreeMap<&str, &str> = meta.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        serde_json::to_string_pretty(&serde_json::json!({ "meta": meta, "report": self }))
            .expect("report serialises")
    }

    /// "ADE/FDE" console table.
    pub fn table(&self) -> String {
        let mut out = format!("{:<16} {:>13}\n", "scene", "ADE/FDE");
        for s in &self.scenes {
            out.push_str(&format!("{:<16} {:>6.2}/{:<6.2}\n", s.scene, s.ade, s.fde));
        }
        out.push_str(&format!("{:<16} {:>6.2}/{:<6.2}\n", "AVG", self.avg_ade, self.avg_fde));
        out
    }
}
