use std::collections::HashSet;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train_scenes: Vec<String>,
    pub test_scene: String,
}

/// One leave-one-out split per scene, in input order.
pub fn make_splits<S: AsRef<str>>(scene_names: &[S]) -> Result<Vec<DatasetSplit>> {
    if scene_names.len() < 2 {
        return Err(Error::Invalid("need at least two scenes to split".into()));
    }
    let mut seen = HashSet::new();
    for s in scene_names {
        if !seen.insert(s.as_ref()) {
            return Err(Error::Invalid(format!("duplicate scene name {}", s.as_ref())));
        }
    }
    Ok(scene_names
        .iter()
        .map(|test| DatasetSplit {
            test_scene: test.as_ref().to_string(),
            train_scenes: scene_names
                .iter()
                .map(|s| s.as_ref().to_string())
                .filter(|s| s != test.as_ref())
                .collect(),
        })
        .collect())
}
