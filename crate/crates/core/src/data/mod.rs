//! Trajectory ingestion, synthetic scenes, windowing and splits.

mod ingest;
mod split;
mod synth;
mod window;

pub use ingest::{format_benchmark, ingest_benchmark_file, parse_benchmark, RawTrack};
pub use split::{make_splits, DatasetSplit};
pub use synth::{scene_name, simulate, synthesize_scenes, SynthConfig, Walker, FRAME_DT, FRAME_ID_STEP};
pub use window::{
    cumulate, history_window, neighbor_sets, window_scenes, windows_from_container, windows_to_container, HistoryWindow,
    SceneWindow, WindowConfig,
};
