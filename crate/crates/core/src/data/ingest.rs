use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// One observation: a pedestrian's world position at one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTrack {
    pub scene_id: String,
    pub frame_id: i64,
    pub ped_id: i64,
    pub x: f64,
    pub y: f64,
}

/// Reads a whitespace-separated `frame_id ped_id x y` file.
pub fn ingest_benchmark_file(path: &Path, scene_id: &str) -> Result<Vec<RawTrack>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_benchmark(&text, scene_id, &path.display().to_string())
}

/// Parses benchmark text. `source` names the input in error messages.
///
/// Blank lines and `#` comments are skipped. Ids may be written as integral
/// floats (`780.0`), as the public files do. Output is sorted by
/// `(ped_id, frame_id)`.
pub fn parse_benchmark(text: &str, scene_id: &str, source: &str) -> Result<Vec<RawTrack>> {
    let mut tracks = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: line_no,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let mut nums = [0f64; 4];
        for (slot, field) in nums.iter_mut().zip(&fields) {
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("non-numeric field {field:?}")))?;
        }
        let as_id = |v: f64, what: &str| -> Result<i64> {
            if v.fract() != 0.0 || v.abs() > 9.0e15 {
                return Err(err(format!("{what} {v} is not an integer")));
            }
            Ok(v as i64)
        };
        let frame_id = as_id(nums[0], "frame_id")?;
        let ped_id = as_id(nums[1], "ped_id")?;
        if !seen.insert((frame_id, ped_id)) {
            return Err(err(format!(
                "duplicate observation for pedestrian {ped_id} at frame {frame_id}"
            )));
        }
        tracks.push(RawTrack {
            scene_id: scene_id.to_string(),
            frame_id,
            ped_id,
            x: nums[2],
            y: nums[3],
        });
    }
    tracks.sort_by_key(|t| (t.ped_id, t.frame_id));
    Ok(tracks)
}

/// Writes tracks in benchmark format, ordered by frame then pedestrian.
pub fn format_benchmark(tracks: &[RawTrack]) -> String {
    let mut sorted: Vec<&RawTrack> = tracks.iter().collect();
    sorted.sort_by_key(|t| (t.frame_id, t.ped_id));
    let mut out = String::new();
    for t in sorted {
        out.push_str(&format!("{} {} {:.6} {:.6}\n", t.frame_id, t.ped_id, t.x, t.y));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_line_track() {
        let tracks = parse_benchmark("0 1 0.0 0.0\n10 1 0.4 0.0\n", "s", "mem").unwrap();
        assert_eq!(tracks.len(), 2);
        assert!(tracks.iter().all(|t| t.ped_id == 1));
        assert_eq!(tracks[1].x, 0.4);
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_benchmark("", "s", "mem").unwrap().is_empty());
        assert!(parse_benchmark("\n# only a comment\n\n", "s", "mem").unwrap().is_empty());
    }

    #[test]
    fn non_numeric_field_names_line() {
        let err = parse_benchmark("0 1 abc 0.0", "s", "mem").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_pair_rejected() {
        let err = parse_benchmark("0 1 0 0\n# c\n0 1 1 1\n", "s", "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn float_ids_and_sorting() {
        let text = "790.0 2.0 1 1\n780.0 2.0 0 0\n780.0 1.0 5 5 # trailing comment\n";
        let tracks = parse_benchmark(text, "eth", "mem").unwrap();
        let keys: Vec<_> = tracks.iter().map(|t| (t.ped_id, t.frame_id)).collect();
        assert_eq!(keys, vec![(1, 780), (2, 780), (2, 790)]);
        assert!(parse_benchmark("780.5 1 0 0", "eth", "mem").is_err());
        assert!(parse_benchmark("1 2 3", "eth", "mem").is_err());
        assert!(parse_benchmark("1 2 3 nan", "eth", "mem").is_err());
    }

    #[test]
    fn format_round_trips() {
        let text = "0 1 0.5 -1.25\n0 2 3 4\n10 1 0.75 -1\n";
        let tracks = parse_benchmark(text, "s", "mem").unwrap();
        let back = parse_benchmark(&format_benchmark(&tracks), "s", "mem").unwrap();
        assert_eq!(tracks, back);
    }
}
