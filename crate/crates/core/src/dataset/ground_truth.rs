//! Ground-truth segment annotations, JSON-lines on disk.
//!
//! One object per video: `{"video_id": str, "segments": [{"start": number,
//! "end": number, "label": int}], "unit": "snippet"|"seconds"}`. Segments are
//! kept in their declared unit; evaluation converts to snippet units on
//! demand via the optional seconds-per-snippet factor.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Snippet,
    Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtSegment {
    pub start: f64,
    pub end: f64,
    pub label: usize,
}

/// Evaluation-only annotations. Training code never receives this type.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub videos: BTreeMap<String, Vec<GtSegment>>,
    pub unit: TimeUnit,
    pub seconds_per_snippet: Option<f64>,
}

impl GroundTruth {
    pub fn empty() -> Self {
        GroundTruth {
            videos: BTreeMap::new(),
            unit: TimeUnit::Snippet,
            seconds_per_snippet: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Segments for `video_id` converted to snippet units.
    pub fn snippet_segments(&self, video_id: &str) -> Result<Vec<GtSegment>> {
        let segs = match self.videos.get(video_id) {
            Some(s) => s,
            None => return Ok(Vec::new()),
        };
        match self.unit {
            TimeUnit::Snippet => Ok(segs.clone()),
            TimeUnit::Seconds => {
                let factor = self.seconds_per_snippet.ok_or_else(|| {
                    Error::validation(
                        "ground truth is in seconds but no seconds-per-snippet factor was given",
                    )
                })?;
                Ok(segs
                    .iter()
                    .map(|s| GtSegment {
                        start: s.start / factor,
                        end: s.end / factor,
                        label: s.label,
                    })
                    .collect())
            }
        }
    }

    /// Majority label per dataset video (by total annotated duration), `None`
    /// for videos with no annotation. Ties resolve to the lower label.
    pub fn majority_labels(&self, dataset: &Dataset) -> Result<Vec<Option<usize>>> {
        let mut out = Vec::with_capacity(dataset.len());
        for video in &dataset.videos {
            let segs = self.snippet_segments(&video.video_id)?;
            if segs.is_empty() {
                out.push(None);
                continue;
            }
            let mut weight = vec![0.0f64; dataset.num_classes];
            for s in &segs {
                weight[s.label] += s.end - s.start;
            }
            let best = weight
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .map(|(k, _)| k)
                .unwrap();
            out.push(Some(best));
        }
        Ok(out)
    }

    /// Checks that every annotated video exists and its segments stay within
    /// the video extent (in snippet units).
    pub fn validate_against(&self, dataset: &Dataset) -> Result<()> {
        for (id, _) in self.videos.iter() {
            let video = dataset
                .videos
                .iter()
                .find(|v| &v.video_id == id)
                .ok_or_else(|| {
                    Error::validation(format!("annotated video {id:?} is not in the dataset"))
                })?;
            for seg in self.snippet_segments(id)? {
                if seg.end > video.num_snippets() as f64 + 1e-9 {
                    return Err(Error::validation(format!(
                        "segment [{}, {}) exceeds video {id:?} extent of {} snippets",
                        seg.start,
                        seg.end,
                        video.num_snippets()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct GtLine {
    video_id: String,
    segments: Vec<GtSegment>,
    unit: TimeUnit,
}

pub fn load_ground_truth(
    path: &Path,
    num_classes: usize,
    seconds_per_snippet: Option<f64>,
) -> Result<GroundTruth> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut gt = GroundTruth::empty();
    gt.seconds_per_snippet = seconds_per_snippet;
    let mut unit: Option<TimeUnit> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: GtLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match unit {
            None => unit = Some(parsed.unit),
            Some(u) if u != parsed.unit => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "mixed time units across lines".to_string(),
                })
            }
            _ => {}
        }
        for seg in &parsed.segments {
            if !(seg.start.is_finite() && seg.end.is_finite()) || seg.start >= seg.end {
                return Err(Error::validation(format!(
                    "video {:?}: segment start {} must be below end {}",
                    parsed.video_id, seg.start, seg.end
                )));
            }
            if seg.label >= num_classes {
                return Err(Error::validation(format!(
                    "video {:?}: label {} outside [0, {num_classes})",
                    parsed.video_id, seg.label
                )));
            }
        }
        if gt
            .videos
            .insert(parsed.video_id.clone(), parsed.segments)
            .is_some()
        {
            return Err(Error::validation(format!(
                "duplicate annotation for video {:?}",
                parsed.video_id
            )));
        }
    }
    gt.unit = unit.unwrap_or(TimeUnit::Snippet);
    Ok(gt)
}

pub fn save_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (video_id, segments) in &gt.videos {
        let line = GtLine {
            video_id: video_id.clone(),
            segments: segments.clone(),
            unit: gt.unit,
        };
        serde_json::to_writer(&mut w, &line)
            .map_err(|e| Error::validation(format!("serializing ground truth: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
