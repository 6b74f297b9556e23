//! Domain records, annotation/supervision JSONL persistence, and the
//! seconds-to-frame index mapping shared by the rest of the toolkit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("invalid record '{id}': {message}")]
    InvalidRecord { id: String, message: String },
    #[error("invalid supervision target '{id}': {message}")]
    InvalidTarget { id: String, message: String },
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Loader behaviour on invalid lines. Supervision generation defaults to
/// `Strict`; bulk evaluation defaults to `Lenient` (skip with a warning).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    Strict,
    Lenient,
}

/// A temporal interval in seconds (or clip indices) with `start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSegment")]
pub struct Segment {
    start: f64,
    end: f64,
}

#[derive(Deserialize)]
struct RawSegment {
    start: f64,
    end: f64,
}

impl TryFrom<RawSegment> for Segment {
    type Error = DataError;

    fn try_from(raw: RawSegment) -> Result<Self, Self::Error> {
        Segment::new(raw.start, raw.end)
    }
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Result<Self, DataError> {
        if !start.is_finite() || !end.is_finite() {
            return Err(DataError::InvalidSegment(format!(
                "endpoints must be finite (got {start}, {end})"
            )));
        }
        if start >= end {
            return Err(DataError::InvalidSegment(format!(
                "start must precede end (got {start} >= {end})"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// One video's identity, timing metadata, annotation, and embedding reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AnnotationRow", into = "AnnotationRow")]
pub struct VideoRecord {
    video_id: String,
    duration_sec: f64,
    clip_stride_sec: f64,
    annotation: Segment,
    query_text: String,
    embeddings_path: Option<String>,
}

/// Wire form of one annotations JSONL line.
#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRow {
    video_id: String,
    query: String,
    start_sec: f64,
    end_sec: f64,
    duration_sec: f64,
    clip_stride_sec: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embeddings_path: Option<String>,
}

impl TryFrom<AnnotationRow> for VideoRecord {
    type Error = DataError;

    fn try_from(row: AnnotationRow) -> Result<Self, Self::Error> {
        let annotation = Segment::new(row.start_sec, row.end_sec)?;
        VideoRecord::new(
            row.video_id,
            row.duration_sec,
            row.clip_stride_sec,
            annotation,
            row.query,
            row.embeddings_path,
        )
    }
}

impl From<VideoRecord> for AnnotationRow {
    fn from(record: VideoRecord) -> Self {
        AnnotationRow {
            video_id: record.video_id,
            query: record.query_text,
            start_sec: sig9(record.annotation.start),
            end_sec: sig9(record.annotation.end),
            duration_sec: sig9(record.duration_sec),
            clip_stride_sec: sig9(record.clip_stride_sec),
            embeddings_path: record.embeddings_path,
        }
    }
}

impl VideoRecord {
    pub fn new(
        video_id: String,
        duration_sec: f64,
        clip_stride_sec: f64,
        annotation: Segment,
        query_text: String,
        embeddings_path: Option<String>,
    ) -> Result<Self, DataError> {
        let invalid = |message: String| DataError::InvalidRecord {
            id: video_id.clone(),
            message,
        };
        if !duration_sec.is_finite() || duration_sec <= 0.0 {
            return Err(invalid(format!("duration must be positive ({duration_sec})")));
        }
        if !clip_stride_sec.is_finite() || clip_stride_sec <= 0.0 {
            return Err(invalid(format!(
                "clip stride must be positive ({clip_stride_sec})"
            )));
        }
        if annotation.start < 0.0 || annotation.end > duration_sec {
            return Err(invalid(format!(
                "annotation [{}, {}] escapes [0, {duration_sec}]",
                annotation.start, annotation.end
            )));
        }
        let frames = (duration_sec / clip_stride_sec).ceil() as usize;
        if frames < 2 {
            return Err(invalid(format!(
                "ceil(duration/stride) = {frames}, need at least 2 frame rows"
            )));
        }
        Ok(Self {
            video_id,
            duration_sec,
            clip_stride_sec,
            annotation,
            query_text,
            embeddings_path,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn duration_sec(&self) -> f64 {
        self.duration_sec
    }

    pub fn clip_stride_sec(&self) -> f64 {
        self.clip_stride_sec
    }

    pub fn annotation(&self) -> &Segment {
        &self.annotation
    }

    pub fn query_text(&self) -> &str {
        &self.query_text
    }

    pub fn embeddings_path(&self) -> Option<&str> {
        self.embeddings_path.as_deref()
    }

    /// Number of frame-level feature rows, `ceil(duration / stride)`.
    pub fn num_frames(&self) -> usize {
        (self.duration_sec / self.clip_stride_sec).ceil() as usize
    }

    /// Annotated start boundary as a frame row index.
    pub fn start_frame(&self) -> usize {
        frame_of_time(self.annotation.start, self.clip_stride_sec, self.num_frames())
    }

    /// Annotated end boundary as a frame row index.
    pub fn end_frame(&self) -> usize {
        frame_of_time(self.annotation.end, self.clip_stride_sec, self.num_frames())
    }

    /// Returns a copy with a different annotation, revalidating invariants.
    pub fn with_annotation(&self, annotation: Segment) -> Result<Self, DataError> {
        VideoRecord::new(
            self.video_id.clone(),
            self.duration_sec,
            self.clip_stride_sec,
            annotation,
            self.query_text.clone(),
            self.embeddings_path.clone(),
        )
    }
}

/// Maps a timestamp to a frame row index: `clamp(floor(t / stride), 0, frames - 1)`.
pub fn frame_of_time(t: f64, stride: f64, frames: usize) -> usize {
    debug_assert!(t >= 0.0 && stride > 0.0 && frames > 0);
    let idx = (t / stride).floor();
    (idx as i64).clamp(0, frames as i64 - 1) as usize
}

/// Pseudo boundaries plus the per-frame probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionTarget {
    pub video_id: String,
    pub s_prime: usize,
    pub e_prime: usize,
    pub probs: Vec<f64>,
}

impl SupervisionTarget {
    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |message: String| DataError::InvalidTarget {
            id: self.video_id.clone(),
            message,
        };
        if self.probs.is_empty() {
            return Err(invalid("probability vector is empty".into()));
        }
        if self.s_prime > self.e_prime || self.e_prime >= self.probs.len() {
            return Err(invalid(format!(
                "need 0 <= s' <= e' <= T-1, got s'={}, e'={}, T={}",
                self.s_prime,
                self.e_prime,
                self.probs.len()
            )));
        }
        for (i, p) in self.probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(p) {
                return Err(invalid(format!("probs[{i}] = {p} escapes [0, 1]")));
            }
        }
        for i in self.s_prime..=self.e_prime {
            if self.probs[i] != 1.0 {
                return Err(invalid(format!(
                    "probs[{i}] = {} inside [s', e'] must be exactly 1",
                    self.probs[i]
                )));
            }
        }
        Ok(())
    }
}

/// Rounds to at most 9 significant digits for text serialization.
pub(crate) fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("sig9 format round-trips")
}

fn is_provenance_line(line: &str) -> bool {
    if !line.contains("_provenance") {
        return false;
    }
    serde_json::from_str::<serde_json::Value>(line)
        .map(|v| v.get("_provenance").is_some())
        .unwrap_or(false)
}

/// Loads annotations JSONL. Invalid lines are fatal under `Strict` and
/// skipped with a warning under `Lenient`. A leading `_provenance` header
/// line (written by the perturbation command) is ignored.
pub fn load_annotations(path: &Path, strictness: Strictness) -> Result<Vec<VideoRecord>, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || is_provenance_line(trimmed) {
            continue;
        }
        match serde_json::from_str::<VideoRecord>(trimmed) {
            Ok(record) => records.push(record),
            Err(err) => match strictness {
                Strictness::Strict => {
                    return Err(DataError::Line {
                        line: lineno + 1,
                        message: err.to_string(),
                    })
                }
                Strictness::Lenient => {
                    log::warn!("skipping annotations line {}: {err}", lineno + 1);
                }
            },
        }
    }
    if records.is_empty() {
        log::warn!("no valid annotation records in {}", path.display());
    }
    Ok(records)
}

/// Writes annotations JSONL, optionally preceded by a `_provenance` header line.
pub fn save_annotations(
    records: &[VideoRecord],
    path: &Path,
    provenance: Option<&serde_json::Value>,
) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path)?);
    if let Some(value) = provenance {
        let header = serde_json::json!({ "_provenance": value });
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
    }
    for record in records {
        writeln!(out, "{}", serde_json::to_string(record)?)?;
    }
    out.flush()?;
    Ok(())
}

/// Validates and writes supervision targets as JSONL. Probabilities are
/// serialized with at most 9 significant digits.
pub fn save_supervision(targets: &[SupervisionTarget], path: &Path) -> Result<(), DataError> {
    for target in targets {
        target.validate()?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    for target in targets {
        let rounded = SupervisionTarget {
            video_id: target.video_id.clone(),
            s_prime: target.s_prime,
            e_prime: target.e_prime,
            probs: target.probs.iter().copied().map(sig9).collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&rounded)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_supervision(path: &Path) -> Result<Vec<SupervisionTarget>, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut targets = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let target: SupervisionTarget =
            serde_json::from_str(trimmed).map_err(|err| DataError::Line {
                line: lineno + 1,
                message: err.to_string(),
            })?;
        target.validate()?;
        targets.push(target);
    }
    Ok(targets)
}
