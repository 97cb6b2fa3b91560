use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::tensor::{HeartState, Roi, SequenceAnnotation, SplitHint, VideoSequence};

pub const MANIFEST_HEADER: [&str; 9] =
    ["sequence_id", "path", "heart_state", "failure_age_months", "roi_x", "roi_y", "roi_w", "roi_h", "split_hint"];

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: cannot parse `{column}` value {value:?}")]
    BadNumber { row: usize, column: String, value: String },
    #[error("row {row}: roi columns must be all set or all empty")]
    PartialRoi { row: usize },
    #[error("row {row}: unknown split hint {value:?}")]
    BadSplit { row: usize, value: String },
    #[error("duplicate sequence id `{0}`")]
    DuplicateId(String),
    #[error("sequence `{id}` ({path}): {message}")]
    BadSequence { id: String, path: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub annotation: SequenceAnnotation,
}

/// Reads a manifest; relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, ManifestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = read_manifest_str(&text)?;
    for e in &mut entries {
        if e.path.is_relative() {
            e.path = base.join(&e.path);
        }
    }
    Ok(entries)
}

pub fn read_manifest_str(text: &str) -> Result<Vec<ManifestEntry>, ManifestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [None; 9];
    for (slot, name) in idx.iter_mut().zip(MANIFEST_HEADER) {
        *slot = col(name);
    }
    for (i, name) in MANIFEST_HEADER.iter().enumerate().take(4) {
        if idx[i].is_none() {
            return Err(ManifestError::MissingColumn(name.to_string()));
        }
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| idx[i].and_then(|c| rec.get(c)).unwrap_or("");
        let id = field(0).to_string();
        if !seen.insert(id.clone()) {
            return Err(ManifestError::DuplicateId(id));
        }
        let age_raw = field(3);
        let age: f64 = age_raw.parse().map_err(|_| ManifestError::BadNumber {
            row,
            column: MANIFEST_HEADER[3].into(),
            value: age_raw.into(),
        })?;
        if !(age.is_finite() && age >= 0.0) {
            return Err(ManifestError::BadNumber { row, column: MANIFEST_HEADER[3].into(), value: age_raw.into() });
        }

        let roi_raw: Vec<&str> = (4..8).map(field).collect();
        let roi = if roi_raw.iter().all(|s| s.is_empty()) {
            None
        } else if roi_raw.iter().any(|s| s.is_empty()) {
            return Err(ManifestError::PartialRoi { row });
        } else {
            let mut v = [0usize; 4];
            for (k, s) in roi_raw.iter().enumerate() {
                v[k] = s.parse().map_err(|_| ManifestError::BadNumber {
                    row,
                    column: MANIFEST_HEADER[4 + k].into(),
                    value: s.to_string(),
                })?;
            }
            Some(Roi { x: v[0], y: v[1], width: v[2], height: v[3] })
        };

        let split_raw = field(8);
        let split_hint = if split_raw.is_empty() {
            None
        } else {
            Some(SplitHint::parse(split_raw).ok_or_else(|| ManifestError::BadSplit { row, value: split_raw.into() })?)
        };

        out.push(ManifestEntry {
            path: PathBuf::from(field(1)),
            annotation: SequenceAnnotation {
                sequence_id: id,
                heart_state: HeartState::parse(field(2)),
                failure_age_months: age,
                roi,
                split_hint,
            },
        });
    }
    Ok(out)
}

/// Loads the `[N_x, N_y, K]` video of a manifest entry (f32 data is widened).
pub fn load_sequence(entry: &ManifestEntry, dt_seconds: f64) -> Result<VideoSequence, ManifestError> {
    let bad = |message: String| ManifestError::BadSequence {
        id: entry.annotation.sequence_id.clone(),
        path: entry.path.display().to_string(),
        message,
    };
    let frames = super::read_tensor_file(&entry.path).map_err(|e| bad(e.to_string()))?;
    VideoSequence::new(frames, dt_seconds, entry.annotation.clone()).map_err(|e| bad(e.to_string()))
}
