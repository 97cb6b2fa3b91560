//! Dataset archive: a directory of MDT images plus `index.csv`.

use std::fs;
use std::path::Path;

use super::{Component, DataKind, DatasetError, DatasetSplit, SampleRecord};
use crate::io::{read_tensor_file, write_tensor_file};
use crate::tensor::{HeartState, SplitHint};

pub const INDEX_HEADER: [&str; 8] =
    ["sample_id", "path", "kind", "component", "sequence_id", "heart_state", "label_months", "split"];

const IMAGE_DIR: &str = "images";

/// Writes every record of `split` and returns the number of images written.
pub fn write_archive(dir: impl AsRef<Path>, split: &DatasetSplit) -> Result<usize, DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join(IMAGE_DIR))?;
    let mut w = csv::Writer::from_path(dir.join("index.csv"))?;
    w.write_record(INDEX_HEADER)?;
    let mut n = 0;
    for part in [SplitHint::Train, SplitHint::Val, SplitHint::Test] {
        for r in split.part(part) {
            let id = r.sample_id();
            let rel = format!("{IMAGE_DIR}/{id}.mdt");
            write_tensor_file(dir.join(&rel), &r.image)?;
            w.write_record([
                id.as_str(),
                rel.as_str(),
                r.kind.as_str(),
                r.component.as_str(),
                r.sequence_id.as_str(),
                r.heart_state.as_str(),
                &r.label_months.to_string(),
                part.as_str(),
            ])?;
            n += 1;
        }
    }
    w.flush()?;
    Ok(n)
}

/// Loads an archive written by [`write_archive`].
pub fn read_archive(dir: impl AsRef<Path>) -> Result<DatasetSplit, DatasetError> {
    let dir = dir.as_ref();
    let mut rdr = csv::Reader::from_path(dir.join("index.csv"))?;
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(INDEX_HEADER.iter().copied()) {
        return Err(DatasetError::Archive(format!("unexpected index header {headers:?}")));
    }
    let mut split = DatasetSplit { train: Vec::new(), val: Vec::new(), test: Vec::new(), fractions: [0.0; 3] };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| DatasetError::Archive(format!("row {}: bad {what}", line + 1));
        let image = read_tensor_file(dir.join(&rec[1]))?;
        if image.ndim() != 2 {
            return Err(bad("image rank"));
        }
        let index = rec[0].split("__").nth(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("sample_id"))?;
        let record = SampleRecord {
            image,
            label_months: rec[6].parse().map_err(|_| bad("label_months"))?,
            kind: DataKind::parse(&rec[2])?,
            component: Component::parse(&rec[3]).ok_or_else(|| bad("component"))?,
            sequence_id: rec[4].to_string(),
            heart_state: HeartState::parse(&rec[5]),
            index,
        };
        match SplitHint::parse(&rec[7]).ok_or_else(|| bad("split"))? {
            SplitHint::Train => split.train.push(record),
            SplitHint::Val => split.val.push(record),
            SplitHint::Test => split.test.push(record),
        }
    }
    let total = split.len() as f64;
    if total > 0.0 {
        split.fractions = [split.train.len(), split.val.len(), split.test.len()].map(|n| n as f64 / total);
    }
    Ok(split)
}
