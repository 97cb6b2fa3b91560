//! Closed-form sample counts per data kind and training case, and the
//! metadata-only "dry run" of the training-set sizes per case.

use std::path::Path;

use super::{DataKind, DatasetError, TrainingCase};
use crate::tensor::{HeartState, SplitHint};

/// Metadata of the reference corpus (sequence, snapshot and mode totals).
const REFERENCE_SUMMARY: &str = include_str!("../../data/reference_summary.csv");

/// Totals that determine how many images each kind contributes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SourceCounts {
    pub sequences: usize,
    /// Snapshots of all sequences (= SVD and HODMD reconstructions).
    pub snapshots: usize,
    pub svd_modes: usize,
    /// Complex HODMD modes; each yields abs/real/imag images.
    pub hodmd_modes: usize,
}

impl std::ops::Add for SourceCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            sequences: self.sequences + o.sequences,
            snapshots: self.snapshots + o.snapshots,
            svd_modes: self.svd_modes + o.svd_modes,
            hodmd_modes: self.hodmd_modes + o.hodmd_modes,
        }
    }
}

/// Images one kind contributes.
pub fn kind_count(kind: DataKind, c: &SourceCounts) -> usize {
    match kind {
        DataKind::Original | DataKind::Svd1Recon | DataKind::HodmdRecon => c.snapshots,
        DataKind::Svd1Mode => c.svd_modes,
        DataKind::HodmdMode | DataKind::Svd2Recon => 3 * c.hodmd_modes,
    }
}

/// Images a training case contains: the sum over its kinds.
pub fn case_count(case: &TrainingCase, c: &SourceCounts) -> usize {
    case.kinds.iter().map(|&k| kind_count(k, c)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub heart_state: HeartState,
    pub set: SplitHint,
    pub counts: SourceCounts,
}

/// Parses `heart_state,set,sequences,snapshots,svd_modes,hodmd_modes`.
pub fn read_summary_str(text: &str) -> Result<Vec<SummaryRow>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let want = ["heart_state", "set", "sequences", "snapshots", "svd_modes", "hodmd_modes"];
    let idx: Vec<usize> = want
        .iter()
        .map(|w| {
            headers.iter().position(|h| h == *w).ok_or_else(|| DatasetError::Summary(format!("missing column {w}")))
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        let num = |i: usize| {
            field(i)
                .parse::<usize>()
                .map_err(|_| DatasetError::Summary(format!("row {}: bad {} {:?}", line + 1, want[i], field(i))))
        };
        let set = SplitHint::parse(field(1))
            .ok_or_else(|| DatasetError::Summary(format!("row {}: bad set {:?}", line + 1, field(1))))?;
        rows.push(SummaryRow {
            heart_state: HeartState::parse(field(0)),
            set,
            counts: SourceCounts { sequences: num(2)?, snapshots: num(3)?, svd_modes: num(4)?, hodmd_modes: num(5)? },
        });
    }
    Ok(rows)
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>, DatasetError> {
    read_summary_str(&std::fs::read_to_string(path)?)
}

/// Per heart state totals of the reference corpus.
pub fn reference_summary() -> Vec<SummaryRow> {
    read_summary_str(REFERENCE_SUMMARY).expect("bundled summary parses")
}

/// Totals of every training case over the rows of `set`.
pub fn dry_run(rows: &[SummaryRow], set: SplitHint) -> Vec<(TrainingCase, usize)> {
    let total = rows.iter().filter(|r| r.set == set).fold(SourceCounts::default(), |acc, r| acc + r.counts);
    TrainingCase::all()
        .into_iter()
        .map(|c| {
            let n = case_count(&c, &total);
            (c, n)
        })
        .collect()
}
