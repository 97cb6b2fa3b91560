//! Stage 1 of the pipeline: ROI homogenization, modal-decomposition data
//! generation, the training-case combinator, complex-component
//! expansion, balanced splitting, augmentation and the dataset archive.

mod archive;
mod augment;
mod counts;
mod generate;
mod homogenize;
mod split;

pub use archive::{read_archive, write_archive, INDEX_HEADER};
pub use augment::{augment, erase, flip_horizontal, resize_bilinear, AugmentPolicy};
pub use counts::{
    case_count, dry_run, kind_count, read_summary, read_summary_str, reference_summary, SourceCounts, SummaryRow,
};
pub use generate::{
    decompose_sequence, expand_complex, generate_case, generate_sequence, images_for_kind, ExpandedMode,
    GenerationConfig, SequenceProducts,
};
pub use homogenize::{crop, detect_roi, homogenize, homogenize_sequence, otsu_threshold};
pub use split::{assign_splits, assign_splits_with_hints, partition, split_dataset, DatasetSplit, SequenceMeta};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hodmd::HodmdError;
use crate::io::FormatError;
use crate::modal::ModalError;
use crate::tensor::{DenseTensor, HeartState, ShapeError};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("training case must be in 1..=14, got {0}")]
    BadCase(u8),
    #[error("unknown data kind {0:?}")]
    BadKind(String),
    #[error("no region of interest found (frame is uniformly dark)")]
    EmptyRoi,
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("no sequences to split")]
    NoSequences,
    #[error("sequence {0} has no split assignment")]
    Unassigned(String),
    #[error("bad summary metadata: {0}")]
    Summary(String),
    #[error("bad dataset archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Modal(#[from] ModalError),
    #[error(transparent)]
    Hodmd(#[from] HodmdError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The six data types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Original,
    Svd1Recon,
    Svd1Mode,
    HodmdRecon,
    HodmdMode,
    Svd2Recon,
}

impl DataKind {
    pub const ALL: [DataKind; 6] = [
        DataKind::Original,
        DataKind::Svd1Recon,
        DataKind::Svd1Mode,
        DataKind::HodmdRecon,
        DataKind::HodmdMode,
        DataKind::Svd2Recon,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DataKind::Original => "original",
            DataKind::Svd1Recon => "svd1_recon",
            DataKind::Svd1Mode => "svd1_mode",
            DataKind::HodmdRecon => "hodmd_recon",
            DataKind::HodmdMode => "hodmd_mode",
            DataKind::Svd2Recon => "svd2_recon",
        }
    }

    pub fn parse(s: &str) -> Result<Self, DatasetError> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        DataKind::ALL.into_iter().find(|k| k.as_str() == norm).ok_or_else(|| DatasetError::BadKind(s.to_string()))
    }

    /// Kinds whose images come from complex HODMD modes.
    pub fn is_complex(self) -> bool {
        matches!(self, DataKind::HodmdMode | DataKind::Svd2Recon)
    }

    /// Kinds that need the HODMD stage (and thus `K >= min_snapshots`).
    pub fn needs_hodmd(self) -> bool {
        matches!(self, DataKind::HodmdRecon | DataKind::HodmdMode | DataKind::Svd2Recon)
    }
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which plane of a complex mode an image holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Real,
    Imag,
    Abs,
    NotComplex,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Real => "real",
            Component::Imag => "imag",
            Component::Abs => "abs",
            Component::NotComplex => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "real" => Some(Component::Real),
            "imag" => Some(Component::Imag),
            "abs" => Some(Component::Abs),
            "none" => Some(Component::NotComplex),
            _ => None,
        }
    }
}

/// A training case: the set of data kinds forming `D_train`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingCase {
    pub id: u8,
    pub kinds: Vec<DataKind>,
}

impl TrainingCase {
    pub fn new(id: u8) -> Result<Self, DatasetError> {
        use DataKind::*;
        let kinds = match id {
            1 => vec![Original],
            2 => vec![Svd1Recon],
            3 => vec![Original, Svd1Recon, Svd1Mode],
            4 => vec![Original, Svd1Recon],
            5 => vec![Svd1Recon, Svd1Mode],
            6 => vec![HodmdRecon],
            7 => vec![HodmdRecon, HodmdMode],
            8 => vec![Svd1Recon, HodmdRecon],
            9 => vec![Original, Svd1Recon, HodmdRecon],
            10 => vec![HodmdRecon, HodmdMode, Svd2Recon],
            11 => vec![Svd1Recon, Svd1Mode, HodmdRecon, HodmdMode],
            12 => vec![Svd1Recon, Svd1Mode, HodmdRecon, HodmdMode, Svd2Recon],
            13 => vec![Original, Svd1Recon, Svd1Mode, HodmdRecon, HodmdMode],
            14 => DataKind::ALL.to_vec(),
            other => return Err(DatasetError::BadCase(other)),
        };
        Ok(Self { id, kinds })
    }

    pub fn all() -> Vec<TrainingCase> {
        (1..=14).map(|i| TrainingCase::new(i).expect("valid case")).collect()
    }

    pub fn contains(&self, kind: DataKind) -> bool {
        self.kinds.contains(&kind)
    }
}

/// One training or test image with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// `[H, W]`, values in `[0, 1]`.
    pub image: DenseTensor<f64>,
    pub label_months: f64,
    pub kind: DataKind,
    pub component: Component,
    pub sequence_id: String,
    pub heart_state: HeartState,
    /// Position of the image among the sequence's images of this kind.
    pub index: usize,
}

impl SampleRecord {
    /// Stable identifier, also used as the archive file stem.
    pub fn sample_id(&self) -> String {
        let seq: String = self
            .sequence_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect();
        format!("{seq}__{}__{:05}__{}", self.kind.as_str(), self.index, self.component.as_str())
    }
}
