//! Synthetic segmentation data, split construction and the dataset file format.

mod format;
mod splits;
mod synth;

pub use format::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use splits::{make_splits, SplitPlan, SplitSizes};
pub use synth::{generate_synthetic, MAX_FOREGROUND, MIN_FOREGROUND};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    Version(u32),
    #[error("dataset header inconsistent with payload: {0}")]
    Header(String),
    #[error("dataset truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("corrupt dataset record: {0}")]
    Corrupt(String),
    #[error("invalid split request: {0}")]
    Split(String),
}

/// One 2D image with an optional binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    /// Row-major intensities in `[0, 1]`.
    pub image: Vec<f32>,
    /// Row-major `{0, 1}` labels; `None` for unlabeled samples.
    pub mask: Option<Vec<u8>>,
}

impl Sample {
    pub fn foreground_fraction(&self) -> Option<f64> {
        self.mask
            .as_ref()
            .map(|m| m.iter().map(|&v| v as f64).sum::<f64>() / m.len() as f64)
    }

    /// Copy without the mask.
    pub fn without_mask(&self) -> Sample {
        Sample {
            mask: None,
            ..self.clone()
        }
    }
}

/// Read access to a collection of samples.
pub trait SampleSet {
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> &Sample;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSet for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn sample(&self, index: usize) -> &Sample {
        &self[index]
    }
}

impl SampleSet for Vec<Sample> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn sample(&self, index: usize) -> &Sample {
        &self[index]
    }
}
