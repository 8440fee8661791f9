//! Datasets: synthetic multi-modal ship chips, directory loading, bilinear
//! resizing and per-class resampling.

mod augment;
mod io;
mod resize;
mod synth;

pub use augment::augment_resample;
pub use io::{export_dir, load_dir};
pub use resize::resize_bilinear;
pub use synth::{render_mode_template, synth_generate, synth_split, ModeParams, SynthConfig};

use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::numcore::Tensor;
use crate::scalar::Scalar;

/// Where a sample came from.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Synthetic { mode: usize },
    File(PathBuf),
}

/// One single-channel image `[s, s, 1]` with pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub label: usize,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
    pub class_names: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Sample indices grouped by class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, s) in self.samples.iter().enumerate() {
            out[s.label].push(i);
        }
        out
    }

    /// SHA-256 over labels, shapes and pixel bit patterns (as `f64`).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_classes() as u64).to_le_bytes());
        for s in &self.samples {
            h.update((s.label as u64).to_le_bytes());
            for &d in s.image.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in s.image.data() {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
