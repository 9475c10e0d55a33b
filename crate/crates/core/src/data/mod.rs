//! Datasets: CIFAR-10 ingestion, synthetic quadrant/octant data, splitting
//! and per-channel standardisation.

mod cifar;
mod prep;
mod synth;

use serde::{Deserialize, Serialize};

pub use cifar::{
    cifar_root, load_cifar10, read_cifar_file, write_cifar_file, CifarRecord, CIFAR_CLASSES, CIFAR_FILES,
    CIFAR_PIXELS, CIFAR_RECORD_BYTES, DATA_ENV,
};
pub use prep::{normalize, split, NormStats};
pub use synth::{bayes_accuracy, bayes_predict, default_patterns, synth2d, synth3d, PatternRow, SynthSpec};

use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// Labelled image batch `[N, C, spatial...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    /// Set once [`normalize`] has been applied.
    pub stats: Option<NormStats>,
}

impl<T: Real> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if images.shape()[0] != labels.len() {
            return Err(Error::dim(
                "dataset",
                format!("{} images but {} labels", images.shape()[0], labels.len()),
            ));
        }
        if images.rank() < 3 {
            return Err(Error::dim(
                "dataset",
                format!("images {:?} need [N, C, spatial...]", images.shape()),
            ));
        }
        if let Some(i) = labels.iter().position(|&l| l >= classes) {
            return Err(Error::Index {
                what: "label",
                index: labels[i],
                limit: classes,
            });
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            split,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape `[C, spatial...]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn spatial_extents(&self) -> &[usize] {
        &self.images.shape()[2..]
    }

    pub fn image(&self, i: usize) -> Tensor<T> {
        Tensor::new(self.sample_shape().to_vec(), self.images.row(i).to_vec()).expect("row matches sample shape")
    }

    /// Images and labels at `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let images = self.images.select_rows(indices)?;
        Ok((images, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Result<Self> {
        let (images, labels) = self.batch(indices)?;
        Ok(Dataset {
            images,
            labels,
            classes: self.classes,
            split,
            stats: self.stats.clone(),
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn cast<U: Real>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            classes: self.classes,
            split: self.split,
            stats: self.stats.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_out_of_range_rejected() {
        let x = Tensor::<f64>::zeros(vec![2, 1, 2, 2]);
        assert!(Dataset::new(x.clone(), vec![0, 3], 3, Split::Train).is_err());
        assert!(Dataset::new(x, vec![0, 2], 3, Split::Train).is_ok());
    }

    #[test]
    fn count_mismatch_rejected() {
        let x = Tensor::<f64>::zeros(vec![2, 1, 2, 2]);
        assert!(Dataset::new(x, vec![0], 3, Split::Train).is_err());
    }
}
