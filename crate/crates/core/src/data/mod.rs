//! Synthetic datasets, IID client partitioning and the binary container.

mod container;
mod generate;
mod partition;

pub use container::{
    read_container, read_container_bytes, write_container, write_container_bytes, Container,
};
pub use generate::{gen_blobs, gen_synth_images, IMAGE_SIDE};
pub use partition::{partition_iid, Partition};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Labelled samples; row `i` of `features` belongs to `labels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.rank() < 2 {
            return Err(Error::Data(format!(
                "features need a leading sample axis, got shape {:?}",
                features.shape()
            )));
        }
        if features.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Data("dataset has no samples".into()));
        }
        if classes < 2 {
            return Err(Error::Data(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows `indices` as a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.features.select_rows(indices)?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// A new dataset holding `indices` in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (features, labels) = self.batch(indices)?;
        Dataset::new(features, labels, self.classes, self.name.clone())
    }
}

/// How to obtain a train/test pair. Train and test samples come from
/// independent streams derived from one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Blobs {
        classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    SynthImages {
        classes: usize,
        channels: usize,
        train_per_class: usize,
        test_per_class: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// Pre-generated containers.
    Files { train: String, test: String },
}

fn default_spread() -> f64 {
    0.5
}

fn default_noise() -> f64 {
    0.5
}

impl DataSource {
    /// Per-sample shape and class count, when known without loading.
    pub fn describe(&self) -> Option<(Vec<usize>, usize)> {
        match *self {
            DataSource::Blobs { classes, dim, .. } => Some((vec![dim], classes)),
            DataSource::SynthImages {
                classes, channels, ..
            } => Some((vec![channels, IMAGE_SIDE, IMAGE_SIDE], classes)),
            DataSource::Files { .. } => None,
        }
    }

    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        let root = SeededRng::new(seed);
        let train_seed = root.derive("train").next_u64();
        let test_seed = root.derive("test").next_u64();
        match *self {
            DataSource::Blobs {
                classes,
                dim,
                train_per_class,
                test_per_class,
                spread,
            } => Ok((
                gen_blobs(classes, dim, train_per_class, spread, train_seed)?,
                gen_blobs(classes, dim, test_per_class, spread, test_seed)?,
            )),
            DataSource::SynthImages {
                classes,
                channels,
                train_per_class,
                test_per_class,
                noise,
            } => Ok((
                gen_synth_images(classes, channels, train_per_class, noise, train_seed)?,
                gen_synth_images(classes, channels, test_per_class, noise, test_seed)?,
            )),
            DataSource::Files {
                ref train,
                ref test,
            } => {
                let load = |p: &str| match read_container(p)? {
                    Container::Dataset(d) => Ok(d),
                    Container::Parameters(_) => {
                        Err(Error::Data(format!("{p} holds parameters, not a dataset")))
                    }
                };
                Ok((load(train)?, load(test)?))
            }
        }
    }
}
