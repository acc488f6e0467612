//! Datasets, IDX files, synthetic generators and seeded random streams.

mod idx;
mod rng;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

pub use idx::{load_mnist_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IdxImages};
pub use rng::RngStream;
pub use synthetic::{gen_synthetic, read_synthetic_csv, write_synthetic_csv, SyntheticKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled samples with inputs in `[0, 1]`, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    sample_shape: Vec<usize>,
    classes: usize,
    pub split: Split,
    pub provenance: String,
}

impl Dataset {
    /// `inputs` is `[n, features]`; `sample_shape` must flatten to `features`.
    pub fn new(
        inputs: Tensor,
        labels: Vec<usize>,
        sample_shape: Vec<usize>,
        classes: usize,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels for inputs of shape {:?}",
                labels.len(),
                inputs.shape()
            )));
        }
        if sample_shape.iter().product::<usize>() != inputs.cols() {
            return Err(Error::Shape(format!(
                "sample shape {sample_shape:?} for {} features",
                inputs.cols()
            )));
        }
        if let Some(v) = inputs.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("dataset value {v} outside [0, 1]")));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Config(format!("label {y} outside {classes} classes")));
        }
        Ok(Self {
            inputs,
            labels,
            sample_shape,
            classes,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn features(&self) -> usize {
        self.inputs.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row_slice(i)
    }

    /// Gathers rows into a `[indices.len(), features]` batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.features();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.input(i));
        }
        let x = Tensor::from_parts(vec![indices.len(), d], data).expect("batch shape");
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Indices of the first `k` samples of every class, in file order, grouped
    /// by class.
    pub fn first_per_class(&self, k: usize) -> Vec<usize> {
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); self.classes];
        for (i, &y) in self.labels.iter().enumerate() {
            if per_class[y].len() < k {
                per_class[y].push(i);
            }
        }
        per_class.concat()
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let (inputs, labels) = self.batch(indices);
        Self {
            inputs,
            labels,
            sample_shape: self.sample_shape.clone(),
            classes: self.classes,
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }

    /// Subset keeping the first `k` samples per class in file order.
    pub fn limit_per_class(&self, k: usize) -> Self {
        let mut idx = self.first_per_class(k);
        idx.sort_unstable();
        self.select(&idx)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        self.labels.iter().for_each(|&y| c[y] += 1);
        c
    }
}
