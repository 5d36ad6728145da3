use super::{NetError, Result};
use crate::tensor::Tensor;

/// Images in `[0, 1]` with class labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Tensor>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(NetError::Dataset(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            if let Some(i) = images.iter().position(|im| im.shape() != first.shape()) {
                return Err(NetError::Dataset(format!(
                    "image {i} has shape {:?}, expected {:?}",
                    images[i].shape(),
                    first.shape()
                )));
            }
        }
        if let Some(i) = labels.iter().position(|&l| l >= num_classes) {
            return Err(NetError::Dataset(format!(
                "label {} at index {i} is outside [0, {num_classes})",
                labels[i]
            )));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image(&self, i: usize) -> &Tensor {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.images.first().map(Tensor::shape)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, usize)> {
        self.images.iter().zip(self.labels.iter().copied())
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// The first `n` samples (or all of them).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}
