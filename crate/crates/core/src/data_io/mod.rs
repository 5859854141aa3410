//! Datasets, embedding files and the desk-scale synthetic data source.

mod baseline;
mod embeddings;
mod folder;
mod glyphs;
pub mod imageops;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use baseline::embed_dataset_baseline;
pub use embeddings::{load_embeddings, store_embeddings, EMBEDDING_MAGIC};
pub use folder::load_image_folder;
pub use glyphs::generate_synthetic_glyphs;

use crate::{Error, Result};

/// An N×D matrix of unsupervised embeddings, one row per data point.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    pub source_tag: String,
}

impl EmbeddingSet {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>, source_tag: impl Into<String>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::EmptySet(format!("{rows}x{dim} embedding matrix")));
        }
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "embedding payload has {} values, expected {}",
                data.len(),
                rows * dim
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite embedding value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            rows,
            dim,
            data,
            source_tag: source_tag.into(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Channels-first image geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    MetaTrain,
    MetaVal,
    MetaTest,
}

/// A labeled image set. Images are channels-first with pixels in `[0, 1]`.
///
/// The labels are the true classes. The unsupervised pipeline never reads
/// them; only oracle variants and evaluation do.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<Arc<[f64]>>,
    labels: Vec<usize>,
    num_classes: usize,
    channels: usize,
    height: usize,
    width: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        images: Vec<Arc<[f64]>>,
        labels: Vec<usize>,
        channels: usize,
        height: usize,
        width: usize,
        split: Split,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Validation("dataset has no images".into()));
        }
        if images.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let len = channels * height * width;
        if len == 0 {
            return Err(Error::Shape("zero-sized image shape".into()));
        }
        for (i, img) in images.iter().enumerate() {
            if img.len() != len {
                return Err(Error::Shape(format!("image {i} has {} values, expected {len}", img.len())));
            }
            if img.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
                return Err(Error::Validation(format!("image {i} has pixels outside [0, 1]")));
            }
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![0usize; num_classes];
        for &l in &labels {
            counts[l] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n < 2) {
            return Err(Error::Validation(format!(
                "class {c} has {} samples, at least 2 required",
                counts[c]
            )));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            channels,
            height,
            width,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Arc<[f64]> {
        &self.images[i]
    }

    pub fn images(&self) -> &[Arc<[f64]>] {
        &self.images
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> ImageShape {
        ImageShape {
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Indices of each true class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// Keeps only the listed classes, relabelled `0..classes.len()` in the given order.
    pub fn select_classes(&self, classes: &[usize], split: Split) -> Result<Dataset> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (new, &c) in classes.iter().enumerate() {
            if c >= self.num_classes {
                return Err(Error::Config(format!("class {c} not in dataset")));
            }
            for (i, &l) in self.labels.iter().enumerate() {
                if l == c {
                    images.push(self.images[i].clone());
                    labels.push(new);
                }
            }
        }
        Dataset::new(images, labels, self.channels, self.height, self.width, split)
    }

    /// Applies `f` to every image, keeping labels.
    pub fn map_images(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Dataset> {
        let images: Vec<Arc<[f64]>> = self.images.iter().map(|x| Arc::from(f(x))).collect();
        Dataset::new(images, self.labels.clone(), self.channels, self.height, self.width, self.split)
    }

    /// Copy with the label vector replaced. Used by tests that check label blindness.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(self.images.clone(), labels, self.channels, self.height, self.width, self.split)
    }

    pub fn example(&self, i: usize) -> LabeledExample {
        LabeledExample {
            x: self.images[i].clone(),
            y: self.labels[i],
            origin: Some(i),
        }
    }
}

/// One image with an integer label (pseudo-label or true label).
///
/// `origin` is the dataset index the image came from, or `None` for
/// synthesized (augmented) images.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x: Arc<[f64]>,
    pub y: usize,
    pub origin: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f64) -> Arc<[f64]> {
        Arc::from(vec![v; 4])
    }

    #[test]
    fn dataset_rejects_singleton_class() {
        let err = Dataset::new(vec![img(0.0), img(0.1), img(0.2)], vec![0, 0, 1], 1, 2, 2, Split::MetaTrain);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn dataset_rejects_out_of_range_pixels() {
        let err = Dataset::new(vec![img(0.0), img(1.5)], vec![0, 0], 1, 2, 2, Split::MetaTrain);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn select_classes_relabels_in_order() {
        let ds = Dataset::new(
            vec![img(0.0), img(0.1), img(0.2), img(0.3), img(0.4), img(0.5)],
            vec![0, 0, 1, 1, 2, 2],
            1,
            2,
            2,
            Split::MetaTrain,
        )
        .unwrap();
        let sub = ds.select_classes(&[2, 0], Split::MetaTest).unwrap();
        assert_eq!(sub.labels(), &[0, 0, 1, 1]);
        assert_eq!(sub.image(0)[0], 0.4);
        assert_eq!(sub.split, Split::MetaTest);
    }

    #[test]
    fn embedding_set_rejects_nan() {
        assert!(matches!(
            EmbeddingSet::new(1, 2, vec![0.0, f32::NAN], "t"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(EmbeddingSet::new(0, 2, vec![], "t"), Err(Error::EmptySet(_))));
    }
}
