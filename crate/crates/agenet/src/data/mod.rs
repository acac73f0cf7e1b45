//! Data pipeline: age-bin schemes, PPM/PGM images with cropping and
//! resizing, augmentation, sample manifests, batch assembly, and the
//! confidence-based mislabel filter.

pub mod augment;
pub mod bins;
pub mod image;
pub mod manifest;

use crate::error::{Error, Result};
use crate::loss::{OneHotBatch, ProbBatch};
use crate::tensor::{Scalar, Shape, Tensor};

pub use augment::AugmentConfig;
pub use bins::{AgeBin, BinScheme};
pub use image::RgbImage;
pub use manifest::{Manifest, ManifestKind, ManifestStats, SampleRecord};

/// Axis-aligned pixel rectangle, half-open: x0 <= x < x1, y0 <= y < y1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    /// Checks the box has positive area.
    pub fn well_formed(&self) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::data(format!(
                "bounding box ({}, {})-({}, {}) has no area",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        Ok(())
    }

    /// Checks the box has positive area and lies inside a width x height image.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        self.well_formed()?;
        if self.x1 > width || self.y1 > height {
            return Err(Error::data(format!(
                "bounding box ({}, {})-({}, {}) exceeds the {width}x{height} image",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        Ok(())
    }
}

/// Keep mask for suspected mislabels: a sample survives when the predicted
/// probability mass on its labelled class and that class's immediate
/// neighbours reaches `threshold`. Mass exactly at the threshold is kept.
pub fn filter_mislabelled<T: Scalar>(
    probs: &ProbBatch<T>,
    labels: &[usize],
    threshold: f64,
) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config(format!(
            "mislabel threshold must lie in [0, 1], got {threshold}"
        )));
    }
    if probs.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} probability rows cannot be paired with {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let classes = probs.classes();
    let mut keep = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::data(format!(
                "label {label} out of range for {classes} classes at row {i}"
            )));
        }
        let row = probs.row(i);
        let lo = label.saturating_sub(1);
        let hi = (label + 1).min(classes - 1);
        let mass: f64 = (lo..=hi).map(|c| row[c].to_f64()).sum();
        keep.push(mass >= threshold);
    }
    Ok(keep)
}

/// In-memory labelled image set ready for batching.
#[derive(Debug, Clone)]
pub struct Dataset<T: Scalar> {
    images: Vec<Tensor<T>>,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Vec<Tensor<T>>, labels: Vec<usize>, classes: usize) -> Result<Dataset<T>> {
        if images.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} images cannot be paired with {} labels",
                images.len(),
                labels.len()
            )));
        }
        if classes == 0 {
            return Err(Error::config("dataset needs at least one class".to_string()));
        }
        for (i, img) in images.iter().enumerate() {
            if img.rank() != 3 {
                return Err(Error::shape(format!(
                    "image {i} has shape {}, expected a rank-3 channels-first image",
                    img.shape()
                )));
            }
            if img.dims() != images[0].dims() {
                return Err(Error::shape(format!(
                    "image {i} has shape {} but image 0 has {}",
                    img.shape(),
                    images[0].shape()
                )));
            }
        }
        for (i, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::data(format!(
                    "label {label} out of range for {classes} classes at sample {i}"
                )));
            }
        }
        Ok(Dataset { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &[Tensor<T>] {
        &self.images
    }

    /// Image dimensions shared by every sample, or None when empty.
    pub fn image_dims(&self) -> Option<&[usize]> {
        self.images.first().map(|img| img.dims())
    }

    /// Stacks the chosen samples into a [n, C, H, W] batch with one-hot labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, OneHotBatch<T>)> {
        if indices.is_empty() {
            return Err(Error::shape("cannot assemble an empty batch".to_string()));
        }
        let dims = self
            .image_dims()
            .ok_or_else(|| Error::data("cannot batch from an empty dataset".to_string()))?
            .to_vec();
        let per = dims.iter().product::<usize>();
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &idx in indices {
            let img = self.images.get(idx).ok_or_else(|| {
                Error::data(format!("batch index {idx} out of range for {} samples", self.len()))
            })?;
            data.extend_from_slice(img.data());
            labels.push(self.labels[idx]);
        }
        let mut batch_dims = vec![indices.len()];
        batch_dims.extend_from_slice(&dims);
        let images = Tensor::from_vec(Shape::new(batch_dims)?, data)?;
        Ok((images, OneHotBatch::from_labels(&labels, self.classes)?))
    }
}

/// Loads every image of a processed manifest into memory, resolving relative
/// paths against the manifest's directory.
pub fn load_dataset<T: Scalar>(manifest: &Manifest, classes: usize) -> Result<Dataset<T>> {
    if manifest.kind() != ManifestKind::Processed {
        return Err(Error::data(
            "loading a dataset requires a processed manifest with class indices".to_string(),
        ));
    }
    let mut images = Vec::with_capacity(manifest.len());
    let mut labels = Vec::with_capacity(manifest.len());
    for rec in manifest.records() {
        let img = RgbImage::read_ppm(&manifest.resolve(rec))?;
        images.push(img.to_tensor());
        labels.push(rec.class.expect("processed records carry a class"));
    }
    Dataset::new(images, labels, classes)
}

/// Reads, crops (when a box is present), and resizes one raw-manifest image.
pub fn preprocess_image(
    manifest: &Manifest,
    record: &SampleRecord,
    margin: f64,
    side: usize,
) -> Result<RgbImage> {
    let img = RgbImage::read_ppm(&manifest.resolve(record))?;
    let cropped = match record.bbox {
        Some(bbox) => image::crop_with_margin(&img, bbox, margin)?,
        None => img,
    };
    image::resize_bilinear(&cropped, side, side)
}
