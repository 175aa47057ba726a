//! Labelled image datasets and the CIFAR-10 binary format.
//!
//! A CIFAR-10 binary file is a sequence of 3073-byte records: one label byte
//! followed by 3072 pixel bytes (the 1024 red values, then green, then blue,
//! each plane row-major over 32×32).

mod synth;

use std::fs;
use std::path::Path;

pub use synth::{SynthConfig, SynthSplit};

use crate::tensornet::{ImageTensor, Shape3};
use crate::{Error, Result};

pub const CIFAR_RECORD_LEN: usize = 3073;
pub const CIFAR_CLASSES: usize = 10;
pub const MAX_CLASSES: usize = 12;

pub const CIFAR10_CLASS_NAMES: [&str; CIFAR_CLASSES] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<ImageTensor>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(images: Vec<ImageTensor>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if class_names.is_empty() || class_names.len() > MAX_CLASSES {
            return Err(Error::invalid(format!(
                "class count {} outside 1..={MAX_CLASSES}",
                class_names.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(Error::invalid(format!(
                "label {y} out of range for {} classes",
                class_names.len()
            )));
        }
        if let Some(first) = images.first() {
            if let Some(img) = images.iter().find(|img| img.shape() != first.shape()) {
                return Err(Error::ShapeMismatch {
                    expected: first.shape().to_string(),
                    actual: img.shape().to_string(),
                });
            }
        }
        Ok(Self {
            images,
            labels,
            class_names,
        })
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<Shape3> {
        self.images.first().map(ImageTensor::shape)
    }

    /// Keeps at most `limit` instances with per-class quotas as equal as the
    /// data allows. File order is preserved.
    pub fn stratified(&self, limit: usize) -> Self {
        let keep = stratified_indices(&self.labels, self.class_count(), limit);
        self.subset(&keep)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Serializes in CIFAR-10 binary layout. Images must be 3×32×32 and
    /// pixels are quantized to bytes.
    pub fn to_cifar_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.len() * CIFAR_RECORD_LEN);
        for (img, &y) in self.images.iter().zip(&self.labels) {
            if img.shape() != Shape3::cifar() {
                return Err(Error::ShapeMismatch {
                    expected: Shape3::cifar().to_string(),
                    actual: img.shape().to_string(),
                });
            }
            out.push(y as u8);
            out.extend(img.to_bytes());
        }
        Ok(out)
    }
}

/// Per-class quotas: `limit / K` each, the remainder to the lowest classes,
/// and any shortfall of a small class handed round-robin to classes with
/// spare instances.
fn stratified_indices(labels: &[usize], classes: usize, limit: usize) -> Vec<usize> {
    let mut available = vec![0usize; classes];
    for &y in labels {
        available[y] += 1;
    }
    let mut quota = vec![0usize; classes];
    let mut remaining = limit.min(labels.len());
    // Round-robin fill: every pass grants one slot to each class that still
    // has unassigned instances, lowest class first.
    while remaining > 0 {
        let mut granted = false;
        for c in 0..classes {
            if remaining == 0 {
                break;
            }
            if quota[c] < available[c] {
                quota[c] += 1;
                remaining -= 1;
                granted = true;
            }
        }
        if !granted {
            break;
        }
    }
    let mut taken = vec![0usize; classes];
    labels
        .iter()
        .enumerate()
        .filter_map(|(i, &y)| {
            (taken[y] < quota[y]).then(|| {
                taken[y] += 1;
                i
            })
        })
        .collect()
}

/// Parses CIFAR-10 binary records.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(Error::Format(format!(
            "file length {} is not a multiple of the {CIFAR_RECORD_LEN}-byte record",
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD_LEN);
    let mut labels = Vec::with_capacity(images.capacity());
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Format(format!("record {i}: label {label} is not below 10")));
        }
        labels.push(label);
        images.push(ImageTensor::from_bytes(&record[1..], Shape3::cifar())?);
    }
    Dataset::new(
        images,
        labels,
        CIFAR10_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
    )
}

/// Reads a CIFAR-10 binary file, optionally capped with stratified truncation.
pub fn ingest_cifar10(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Dataset> {
    let data = parse_cifar10(&fs::read(path)?)?;
    Ok(match limit {
        Some(limit) => data.stratified(limit),
        None => data,
    })
}
