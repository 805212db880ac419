//! Labeled datasets: IDX files (MNIST layout) and synthetic sphere sectors.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `samples x ...sample shape`.
    pub inputs: Tensor<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: String,
}

impl Dataset {
    pub fn new(inputs: Tensor<f64>, labels: Vec<usize>, classes: usize, split: impl Into<String>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Length {
                left: inputs.rows(),
                right: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{classes}")));
        }
        if !inputs.is_finite() {
            return Err(Error::NonFinite("dataset inputs".into()));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            split: split.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.inputs.row_len()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split.clone(),
        }
    }

    /// The first `n` samples (all of them if fewer).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// Parses in-memory IDX image and label files; pixels are scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8], classes: usize) -> Result<Dataset> {
    let magic = be_u32(images, 0)?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!("image file magic {magic:#010x}, expected {IDX_IMAGES:#010x}")));
    }
    let magic = be_u32(labels, 0)?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!("label file magic {magic:#010x}, expected {IDX_LABELS:#010x}")));
    }
    let (n, rows, cols) = (
        be_u32(images, 4)? as usize,
        be_u32(images, 8)? as usize,
        be_u32(images, 12)? as usize,
    );
    let n_labels = be_u32(labels, 4)? as usize;
    if n != n_labels {
        return Err(Error::Format(format!("{n} images but {n_labels} labels")));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format("empty IDX file".into()));
    }
    let pixels = images
        .get(16..16 + n * rows * cols)
        .ok_or_else(|| Error::Format("truncated IDX image data".into()))?;
    let raw_labels = labels
        .get(8..8 + n)
        .ok_or_else(|| Error::Format("truncated IDX label data".into()))?;
    let inputs = Tensor::new(vec![n, rows, cols], pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    Dataset::new(inputs, raw_labels.iter().map(|&l| l as usize).collect(), classes, "idx")
}

/// Loads an IDX image/label pair (10 classes).
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    parse_idx(&read(images.as_ref())?, &read(labels.as_ref())?, 10)
}

/// Points drawn uniformly on the unit sphere in `dim` dimensions, labeled by
/// which of `classes` equal angular sectors of the `(x_0, x_1)` plane they
/// fall in. With probability `noise` a label is replaced by a different
/// uniformly drawn class.
pub fn synth_sphere(samples: usize, dim: usize, classes: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if dim < 2 || classes < 2 || samples == 0 {
        return Err(Error::invalid("synth_sphere needs dim >= 2, classes >= 2 and samples >= 1"));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::invalid(format!("noise {noise} outside [0, 1]")));
    }
    let mut rng = RngStream::new(seed, 0);
    let mut data = Vec::with_capacity(samples * dim);
    let mut labels = Vec::with_capacity(samples);
    let sector = std::f64::consts::TAU / classes as f64;
    for _ in 0..samples {
        let v = rng.unit_vector(dim);
        let angle = v[1].atan2(v[0]).rem_euclid(std::f64::consts::TAU);
        let mut label = ((angle / sector) as usize).min(classes - 1);
        if noise > 0.0 && rng.uniform() < noise {
            label = (label + 1 + rng.below(classes as u64 - 1) as usize) % classes;
        }
        data.extend_from_slice(&v);
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![samples, dim], data)?, labels, classes, "synthetic")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn idx_bytes(images: &[Vec<u8>], rows: u32, cols: u32, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES.to_be_bytes());
        img.extend_from_slice(&(images.len() as u32).to_be_bytes());
        img.extend_from_slice(&rows.to_be_bytes());
        img.extend_from_slice(&cols.to_be_bytes());
        for i in images {
            img.extend_from_slice(i);
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS.to_be_bytes());
        lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lab.extend_from_slice(labels);
        (img, lab)
    }

    #[test]
    fn one_sample_idx() {
        let (img, lab) = idx_bytes(&[vec![0, 255, 51, 102]], 2, 2, &[7]);
        let d = parse_idx(&img, &lab, 10).unwrap();
        assert_eq!(d.inputs.shape(), &[1, 2, 2]);
        assert_eq!(d.sample(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.labels, vec![7]);
    }

    #[test]
    fn idx_errors() {
        let (img, lab) = idx_bytes(&[vec![0; 4]], 2, 2, &[12]);
        assert!(parse_idx(&img, &lab, 10).is_err());
        let (img, lab) = idx_bytes(&[vec![0; 4]], 2, 2, &[1, 2]);
        assert!(parse_idx(&img, &lab, 10).is_err());
        let (img, lab) = idx_bytes(&[vec![0; 4]], 2, 2, &[1]);
        assert!(parse_idx(&img[..18], &lab, 10).is_err());
        assert!(parse_idx(&lab, &img, 10).is_err());
    }

    #[test]
    fn sphere_is_deterministic_and_separable() {
        let a = synth_sphere(500, 2, 2, 0.0, 9).unwrap();
        assert_eq!(a, synth_sphere(500, 2, 2, 0.0, 9).unwrap());
        for i in 0..a.len() {
            let x = a.sample(i);
            assert_eq!(a.labels[i], usize::from(x[1] < 0.0));
        }
    }

    #[test]
    fn sphere_noise_flips_some_labels() {
        let noisy = synth_sphere(2000, 3, 4, 0.3, 1).unwrap();
        let flipped = (0..noisy.len())
            .filter(|&i| {
                let x = noisy.sample(i);
                let angle = x[1].atan2(x[0]).rem_euclid(std::f64::consts::TAU);
                (angle / std::f64::consts::FRAC_PI_2) as usize != noisy.labels[i]
            })
            .count();
        // Binomial(2000, 0.3): sd ~ 20.5
        assert!((flipped as i64 - 600).abs() < 90, "{flipped}");
    }
}
