//! Datasets: MNIST in IDX format and seeded Gaussian blobs.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CoteachError, Result};
use crate::nn::{Batch, Matrix};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

/// Features with clean labels and, once corrupted, the noisy training labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    clean_labels: Vec<usize>,
    noisy_labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, clean_labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != clean_labels.len() {
            return Err(CoteachError::Input(format!(
                "{} rows but {} labels",
                features.rows(),
                clean_labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(CoteachError::Input("need at least two classes".into()));
        }
        check_range(&clean_labels, num_classes)?;
        Ok(LabeledDataset {
            features,
            clean_labels,
            noisy_labels: None,
            num_classes,
        })
    }

    /// Attach noisy labels. The clean labels are left untouched.
    pub fn with_noisy_labels(mut self, noisy: Vec<usize>) -> Result<Self> {
        if noisy.len() != self.len() {
            return Err(CoteachError::Input(format!(
                "{} noisy labels for {} samples",
                noisy.len(),
                self.len()
            )));
        }
        check_range(&noisy, self.num_classes)?;
        self.noisy_labels = Some(noisy);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean_labels
    }

    pub fn noisy_labels(&self) -> Option<&[usize]> {
        self.noisy_labels.as_deref()
    }

    /// `true` where the training label equals the clean label. All `true`
    /// when no noise has been applied.
    pub fn clean_mask(&self) -> Vec<bool> {
        match &self.noisy_labels {
            Some(noisy) => self
                .clean_labels
                .iter()
                .zip(noisy)
                .map(|(c, n)| c == n)
                .collect(),
            None => vec![true; self.len()],
        }
    }

    /// Rows in `indices` order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.gather_rows(indices),
            clean_labels: indices.iter().map(|&i| self.clean_labels[i]).collect(),
            noisy_labels: self
                .noisy_labels
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
            num_classes: self.num_classes,
        }
    }

    /// The first `n` rows.
    pub fn truncate(mut self, n: usize) -> LabeledDataset {
        if n < self.len() {
            let cols = self.features.cols();
            let mut data = self.features.into_vec();
            data.truncate(n * cols);
            self.features = Matrix::from_vec(n, cols, data).expect("truncated buffer");
            self.clean_labels.truncate(n);
            if let Some(noisy) = &mut self.noisy_labels {
                noisy.truncate(n);
            }
        }
        self
    }

    /// Mini-batch over `indices` labelled with the noisy labels.
    pub fn noisy_batch(&self, indices: &[usize]) -> Result<Batch> {
        let noisy = self
            .noisy_labels
            .as_ref()
            .ok_or_else(|| CoteachError::Input("training set has no noisy labels".into()))?;
        Batch::new(
            self.features.gather_rows(indices),
            indices.iter().map(|&i| noisy[i]).collect(),
        )
    }
}

fn check_range(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().position(|&y| y >= classes) {
        Some(i) => Err(CoteachError::Input(format!(
            "label {} at position {i} outside [0, {classes})",
            labels[i]
        ))),
        None => Ok(()),
    }
}

fn format_err(path: &Path, offset: u64, message: impl Into<String>) -> CoteachError {
    CoteachError::Format {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len() as u64, "file ends inside the header"))
}

/// Parsed IDX image file: `count` images of `rows * cols` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Parse an IDX3 unsigned-byte image file. `path` is only used in errors.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let magic = read_u32_be(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(
            path,
            0,
            format!("image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        ));
    }
    let count = read_u32_be(bytes, 4, path)? as usize;
    let rows = read_u32_be(bytes, 8, path)? as usize;
    let cols = read_u32_be(bytes, 12, path)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(format_err(
            path,
            bytes.len() as u64,
            format!("truncated: {count} images of {rows}x{cols} need {need} bytes"),
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..need].to_vec(),
    })
}

/// Parse an IDX1 unsigned-byte label file.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = read_u32_be(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(
            path,
            0,
            format!("label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        ));
    }
    let count = read_u32_be(bytes, 4, path)? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(format_err(
            path,
            bytes.len() as u64,
            format!("truncated: {count} labels need {need} bytes"),
        ));
    }
    Ok(bytes[8..need].to_vec())
}

/// Serialize images in IDX3 layout.
pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

/// Serialize labels in IDX1 layout.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Load an MNIST image/label file pair, scaling pixels to `[0, 1]`.
pub fn load_mnist(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<LabeledDataset> {
    if limit == Some(0) {
        return Err(CoteachError::Input("limit 0 would produce an empty dataset".into()));
    }
    let image_bytes = std::fs::read(images_path).map_err(|e| CoteachError::io(images_path, e))?;
    let label_bytes = std::fs::read(labels_path).map_err(|e| CoteachError::io(labels_path, e))?;
    let images = parse_idx_images(&image_bytes, images_path)?;
    let labels = parse_idx_labels(&label_bytes, labels_path)?;
    if images.count != labels.len() {
        return Err(format_err(
            labels_path,
            4,
            format!("{} labels but {} images", labels.len(), images.count),
        ));
    }
    if let Some(i) = labels.iter().position(|&y| y as usize >= MNIST_CLASSES) {
        return Err(format_err(
            labels_path,
            8 + i as u64,
            format!("label {} outside 0..{MNIST_CLASSES}", labels[i]),
        ));
    }
    let n = limit.map_or(images.count, |l| l.min(images.count));
    if n == 0 {
        return Err(CoteachError::Input(format!("{} holds no images", images_path.display())));
    }
    let dim = images.rows * images.cols;
    let pixels = images.pixels[..n * dim]
        .iter()
        .map(|&p| p as f64 / 255.0)
        .collect();
    LabeledDataset::new(
        Matrix::from_vec(n, dim, pixels)?,
        labels[..n].iter().map(|&y| y as usize).collect(),
        MNIST_CLASSES,
    )
}

/// Gaussian blobs around the vertices `e_c` of the unit simplex in `dim`
/// dimensions, `n_per_class` samples each, ordered class by class.
pub fn gen_synthetic(
    n_per_class: usize,
    num_classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 || dim < 2 {
        return Err(CoteachError::Input("need num_classes >= 2 and dim >= 2".into()));
    }
    if num_classes > dim {
        return Err(CoteachError::Input(format!(
            "{num_classes} simplex vertices do not fit in {dim} dimensions"
        )));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(CoteachError::Input(format!("spread {spread} must be positive")));
    }
    if n_per_class == 0 {
        return Err(CoteachError::Input("n_per_class must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).expect("positive spread");
    let n = n_per_class * num_classes;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..num_classes {
        for _ in 0..n_per_class {
            for j in 0..dim {
                let center = if j == class { 1.0 } else { 0.0 };
                data.push(center + noise.sample(&mut rng));
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(Matrix::from_vec(n, dim, data)?, labels, num_classes)
}

/// Center of class `class` used by [`gen_synthetic`].
pub fn synthetic_center(class: usize, dim: usize) -> Vec<f64> {
    (0..dim).map(|j| if j == class { 1.0 } else { 0.0 }).collect()
}

/// Seeded partition of `0..n` into (train, test) index lists, each sorted.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CoteachError::Input(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    if n < 2 {
        return Err(CoteachError::Input("need at least two samples to split".into()));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

pub fn split(
    dataset: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = split_indices(dataset.len(), test_fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}
