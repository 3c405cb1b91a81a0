//! Evaluation: clean test accuracy, between-network total variation and
//! selection purity.

use crate::data::LabeledDataset;
use crate::error::{CoteachError, Result};
use crate::nn::{argmax_rows, DenseNet, Matrix};
use crate::selection::IndexSet;

/// Rows evaluated per forward pass when scoring a whole dataset.
const EVAL_CHUNK: usize = 2048;

/// One row of the per-epoch CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lambda: f64,
    pub lr: f64,
    pub test_acc_1: f64,
    pub test_acc_2: Option<f64>,
    pub mean_tv: Option<f64>,
    /// Clean fraction of the samples that drove updates this epoch.
    pub selection_purity: Option<f64>,
    /// Set when nothing was selected all epoch; purity then reads 1.0.
    pub purity_empty: bool,
    pub skipped_batches: usize,
}

/// Class probabilities for every row of `features`, computed in chunks.
pub fn predict_proba(net: &DenseNet, features: &Matrix) -> Result<Matrix> {
    let n = features.rows();
    let c = net.num_classes();
    let mut out = Vec::with_capacity(n * c);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let p = net.forward(&features.slice_rows(start, end))?;
        out.extend_from_slice(p.as_slice());
        start = end;
    }
    Matrix::from_vec(n, c, out)
}

/// `(# correct predictions) / (# test samples)` against the clean labels.
pub fn test_accuracy(net: &DenseNet, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(CoteachError::Input("empty test set".into()));
    }
    let preds = argmax_rows(&predict_proba(net, test.features())?);
    Ok(accuracy(&preds, test.clean_labels()))
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    correct as f64 / labels.len() as f64
}

/// Mean over rows of `½ Σ_j |p1[i,j] − p2[i,j]|`.
pub fn total_variation(probs1: &Matrix, probs2: &Matrix) -> Result<f64> {
    if probs1.rows() != probs2.rows() || probs1.cols() != probs2.cols() {
        return Err(CoteachError::Input(format!(
            "shape mismatch: {}x{} vs {}x{}",
            probs1.rows(),
            probs1.cols(),
            probs2.rows(),
            probs2.cols()
        )));
    }
    if probs1.rows() == 0 {
        return Err(CoteachError::Input("no rows to compare".into()));
    }
    let mut total = 0.0;
    for i in 0..probs1.rows() {
        let l1: f64 = probs1
            .row(i)
            .iter()
            .zip(probs2.row(i))
            .map(|(a, b)| (a - b).abs())
            .sum();
        total += 0.5 * l1;
    }
    Ok((total / probs1.rows() as f64).clamp(0.0, 1.0))
}

/// Fraction of a selection that is clean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Purity {
    pub value: f64,
    /// The selection was empty; `value` is 1.0 by convention.
    pub empty: bool,
}

pub fn selection_purity(selected: &IndexSet, clean_mask: &[bool]) -> Result<Purity> {
    if let Some(&i) = selected.iter().find(|&&i| i >= clean_mask.len()) {
        return Err(CoteachError::Input(format!(
            "index {i} outside mask of length {}",
            clean_mask.len()
        )));
    }
    if selected.is_empty() {
        return Ok(Purity {
            value: 1.0,
            empty: true,
        });
    }
    let clean = selected.iter().filter(|&&i| clean_mask[i]).count();
    Ok(Purity {
        value: clean as f64 / selected.len() as f64,
        empty: false,
    })
}

/// Running clean/total counts over many selections.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PurityCounter {
    pub selected: usize,
    pub clean: usize,
}

impl PurityCounter {
    pub fn record(&mut self, selected: &IndexSet, clean_mask: &[bool]) {
        self.selected += selected.len();
        self.clean += selected.iter().filter(|&&i| clean_mask[i]).count();
    }

    pub fn purity(&self) -> Purity {
        if self.selected == 0 {
            Purity {
                value: 1.0,
                empty: true,
            }
        } else {
            Purity {
                value: self.clean as f64 / self.selected as f64,
                empty: false,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_examples() {
        let a = Matrix::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        assert_eq!(total_variation(&a, &a).unwrap(), 0.0);
        let p = Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let q = Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(total_variation(&p, &q).unwrap(), 1.0);
        let p = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let q = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(total_variation(&p, &q).unwrap(), 0.5);
        assert!(total_variation(&a, &q).is_err());
    }

    #[test]
    fn purity_examples() {
        let mask = [true, false, true];
        let all_clean = selection_purity(&IndexSet::new(vec![0, 2]), &mask).unwrap();
        assert_eq!(all_clean.value, 1.0);
        let half = selection_purity(&IndexSet::new(vec![0, 1]), &[true, false]).unwrap();
        assert_eq!(half.value, 0.5);
        let empty = selection_purity(&IndexSet::empty(), &mask).unwrap();
        assert_eq!((empty.value, empty.empty), (1.0, true));
        assert!(selection_purity(&IndexSet::new(vec![3]), &mask).is_err());
    }

    #[test]
    fn counter_pools_selections() {
        let mut c = PurityCounter::default();
        c.record(&IndexSet::new(vec![0, 1]), &[true, false]);
        c.record(&IndexSet::new(vec![0]), &[true]);
        assert_eq!(c.purity().value, 2.0 / 3.0);
    }
}
