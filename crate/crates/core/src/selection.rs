//! Keep-rate schedules and the two per-batch sample filters: small-loss
//! selection and prediction disagreement.

use serde::{Deserialize, Serialize};

use crate::error::{CoteachError, Result};

/// Shape of λ(e) after the ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `1 − min(e/E_k·τ, τ)`: flat at `1 − τ` after `E_k` epochs.
    ConstantFloor,
    /// `1 − min(e/E_k·τ, (1 + (e−E_k)/(E_max−E_k))·τ)`: keeps dropping towards `1 − 2τ`.
    SlowDecrease,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub tau: f64,
    pub e_k: usize,
    pub e_max: usize,
    pub kind: ScheduleKind,
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(CoteachError::Config(format!(
                "schedule tau {} outside [0, 1)",
                self.tau
            )));
        }
        // E_max = 0 is an empty run; λ is never evaluated
        if self.e_k < 1 || (self.e_max > 0 && self.e_k > self.e_max) {
            return Err(CoteachError::Config(format!(
                "need 1 <= E_k <= E_max, got E_k = {}, E_max = {}",
                self.e_k, self.e_max
            )));
        }
        Ok(())
    }
}

/// Fraction λ(e) of samples to keep at epoch `e`, clamped to `[0, 1]`.
pub fn lambda_schedule(e: usize, p: &ScheduleParams) -> f64 {
    let ramp = (e as f64 / p.e_k as f64) * p.tau;
    let drop = match p.kind {
        ScheduleKind::ConstantFloor => ramp.min(p.tau),
        ScheduleKind::SlowDecrease => {
            let tail = if p.e_max > p.e_k {
                e.saturating_sub(p.e_k) as f64 / (p.e_max - p.e_k) as f64
            } else {
                0.0
            };
            ramp.min((1.0 + tail) * p.tau)
        }
    };
    (1.0 - drop).clamp(0.0, 1.0)
}

/// Strictly increasing list of in-batch indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    /// Sorts and deduplicates.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        IndexSet(indices)
    }

    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    /// `{0, 1, …, n−1}`.
    pub fn all(n: usize) -> Self {
        IndexSet((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, usize> {
        self.0.iter()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    /// Maps positions within `self` back to the values stored there:
    /// `{self[j] : j ∈ local}`.
    pub fn compose(&self, local: &IndexSet) -> IndexSet {
        IndexSet(local.iter().map(|&j| self.0[j]).collect())
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl<'a> IntoIterator for &'a IndexSet {
    type Item = &'a usize;
    type IntoIter = std::slice::Iter<'a, usize>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// `max(1, ⌊λ·n⌋)` for `λ > 0` and `n ≥ 1`, else 0.
pub fn keep_count(n: usize, fraction: f64) -> usize {
    if n == 0 || fraction <= 0.0 {
        return 0;
    }
    // the slack absorbs products like ((B−1)/B)·B landing just under an integer
    let k = (fraction * n as f64 + 1e-9).floor() as usize;
    k.clamp(1, n)
}

/// Indices of the `keep_count(n, λ)` smallest losses; ties go to the lower
/// index. Result sorted ascending.
pub fn select_small_loss(losses: &[f64], fraction: f64) -> Result<IndexSet> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(CoteachError::Input(format!(
            "keep fraction {fraction} outside [0, 1]"
        )));
    }
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(CoteachError::Numerical(format!(
            "loss at position {i} is {}",
            losses[i]
        )));
    }
    let k = keep_count(losses.len(), fraction);
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(IndexSet::new(order))
}

/// Indices where the two prediction vectors differ.
pub fn select_disagreement(preds1: &[usize], preds2: &[usize]) -> Result<IndexSet> {
    if preds1.len() != preds2.len() {
        return Err(CoteachError::Input(format!(
            "prediction lengths differ: {} vs {}",
            preds1.len(),
            preds2.len()
        )));
    }
    Ok(IndexSet(
        preds1
            .iter()
            .zip(preds2)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn floor_params(tau: f64, e_k: usize, e_max: usize) -> ScheduleParams {
        ScheduleParams {
            tau,
            e_k,
            e_max,
            kind: ScheduleKind::ConstantFloor,
        }
    }

    #[test]
    fn constant_floor_points() {
        let p = floor_params(0.5, 10, 200);
        assert_eq!(lambda_schedule(0, &p), 1.0);
        assert_eq!(lambda_schedule(5, &p), 0.75);
        assert_eq!(lambda_schedule(10, &p), 0.5);
        assert_eq!(lambda_schedule(50, &p), 0.5);
    }

    #[test]
    fn slow_decrease_point() {
        let p = ScheduleParams {
            tau: 0.2,
            e_k: 10,
            e_max: 200,
            kind: ScheduleKind::SlowDecrease,
        };
        assert_eq!(lambda_schedule(105, &p), 0.70);
        assert_eq!(lambda_schedule(0, &p), 1.0);
    }

    #[test]
    fn slow_decrease_clamps_at_zero() {
        let p = ScheduleParams {
            tau: 0.8,
            e_k: 10,
            e_max: 20,
            kind: ScheduleKind::SlowDecrease,
        };
        assert_eq!(lambda_schedule(20, &p), 0.0);
    }

    #[test]
    fn schedule_validation() {
        assert!(floor_params(0.2, 0, 10).validate().is_err());
        assert!(floor_params(0.2, 11, 10).validate().is_err());
        assert!(floor_params(1.0, 5, 10).validate().is_err());
        assert!(floor_params(0.2, 10, 10).validate().is_ok());
    }

    #[test]
    fn small_loss_examples() {
        let s = select_small_loss(&[0.1, 0.9, 0.3, 0.7], 0.5).unwrap();
        assert_eq!(s.as_slice(), &[0, 2]);
        let s = select_small_loss(&[0.1, 0.9, 0.3, 0.7], 1.0).unwrap();
        assert_eq!(s.as_slice(), &[0, 1, 2, 3]);
        let s = select_small_loss(&[0.5, 0.5, 0.9], 1.0 / 3.0).unwrap();
        assert_eq!(s.as_slice(), &[0]);
        assert!(select_small_loss(&[0.1, 0.2], 0.0).unwrap().is_empty());
        assert!(select_small_loss(&[], 0.5).unwrap().is_empty());
        assert!(matches!(
            select_small_loss(&[0.1, f64::NAN], 0.5),
            Err(CoteachError::Numerical(_))
        ));
        assert!(select_small_loss(&[0.1], 1.5).is_err());
    }

    #[test]
    fn keep_count_floor_and_min_one() {
        assert_eq!(keep_count(10, 0.05), 1);
        assert_eq!(keep_count(10, 0.55), 5);
        for b in 2..300 {
            assert_eq!(keep_count(b, (b - 1) as f64 / b as f64), b - 1);
        }
    }

    #[test]
    fn disagreement_examples() {
        assert_eq!(select_disagreement(&[1, 2, 3], &[1, 0, 3]).unwrap().as_slice(), &[1]);
        assert!(select_disagreement(&[1, 2], &[1, 2]).unwrap().is_empty());
        assert_eq!(select_disagreement(&[0, 0], &[1, 1]).unwrap().as_slice(), &[0, 1]);
        assert!(select_disagreement(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn compose_maps_back() {
        let outer = IndexSet::new(vec![2, 5, 9]);
        let inner = IndexSet::new(vec![0, 2]);
        assert_eq!(outer.compose(&inner).as_slice(), &[2, 9]);
    }
}
