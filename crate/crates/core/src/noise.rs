//! Label-noise transition matrices and seeded corruption.
//!
//! `Q[i][j] = Pr(noisy = j | clean = i)`. Every row is a distribution.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoteachError, Result};

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Mass τ spread uniformly over the other C−1 classes.
    Symmetric,
    /// Mass τ moved to the next class, cyclically.
    Pair,
    Identity,
    /// Read from a text file.
    Custom,
}

impl FromStr for NoiseKind {
    type Err = CoteachError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(NoiseKind::Symmetric),
            "pair" => Ok(NoiseKind::Pair),
            "identity" => Ok(NoiseKind::Identity),
            "custom" => Ok(NoiseKind::Custom),
            other => Err(CoteachError::Input(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    q: Vec<f64>,
    num_classes: usize,
    noise_rate: f64,
    kind: NoiseKind,
}

impl TransitionMatrix {
    /// Symmetric, pair or identity matrix with flip rate `tau`.
    pub fn build(kind: NoiseKind, tau: f64, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(CoteachError::Input("need at least two classes".into()));
        }
        if !(0.0..1.0).contains(&tau) {
            return Err(CoteachError::Input(format!("noise rate {tau} outside [0, 1)")));
        }
        let c = num_classes;
        let mut q = vec![0.0; c * c];
        let noise_rate = match kind {
            NoiseKind::Symmetric => {
                let off = tau / (c - 1) as f64;
                for i in 0..c {
                    for j in 0..c {
                        q[i * c + j] = if i == j { 1.0 - tau } else { off };
                    }
                }
                tau
            }
            NoiseKind::Pair => {
                for i in 0..c {
                    q[i * c + i] = 1.0 - tau;
                    q[i * c + (i + 1) % c] += tau;
                }
                tau
            }
            NoiseKind::Identity => {
                for i in 0..c {
                    q[i * c + i] = 1.0;
                }
                0.0
            }
            NoiseKind::Custom => {
                return Err(CoteachError::Input(
                    "custom matrices are read from a file, not built".into(),
                ))
            }
        };
        Ok(TransitionMatrix {
            q,
            num_classes: c,
            noise_rate,
            kind,
        })
    }

    /// Custom matrix from explicit rows. Noise rate is 1 − mean diagonal.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.len();
        if c < 2 {
            return Err(CoteachError::Input("need at least two classes".into()));
        }
        let mut q = Vec::with_capacity(c * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(CoteachError::Input(format!(
                    "row {i} has {} entries, expected {c}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(CoteachError::Input(format!("row {i} holds {v}, outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(CoteachError::Input(format!("row {i} sums to {sum}")));
            }
            q.extend_from_slice(row);
        }
        let diag: f64 = (0..c).map(|i| q[i * c + i]).sum();
        Ok(TransitionMatrix {
            q,
            num_classes: c,
            noise_rate: (1.0 - diag / c as f64).max(0.0),
            kind: NoiseKind::Custom,
        })
    }

    /// Text form: first line `C`, then `C` rows of `C` whitespace-separated
    /// probabilities.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| CoteachError::Input("empty transition matrix file".into()))?;
        let c: usize = header
            .trim()
            .parse()
            .map_err(|_| CoteachError::Input(format!("bad class count `{}`", header.trim())))?;
        let rows = lines
            .map(|line| {
                line.split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>()
                            .map_err(|_| CoteachError::Input(format!("bad probability `{tok}`")))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.len() != c {
            return Err(CoteachError::Input(format!(
                "header says {c} classes but {} rows follow",
                rows.len()
            )));
        }
        Self::from_rows(&rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoteachError::io(path, e))?;
        Self::parse_text(&text)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn noise_rate(&self) -> f64 {
        self.noise_rate
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.num_classes + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.q.chunks_exact(self.num_classes)
    }
}

/// Same layout as [`TransitionMatrix::parse_text`] reads.
impl fmt::Display for TransitionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.num_classes)?;
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Resample every label from its row of `q` by inverse CDF.
pub fn corrupt_labels(clean: &[usize], q: &TransitionMatrix, seed: u64) -> Result<Vec<usize>> {
    let c = q.num_classes();
    if let Some(i) = clean.iter().position(|&y| y >= c) {
        return Err(CoteachError::Input(format!(
            "label {} at position {i} outside [0, {c})",
            clean[i]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(clean
        .iter()
        .map(|&y| {
            let u: f64 = rng.gen();
            let row = q.row(y);
            let mut cum = 0.0;
            let mut last_nonzero = y;
            for (j, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    last_nonzero = j;
                }
                cum += p;
                if u < cum {
                    return j;
                }
            }
            // rounding left the cumulative sum a hair under u
            last_nonzero
        })
        .collect())
}

/// Fraction of positions where the two label vectors differ.
pub fn empirical_noise_rate(clean: &[usize], noisy: &[usize]) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(CoteachError::Input(format!(
            "length mismatch: {} vs {}",
            clean.len(),
            noisy.len()
        )));
    }
    if clean.is_empty() {
        return Err(CoteachError::Input("empty label vectors".into()));
    }
    let flipped = clean.iter().zip(noisy).filter(|(a, b)| a != b).count();
    Ok(flipped as f64 / clean.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_half() {
        let q = TransitionMatrix::build(NoiseKind::Symmetric, 0.5, 10).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let expect = if i == j { 0.5 } else { 0.5 / 9.0 };
                assert!((q.get(i, j) - expect).abs() < 1e-12);
            }
        }
        assert!((q.get(0, 1) - 0.055_555_555_555_555_6).abs() < 1e-12);
    }

    #[test]
    fn pair_45() {
        let q = TransitionMatrix::build(NoiseKind::Pair, 0.45, 10).unwrap();
        assert!((q.get(3, 3) - 0.55).abs() < 1e-12);
        assert_eq!(q.get(3, 4), 0.45);
        assert_eq!(q.get(9, 0), 0.45);
        for row in q.rows() {
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 2);
        }
    }

    #[test]
    fn zero_tau_is_identity() {
        for kind in [NoiseKind::Symmetric, NoiseKind::Pair, NoiseKind::Identity] {
            let q = TransitionMatrix::build(kind, 0.0, 4).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(q.get(i, j), if i == j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn tau_out_of_range() {
        assert!(TransitionMatrix::build(NoiseKind::Symmetric, 1.0, 4).is_err());
        assert!(TransitionMatrix::build(NoiseKind::Pair, -0.1, 4).is_err());
        assert!(TransitionMatrix::build(NoiseKind::Pair, 0.2, 1).is_err());
    }

    #[test]
    fn text_round_trip() {
        let q = TransitionMatrix::build(NoiseKind::Pair, 0.3, 3).unwrap();
        let back = TransitionMatrix::parse_text(&q.to_string()).unwrap();
        assert_eq!(back.rows().collect::<Vec<_>>(), q.rows().collect::<Vec<_>>());
        assert_eq!(back.kind(), NoiseKind::Custom);
        assert!((back.noise_rate() - 0.3).abs() < 1e-12);
        assert!(TransitionMatrix::parse_text("2\n0.5 0.6\n0.5 0.5\n").is_err());
        assert!(TransitionMatrix::parse_text("3\n1 0 0\n0 1 0\n").is_err());
    }

    #[test]
    fn noise_rate_examples() {
        assert_eq!(empirical_noise_rate(&[1, 2], &[1, 2]).unwrap(), 0.0);
        assert_eq!(empirical_noise_rate(&[1, 2], &[0, 0]).unwrap(), 1.0);
        assert_eq!(empirical_noise_rate(&[0, 1, 2, 3], &[0, 1, 0, 0]).unwrap(), 0.5);
        assert!(empirical_noise_rate(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn corrupt_rejects_out_of_range() {
        let q = TransitionMatrix::build(NoiseKind::Symmetric, 0.2, 3).unwrap();
        assert!(corrupt_labels(&[0, 3], &q, 1).is_err());
    }
}
