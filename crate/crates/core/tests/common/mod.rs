//! Oracles shared by the property tests and the acceptance runner.
#![allow(dead_code)]

use coteach::nn::{Activation, Batch, DenseNet, Matrix};
use coteach::selection::select_small_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain-loop forward pass: mean CE loss and the sign pattern of every
/// hidden pre-activation.
pub fn reference_loss(net: &DenseNet, x: &[Vec<f64>], labels: &[usize]) -> (f64, Vec<bool>) {
    let mut pattern = Vec::new();
    let mut total = 0.0;
    for (row, &y) in x.iter().zip(labels) {
        let mut a = row.clone();
        for layer in net.layers() {
            let (w, b) = (layer.weights(), layer.biases());
            let mut z = vec![0.0; layer.out_dim()];
            for o in 0..layer.out_dim() {
                let mut s = b[o];
                for i in 0..layer.in_dim() {
                    s += w[o * layer.in_dim() + i] * a[i];
                }
                z[o] = s;
            }
            if layer.activation() == Activation::Relu {
                for v in &mut z {
                    pattern.push(*v > 0.0);
                    *v = v.max(0.0);
                }
            }
            a = z;
        }
        let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = a.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += lse - a[y];
    }
    (total / x.len() as f64, pattern)
}

/// Random net (1–3 layers, widths 2–16) with a random batch of up to 8 rows.
pub fn random_case(seed: u64) -> (DenseNet, Batch, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(1..=3);
    let mut sizes = vec![rng.gen_range(2..=16)];
    for _ in 0..depth {
        sizes.push(rng.gen_range(2..=16));
    }
    let mut net = DenseNet::glorot(&sizes, seed ^ 0xABCD).unwrap();
    // non-zero biases so the check covers them
    for layer in net.layers_mut() {
        for b in layer.biases_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let n = rng.gen_range(1..=8);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let classes = *sizes.last().unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let batch = Batch::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap();
    (net, batch, rows)
}

/// Central differences with step `h` against `backward` on `cases` random
/// nets. Coordinates whose perturbation flips a ReLU are skipped. Returns
/// the number of coordinates compared.
pub fn gradient_check(cases: u64, h: f64, rel_tol: f64) -> Result<usize, String> {
    let mut checked = 0usize;
    for case in 0..cases {
        let (net, batch, rows) = random_case(case);
        let (grads, loss) = net.backward(&batch).map_err(|e| e.to_string())?;
        let (ref_loss, base_pattern) = reference_loss(&net, &rows, &batch.labels);
        if (loss - ref_loss).abs() > 1e-12 {
            return Err(format!("case {case}: loss {loss} vs reference {ref_loss}"));
        }
        for k in 0..net.layers().len() {
            let n_w = net.layers()[k].weights().len();
            let n_b = net.layers()[k].biases().len();
            for p in 0..n_w + n_b {
                let eval = |delta: f64| {
                    let mut probe = net.clone();
                    let layer = &mut probe.layers_mut()[k];
                    if p < n_w {
                        layer.weights_mut()[p] += delta;
                    } else {
                        layer.biases_mut()[p - n_w] += delta;
                    }
                    reference_loss(&probe, &rows, &batch.labels)
                };
                let (plus, pat_p) = eval(h);
                let (minus, pat_m) = eval(-h);
                if pat_p != base_pattern || pat_m != base_pattern {
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = if p < n_w {
                    grads.layers[k].weights[p]
                } else {
                    grads.layers[k].biases[p - n_w]
                };
                let scale = analytic.abs().max(numeric.abs());
                let err = (analytic - numeric).abs();
                if err > rel_tol * scale && err >= 1e-8 {
                    return Err(format!(
                        "case {case} layer {k} param {p}: analytic {analytic} numeric {numeric}"
                    ));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Every k-subset of `0..n` as a sorted vec.
fn subsets(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u32..1 << n)
        .filter(move |m| m.count_ones() as usize == k)
        .map(move |m| (0..n).filter(|i| m >> i & 1 == 1).collect())
}

/// The k-subset of minimum total loss; ties go to the lexicographically
/// smallest index list.
pub fn brute_small_loss(losses: &[f64], k: usize) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for s in subsets(losses.len(), k) {
        let total: f64 = s.iter().map(|&i| losses[i]).sum();
        let better = match &best {
            None => true,
            Some((bt, bs)) => total < *bt || (total == *bt && s < *bs),
        };
        if better {
            best = Some((total, s));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

/// `select_small_loss` against exhaustive search for every length 1..=8,
/// 60 loss vectors per length on a coarse grid (frequent ties), several
/// keep fractions.
pub fn small_loss_oracle() -> Result<usize, String> {
    let grid = [0.0, 0.25, 0.5, 1.0];
    let fractions = [0.1, 0.25, 1.0 / 3.0, 0.5, 0.7, 0.9, 1.0];
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut compared = 0;
    for n in 1..=8usize {
        for _ in 0..60 {
            let losses: Vec<f64> = (0..n)
                .map(|_| {
                    state = state
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    grid[(state >> 33) as usize % grid.len()]
                })
                .collect();
            for &f in &fractions {
                let k = (f * n as f64).floor().max(1.0) as usize;
                let got = select_small_loss(&losses, f).map_err(|e| e.to_string())?;
                let want = brute_small_loss(&losses, k);
                if got.as_slice() != want.as_slice() {
                    return Err(format!("losses {losses:?} f {f}: got {:?} want {want:?}", got.as_slice()));
                }
                compared += 1;
            }
        }
    }
    Ok(compared)
}
