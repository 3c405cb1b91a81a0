//! Minimal dense-network engine.
//!
//! Everything is `f64`, row-major. Weights of a layer have shape
//! `(out_dim, in_dim)`. Matrix products go through `matrixmultiply`, whose
//! blocking is fixed for a given problem shape, so results are reproducible
//! bit for bit across runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoteachError, Result};

/// Probabilities are floored at this value before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoteachError::Config(format!(
                "matrix buffer has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CoteachError::Config("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// New matrix made of the given rows, in the given order.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Contiguous block of rows `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }
}

/// `c = a · b` with explicit strides (`beta = 0`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].fill(0.0);
        return;
    }
    // SAFETY: callers pass buffers sized for the requested shapes and strides;
    // `c` is row-major m x n and does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Identity; used by the final (logit) layer.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `(out_dim, in_dim)`.
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(CoteachError::Config("layer dimensions must be positive".into()));
        }
        if weights.len() != in_dim * out_dim || biases.len() != out_dim {
            return Err(CoteachError::Config(format!(
                "layer {in_dim}->{out_dim} got {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        Ok(DenseLayer {
            in_dim,
            out_dim,
            weights,
            biases,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `x · Wᵀ + b`, before the activation.
    fn affine(&self, x: &Matrix) -> Matrix {
        let mut z = Matrix::zeros(x.rows, self.out_dim);
        gemm(
            x.rows,
            self.in_dim,
            self.out_dim,
            &x.data,
            x.cols as isize,
            1,
            &self.weights,
            1,
            self.in_dim as isize,
            &mut z.data,
        );
        for row in z.data.chunks_exact_mut(self.out_dim) {
            for (v, b) in row.iter_mut().zip(&self.biases) {
                *v += b;
            }
        }
        z
    }
}

/// Multi-layer perceptron whose last layer emits logits.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

impl DenseNet {
    /// Build a network from explicit layers, checking that dimensions chain,
    /// parameters are finite and the last layer has no activation.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CoteachError::Config("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(CoteachError::Config(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].out_dim,
                    k + 1,
                    pair[1].in_dim
                )));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::None) {
            return Err(CoteachError::Config("final layer must have no activation".into()));
        }
        let net = DenseNet { layers };
        if !net.all_finite() {
            return Err(CoteachError::Numerical("non-finite parameter".into()));
        }
        Ok(net)
    }

    /// Glorot-uniform weights, zero biases, ReLU on every hidden layer.
    ///
    /// `sizes` lists every width including input and output, e.g.
    /// `[784, 256, 10]`.
    pub fn glorot(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(CoteachError::Config(
                "need at least an input and an output width".into(),
            ));
        }
        if sizes.contains(&0) {
            return Err(CoteachError::Config("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect();
                let activation = if k == last {
                    Activation::None
                } else {
                    Activation::Relu
                };
                DenseLayer::new(fan_in, fan_out, weights, vec![0.0; fan_out], activation)
            })
            .collect::<Result<Vec<_>>>()?;
        DenseNet::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols != self.input_dim() {
            return Err(CoteachError::Config(format!(
                "feature dimension {} does not match network input {}",
                x.cols,
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Raw logits, `(rows, num_classes)`.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = self.layers[0].affine(x);
        apply_activation(&mut a, self.layers[0].activation);
        for layer in &self.layers[1..] {
            a = layer.affine(&a);
            apply_activation(&mut a, layer.activation);
        }
        Ok(a)
    }

    /// Softmax class probabilities, one row per sample.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = self.logits(x)?;
        softmax_rows(&mut z);
        Ok(z)
    }

    /// Arg-max class per sample.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(x)?))
    }

    /// Gradient of the mean cross-entropy over `batch`, plus that mean loss.
    pub fn backward(&self, batch: &Batch) -> Result<(Gradients, f64)> {
        let x = &batch.features;
        self.check_input(x)?;
        let classes = self.num_classes();
        check_labels(&batch.labels, classes)?;
        let n = x.rows;
        if n == 0 {
            return Err(CoteachError::Input("empty batch".into()));
        }

        // activations[k] is the input of layer k; the last entry is the logits.
        let mut activations: Vec<Matrix> = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let mut z = layer.affine(activations.last().unwrap());
            apply_activation(&mut z, layer.activation);
            activations.push(z);
        }
        let mut delta = activations.pop().unwrap();
        softmax_rows(&mut delta);

        let mut loss = 0.0;
        let scale = 1.0 / n as f64;
        for (i, &y) in batch.labels.iter().enumerate() {
            let row = delta.row_mut(i);
            loss -= row[y].max(PROB_FLOOR).ln();
            row[y] -= 1.0;
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        loss *= scale;

        let mut grads = Gradients::zeros_like(self);
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &activations[k];
            let g = &mut grads.layers[k];
            // dW = deltaᵀ · input
            gemm(
                layer.out_dim,
                n,
                layer.in_dim,
                &delta.data,
                1,
                layer.out_dim as isize,
                &input.data,
                input.cols as isize,
                1,
                &mut g.weights,
            );
            for row in delta.data.chunks_exact(layer.out_dim) {
                for (gb, d) in g.biases.iter_mut().zip(row) {
                    *gb += d;
                }
            }
            if k > 0 {
                let mut prev = Matrix::zeros(n, layer.in_dim);
                gemm(
                    n,
                    layer.out_dim,
                    layer.in_dim,
                    &delta.data,
                    layer.out_dim as isize,
                    1,
                    &layer.weights,
                    layer.in_dim as isize,
                    1,
                    &mut prev.data,
                );
                if self.layers[k - 1].activation == Activation::Relu {
                    // input holds relu(z); its positive entries are exactly z > 0.
                    for (d, a) in prev.data.iter_mut().zip(&input.data) {
                        if *a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok((grads, loss))
    }
}

fn apply_activation(z: &mut Matrix, activation: Activation) {
    if activation == Activation::Relu {
        for v in &mut z.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// In-place max-subtracted softmax of every row.
pub fn softmax_rows(z: &mut Matrix) {
    if z.cols == 0 {
        return;
    }
    for row in z.data.chunks_exact_mut(z.cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Arg-max per row; ties go to the lowest class index.
pub fn argmax_rows(probs: &Matrix) -> Vec<usize> {
    (0..probs.rows)
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(CoteachError::Input(format!(
            "label {y} at position {i} outside [0, {classes})"
        )));
    }
    Ok(())
}

/// Cross-entropy of every row in nats, `-ln max(p[i, y_i], 1e-12)`.
pub fn per_sample_loss(probs: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    if labels.len() != probs.rows {
        return Err(CoteachError::Input(format!(
            "{} labels for {} probability rows",
            labels.len(),
            probs.rows
        )));
    }
    check_labels(labels, probs.cols)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.get(i, y).max(PROB_FLOOR).ln())
        .collect())
}

/// Features plus class labels for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows != labels.len() {
            return Err(CoteachError::Input(format!(
                "{} feature rows but {} labels",
                features.rows,
                labels.len()
            )));
        }
        Ok(Batch { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sub-batch made of `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        Batch {
            features: self.features.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Parameter-shaped buffer: gradients, or Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn same_shape(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Gradients,
    second_moment: Gradients,
    step: u64,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(net: &DenseNet, base_lr: f64) -> Self {
        Self::with_params(net, base_lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_params(net: &DenseNet, base_lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
            step: 0,
            base_lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.second_moment
    }
}

/// One bias-corrected Adam update at learning rate `lr`.
///
/// Gradients are checked for finiteness before anything is mutated.
pub fn adam_step(net: &mut DenseNet, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if !grads.same_shape(net) || !state.first_moment.same_shape(net) {
        return Err(CoteachError::Config("gradient shape does not match network".into()));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(CoteachError::Input(format!("learning rate {lr} must be finite and >= 0")));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(CoteachError::Numerical("non-finite gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    for (((layer, g), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.first_moment.layers)
        .zip(&mut state.second_moment.layers)
    {
        update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
        update(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
    }
    if !net.all_finite() {
        return Err(CoteachError::Numerical("parameters became non-finite".into()));
    }
    Ok(())
}

/// Constant `base` before `decay_start`, then linear decay reaching zero at `last`.
pub fn lr_at(epoch: usize, base: f64, decay_start: usize, last: usize) -> f64 {
    if epoch < decay_start {
        base
    } else if epoch >= last || last <= decay_start {
        0.0
    } else {
        base * ((last - epoch) as f64 / (last - decay_start) as f64)
    }
}
