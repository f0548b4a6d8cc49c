//! Multi-label MLP: two relu hidden layers and one sigmoid output per attribute,
//! trained on summed binary cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{backward_from_delta, dense_backward, DenseLayer, LayerCache};
use crate::optim::{adam_step, AdamConfig, AdamState, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::{Activation, Mat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            epochs: 40,
            batch_size: 32,
            lr: 3e-3,
            seed: 0,
        }
    }
}

/// Hidden widths `[l/2, l/4]` for an `l`-dimensional code, floored at 1.
pub fn head_hidden_dims(code_dim: usize) -> [usize; 2] {
    [(code_dim / 2).max(1), (code_dim / 4).max(1)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead<T> {
    /// Per-feature centering, fitted on the training features and then frozen.
    pub shift: Mat<T>,
    /// Per-feature scaling applied after centering.
    pub scale: Mat<T>,
    pub layers: Vec<DenseLayer<T>>,
}

#[derive(Clone, Debug)]
pub struct HeadFit<T> {
    pub head: MlpHead<T>,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> MlpHead<T> {
    pub fn new<R: rand::Rng + ?Sized>(input_dim: usize, hidden: [usize; 2], outputs: usize, rng: &mut R) -> Self {
        MlpHead {
            shift: Mat::zeros(input_dim, 1),
            scale: Mat::filled(input_dim, 1, T::one()),
            layers: vec![
                DenseLayer::new(input_dim, hidden[0], Activation::Relu, rng),
                DenseLayer::new(hidden[0], hidden[1], Activation::Relu, rng),
                DenseLayer::new(hidden[1], outputs, Activation::Sigmoid, rng),
            ],
        }
    }

    pub fn zeros(input_dim: usize, hidden: [usize; 2], outputs: usize) -> Self {
        MlpHead {
            shift: Mat::zeros(input_dim, 1),
            scale: Mat::filled(input_dim, 1, T::one()),
            layers: vec![
                DenseLayer::zeros(input_dim, hidden[0], Activation::Relu),
                DenseLayer::zeros(hidden[0], hidden[1], Activation::Relu),
                DenseLayer::zeros(hidden[1], outputs, Activation::Sigmoid),
            ],
        }
    }

    pub fn from_parts(shift: Mat<T>, scale: Mat<T>, layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.len() != 3 {
            return Err(Error::Config(format!("MLP head needs 3 layers, got {}", layers.len())));
        }
        let d = layers[0].in_dim();
        if shift.shape() != (d, 1) || scale.shape() != (d, 1) {
            return Err(Error::shape("MLP head standardiser", (d, 1), shift.shape()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Config("MLP head layer widths do not chain".into()));
            }
        }
        Ok(MlpHead { shift, scale, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn outputs(&self) -> usize {
        self.layers[2].out_dim()
    }

    fn standardize(&self, x: &Mat<T>) -> Result<Mat<T>> {
        if x.rows() != self.input_dim() {
            return Err(Error::shape("MLP head input", (self.input_dim(), x.cols()), x.shape()));
        }
        let mut out = x.clone();
        let n = x.cols();
        for r in 0..x.rows() {
            let (s, c) = (self.shift.get(r, 0), self.scale.get(r, 0));
            for v in &mut out.data_mut()[r * n..(r + 1) * n] {
                *v = (*v - s) * c;
            }
        }
        Ok(out)
    }

    fn forward_caches(&self, x: &Mat<T>) -> Result<Vec<LayerCache<T>>> {
        let mut caches: Vec<LayerCache<T>> = Vec::with_capacity(3);
        let input = self.standardize(x)?;
        for layer in &self.layers {
            let c = layer.forward(caches.last().map_or(&input, |c| &c.output), None)?;
            caches.push(c);
        }
        Ok(caches)
    }

    /// Per-attribute probabilities, `k × n`.
    pub fn score(&self, x: &Mat<T>) -> Result<Mat<T>> {
        Ok(self.forward_caches(x)?.pop().expect("three layers").output)
    }

    /// Mean over columns of the summed binary cross-entropy, and its gradients.
    pub fn loss_and_grads(&self, x: &Mat<T>, y: &Mat<T>) -> Result<(T, Vec<Mat<T>>)> {
        let caches = self.forward_caches(x)?;
        let out = &caches[2];
        if y.shape() != out.output.shape() {
            return Err(Error::shape("MLP head labels", out.output.shape(), y.shape()));
        }
        let inv_n = T::one() / T::lit(x.cols() as f64);
        let mut loss = T::zero();
        for (&z, &t) in out.pre_activation.data().iter().zip(y.data()) {
            // softplus(z) − t·z, stable for large |z|
            loss += z.max(T::zero()) - t * z + (-z.abs()).exp().ln_1p();
        }
        loss = loss * inv_n;
        let delta = out.output.sub(y)?.scale(inv_n);
        let mut grads = vec![Mat::zeros(0, 0); 6];
        let g = backward_from_delta(&self.layers[2], out, delta)?;
        grads[4] = g.grad_weight;
        grads[5] = g.grad_bias;
        let mut upstream = g.grad_in;
        for i in (0..2).rev() {
            let g = dense_backward(&self.layers[i], &caches[i], &upstream)?;
            grads[2 * i] = g.grad_weight;
            grads[2 * i + 1] = g.grad_bias;
            upstream = g.grad_in;
        }
        Ok((loss, grads))
    }
}

impl<T: Scalar> Parameterized<T> for MlpHead<T> {
    fn param_names(&self) -> Vec<String> {
        (0..3)
            .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }

    fn params(&self) -> Vec<&Mat<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Mat<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Labels as a `k × n` 0/1 matrix.
pub fn label_matrix<T: Scalar>(labels: &[Vec<u8>]) -> Result<Mat<T>> {
    let cols: Vec<Vec<T>> = labels
        .iter()
        .map(|row| row.iter().map(|&b| if b != 0 { T::one() } else { T::zero() }).collect())
        .collect();
    Mat::from_columns(&cols)
}

/// Attributes for which every label is identical.
pub fn single_class_attributes(labels: &[Vec<u8>]) -> Vec<usize> {
    let k = labels.first().map_or(0, Vec::len);
    (0..k)
        .filter(|&a| labels.iter().all(|row| row[a] == labels[0][a]))
        .collect()
}

/// Fit a head on `features` (`dim × n`) with `labels` (`n` rows of `k` bits).
pub fn head_train<T: Scalar>(features: &Mat<T>, labels: &[Vec<u8>], hidden: [usize; 2], config: &HeadConfig) -> Result<HeadFit<T>> {
    let n = features.cols();
    if n == 0 || labels.len() != n {
        return Err(Error::Config(format!(
            "head training needs matching non-empty features and labels ({n} vs {})",
            labels.len()
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let k = labels[0].len();
    if labels.iter().any(|r| r.len() != k || r.iter().any(|&b| b > 1)) {
        return Err(Error::Config("labels must be k-bit vectors of 0/1".into()));
    }
    let warnings: Vec<String> = single_class_attributes(labels)
        .into_iter()
        .map(|a| format!("attribute {a} has a single class in the training labels"))
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }

    let y = label_matrix::<T>(labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = MlpHead::new(features.rows(), hidden, k, &mut rng);
    fit_standardizer(&mut head, features);

    let mut adam = AdamState::for_model(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &head);
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = head.loss_and_grads(&features.select_columns(batch), &y.select_columns(batch))?;
            let refs: Vec<&Mat<T>> = grads.iter().collect();
            adam_step(&mut adam, &mut head, &refs)?;
            sum += loss.as_f64();
            batches += 1;
        }
        losses.push(sum / batches as f64);
    }
    Ok(HeadFit { head, losses, warnings })
}

fn fit_standardizer<T: Scalar>(head: &mut MlpHead<T>, features: &Mat<T>) {
    let n = T::lit(features.cols() as f64);
    for r in 0..features.rows() {
        let row = features.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let sd = var.sqrt();
        head.shift.set(r, 0, mean);
        head.scale
            .set(r, 0, if sd > T::lit(1e-8) { T::one() / sd } else { T::one() });
    }
}
