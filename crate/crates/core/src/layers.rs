//! Fully connected layer with an explicit forward cache and analytic backward pass.
//!
//! Inputs are batches of column vectors. Skip contributions from other layers
//! enter the pre-activation additively: `z = W·x + b + skip`, `y = φ(z)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Activation, Mat};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    /// `out_dim × in_dim`
    pub weight: Mat<T>,
    /// `out_dim × 1`
    pub bias: Mat<T>,
    pub act: Activation,
}

#[derive(Clone, Debug)]
pub struct LayerCache<T> {
    pub input: Mat<T>,
    pub pre_activation: Mat<T>,
    pub output: Mat<T>,
}

#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    pub grad_in: Mat<T>,
    pub grad_weight: Mat<T>,
    pub grad_bias: Mat<T>,
    /// Gradient w.r.t. any additive skip input; equal to δ.
    pub grad_skip: Mat<T>,
}

impl<T: Scalar> DenseLayer<T> {
    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, act: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        DenseLayer {
            weight: Mat::random_uniform(out_dim, in_dim, limit, rng),
            bias: Mat::zeros(out_dim, 1),
            act,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, act: Activation) -> Self {
        DenseLayer {
            weight: Mat::zeros(out_dim, in_dim),
            bias: Mat::zeros(out_dim, 1),
            act,
        }
    }

    pub fn from_parts(weight: Mat<T>, bias: Mat<T>, act: Activation) -> Result<Self> {
        if bias.cols() != 1 || bias.rows() != weight.rows() {
            return Err(Error::shape("DenseLayer bias", weight.shape(), bias.shape()));
        }
        Ok(DenseLayer { weight, bias, act })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Mat<T>, skip_in: Option<&Mat<T>>) -> Result<LayerCache<T>> {
        dense_forward(self, x, skip_in)
    }

    pub fn backward(&self, cache: &LayerCache<T>, grad_out: &Mat<T>) -> Result<LayerGrads<T>> {
        dense_backward(self, cache, grad_out)
    }

    fn label(&self) -> String {
        format!("dense {}→{}", self.in_dim(), self.out_dim())
    }
}

pub fn dense_forward<T: Scalar>(layer: &DenseLayer<T>, x: &Mat<T>, skip_in: Option<&Mat<T>>) -> Result<LayerCache<T>> {
    if x.rows() != layer.in_dim() {
        return Err(Error::shape(format!("{} input", layer.label()), layer.weight.shape(), x.shape()));
    }
    let mut z = layer.weight.matmul(x)?.add_column(&layer.bias)?;
    if let Some(skip) = skip_in {
        if skip.shape() != z.shape() {
            return Err(Error::shape(format!("{} skip input", layer.label()), z.shape(), skip.shape()));
        }
        z.add_assign(skip)?;
    }
    let act = layer.act;
    let output = z.map(|v| act.value(v));
    Ok(LayerCache {
        input: x.clone(),
        pre_activation: z,
        output,
    })
}

pub fn dense_backward<T: Scalar>(layer: &DenseLayer<T>, cache: &LayerCache<T>, grad_out: &Mat<T>) -> Result<LayerGrads<T>> {
    if grad_out.shape() != cache.pre_activation.shape() {
        return Err(Error::shape(
            format!("{} upstream gradient", layer.label()),
            cache.pre_activation.shape(),
            grad_out.shape(),
        ));
    }
    let act = layer.act;
    let dphi = cache.pre_activation.map(|v| act.derivative(v));
    let delta = grad_out.hadamard(&dphi)?;
    backward_from_delta(layer, cache, delta)
}

/// Backward pass when δ = ∂L/∂z is already known (e.g. sigmoid + cross-entropy).
pub fn backward_from_delta<T: Scalar>(layer: &DenseLayer<T>, cache: &LayerCache<T>, delta: Mat<T>) -> Result<LayerGrads<T>> {
    if delta.shape() != cache.pre_activation.shape() {
        return Err(Error::shape(format!("{} delta", layer.label()), cache.pre_activation.shape(), delta.shape()));
    }
    let grad_weight = delta.matmul_nt(&cache.input)?;
    let grad_bias = delta.row_sums();
    let grad_in = layer.weight.matmul_tn(&delta)?;
    Ok(LayerGrads {
        grad_in,
        grad_weight,
        grad_bias,
        grad_skip: delta,
    })
}
