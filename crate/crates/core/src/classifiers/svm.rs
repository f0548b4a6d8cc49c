//! Linear SVM per attribute, trained with Pegasos stochastic subgradient steps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub epochs: usize,
    pub reg: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            epochs: 20,
            reg: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    /// One weight vector per attribute.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl LinearSvm {
    pub fn attributes(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| dot(w, x) + b)
            .collect()
    }

    /// `sign(margin)` mapped to {0,1}; a zero margin counts as 0.
    pub fn predict(&self, x: &[f64]) -> Vec<u8> {
        self.margins(x).iter().map(|&m| (m > 0.0) as u8).collect()
    }

    /// `σ(margin)`, used only for the ensemble confidence.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.margins(x).into_iter().map(sigmoid).collect()
    }
}

/// Train one SVM per attribute. The bias is learned as the weight of an
/// implicit constant feature, so it is regularised along with `w`.
pub fn svm_train(features: &[Vec<f64>], labels: &[Vec<u8>], config: &SvmConfig) -> Result<LinearSvm> {
    let n = features.len();
    if n == 0 {
        return Err(Error::Training("svm needs at least one sample".into()));
    }
    if labels.len() != n {
        return Err(Error::Config(format!("{n} feature rows but {} label rows", labels.len())));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Config("svm features must have equal length".into()));
    }
    if !(config.reg > 0.0) {
        return Err(Error::Config(format!("svm reg must be positive, got {}", config.reg)));
    }
    let k = labels[0].len();
    let radius = 1.0 / config.reg.sqrt();
    let fitted: Vec<(Vec<f64>, f64)> = (0..k)
        .into_par_iter()
        .map(|a| {
            let y: Vec<f64> = labels.iter().map(|r| if r[a] == 1 { 1.0 } else { -1.0 }).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(a as u64));
            let mut w = vec![0.0; dim];
            let mut b = 0.0;
            let mut order: Vec<usize> = (0..n).collect();
            let mut t = 0u64;
            for _ in 0..config.epochs {
                order.shuffle(&mut rng);
                for &i in &order {
                    t += 1;
                    let eta = 1.0 / (config.reg * t as f64);
                    let margin = y[i] * (dot(&w, &features[i]) + b);
                    let shrink = 1.0 - eta * config.reg;
                    w.iter_mut().for_each(|v| *v *= shrink);
                    b *= shrink;
                    if margin < 1.0 {
                        for (wv, xv) in w.iter_mut().zip(&features[i]) {
                            *wv += eta * y[i] * xv;
                        }
                        b += eta * y[i];
                    }
                    let norm = (dot(&w, &w) + b * b).sqrt();
                    if norm > radius {
                        let s = radius / norm;
                        w.iter_mut().for_each(|v| *v *= s);
                        b *= s;
                    }
                }
            }
            (w, b)
        })
        .collect();
    let (weights, biases) = fitted.into_iter().unzip();
    Ok(LinearSvm { weights, biases })
}
