//! Per-attribute patch weights from a weighted-logit model over stage-1 scores.
//!
//! For attribute `a` the model is `σ(Σ_p v_p²·logit(s_{p,a})/r_p + b_a)`, with `r_p`
//! the RMS of source `p`'s logits, fitted by
//! full-batch Adam on mean cross-entropy plus `sparsity·Σ_p v_p²`. Squaring keeps
//! the weights nonnegative and the penalty lets the most informative sources
//! win over redundant ones. Reported weights are `v²/max(v²)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{sigmoid, Mat};

use super::patches::SOURCES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub epochs: usize,
    pub lr: f64,
    pub sparsity: f64,
    /// Starting value of every `v_p²`.
    pub init: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            epochs: 500,
            lr: 0.05,
            sparsity: 2e-2,
            init: 0.1,
        }
    }
}

/// `k × 10` matrix; each row has maximum 1.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchWeights {
    pub matrix: Mat<f64>,
}

impl PatchWeights {
    pub fn uniform(k: usize) -> Self {
        PatchWeights {
            matrix: Mat::filled(k, SOURCES, 1.0),
        }
    }

    pub fn attributes(&self) -> usize {
        self.matrix.rows()
    }

    pub fn get(&self, attribute: usize, source: usize) -> f64 {
        self.matrix.get(attribute, source)
    }

    /// Source with the largest weight for `attribute` (lowest index on ties).
    pub fn argmax(&self, attribute: usize) -> usize {
        let row = self.matrix.row(attribute);
        (0..row.len()).fold(0, |best, s| if row[s] > row[best] { s } else { best })
    }

    /// Sources sorted by decreasing weight.
    pub fn ranking(&self, attribute: usize) -> Vec<usize> {
        let row = self.matrix.row(attribute);
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        idx
    }
}

#[derive(Clone, Debug)]
pub struct WeightFit {
    pub weights: PatchWeights,
    pub warnings: Vec<String>,
}

const LOGIT_CLIP: f64 = 1e-6;

fn logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_CLIP, 1.0 - LOGIT_CLIP);
    (p / (1.0 - p)).ln()
}

/// `scores[s]` is the `k × n` stage-1 output of source `s`; `labels` has `n` rows.
pub fn learn_patch_weights(scores: &[Mat<f64>], labels: &[Vec<u8>], config: &WeightConfig) -> Result<WeightFit> {
    if scores.len() != SOURCES {
        return Err(Error::Config(format!("expected {SOURCES} score blocks, got {}", scores.len())));
    }
    let (k, n) = scores[0].shape();
    if n == 0 || labels.len() != n {
        return Err(Error::Config(format!("{n} scored samples but {} label rows", labels.len())));
    }
    if let Some(bad) = scores.iter().find(|s| s.shape() != (k, n)) {
        return Err(Error::shape("patch weight scores", (k, n), bad.shape()));
    }
    let rows: Vec<(Vec<f64>, Option<String>)> = (0..k)
        .into_par_iter()
        .map(|a| fit_attribute(scores, labels, a, config))
        .collect();
    let mut matrix = Mat::zeros(k, SOURCES);
    let mut warnings = Vec::new();
    for (a, (row, warning)) in rows.into_iter().enumerate() {
        for (s, v) in row.into_iter().enumerate() {
            matrix.set(a, s, v);
        }
        if let Some(w) = warning {
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    Ok(WeightFit {
        weights: PatchWeights { matrix },
        warnings,
    })
}

fn fit_attribute(scores: &[Mat<f64>], labels: &[Vec<u8>], a: usize, config: &WeightConfig) -> (Vec<f64>, Option<String>) {
    let n = labels.len();
    let y: Vec<f64> = labels.iter().map(|r| r[a] as f64).collect();
    if y.iter().all(|&v| v == y[0]) {
        return (
            vec![1.0; SOURCES],
            Some(format!("attribute {a} has a single class; using uniform patch weights")),
        );
    }
    // logits[p][j], each source rescaled to unit RMS so that v² is not
    // confounded with how confident a head happens to be.
    let logits: Vec<Vec<f64>> = scores
        .iter()
        .map(|s| {
            let row: Vec<f64> = s.row(a).iter().map(|&p| logit(p)).collect();
            let rms = (row.iter().map(|z| z * z).sum::<f64>() / n as f64).sqrt();
            if rms > 0.0 { row.into_iter().map(|z| z / rms).collect() } else { row }
        })
        .collect();
    let mut v = Mat::filled(SOURCES, 1, config.init.sqrt());
    let mut b = Mat::zeros(1, 1);
    let mut adam = AdamState::<f64>::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, [(SOURCES, 1), (1, 1)]);
    let names = ["v".to_owned(), "b".to_owned()];
    let inv_n = 1.0 / n as f64;
    for _ in 0..config.epochs {
        let mut gv = Mat::zeros(SOURCES, 1);
        let mut gb = 0.0;
        for j in 0..n {
            let z: f64 = (0..SOURCES).map(|p| v.get(p, 0).powi(2) * logits[p][j]).sum::<f64>() + b.get(0, 0);
            let dz = (sigmoid(z) - y[j]) * inv_n;
            gb += dz;
            for p in 0..SOURCES {
                let g = gv.get(p, 0) + dz * 2.0 * v.get(p, 0) * logits[p][j];
                gv.set(p, 0, g);
            }
        }
        for p in 0..SOURCES {
            let g = gv.get(p, 0) + config.sparsity * 2.0 * v.get(p, 0);
            gv.set(p, 0, g);
        }
        let gb = Mat::filled(1, 1, gb);
        if adam.step(&mut [&mut v, &mut b], &[&gv, &gb], &names).is_err() {
            break;
        }
    }
    let w2: Vec<f64> = v.data().iter().map(|x| x * x).collect();
    let max = w2.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return (
            vec![1.0; SOURCES],
            Some(format!("patch weights for attribute {a} collapsed to zero; using uniform weights")),
        );
    }
    (w2.into_iter().map(|w| w / max).collect(), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn planted(n: usize, informative: usize, seed: u64) -> (Vec<Mat<f64>>, Vec<Vec<u8>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<Vec<u8>> = (0..n).map(|_| vec![rng.gen_bool(0.5) as u8]).collect();
        let scores = (0..SOURCES)
            .map(|s| {
                let row: Vec<f64> = labels
                    .iter()
                    .map(|l| {
                        if s == informative {
                            if l[0] == 1 { rng.gen_range(0.8..0.99) } else { rng.gen_range(0.01..0.2) }
                        } else {
                            rng.gen_range(0.3..0.7)
                        }
                    })
                    .collect();
                Mat::from_vec(1, n, row).unwrap()
            })
            .collect();
        (scores, labels)
    }

    #[test]
    fn informative_source_wins() {
        let (scores, labels) = planted(200, 3, 1);
        let fit = learn_patch_weights(&scores, &labels, &WeightConfig::default()).unwrap();
        assert_eq!(fit.weights.argmax(0), 3);
        assert_eq!(fit.weights.get(0, 3), 1.0);
    }

    #[test]
    fn identical_sources_give_uniform_weights() {
        let (scores, labels) = planted(100, 0, 2);
        let same: Vec<Mat<f64>> = (0..SOURCES).map(|_| scores[0].clone()).collect();
        let fit = learn_patch_weights(&same, &labels, &WeightConfig::default()).unwrap();
        for s in 0..SOURCES {
            assert!((fit.weights.get(0, s) - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn rows_are_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 80;
        let k = 3;
        let scores: Vec<Mat<f64>> = (0..SOURCES).map(|_| Mat::random_uniform(k, n, 0.45, &mut rng).map(|v| v + 0.5)).collect();
        let labels: Vec<Vec<u8>> = (0..n).map(|_| (0..k).map(|_| rng.gen_bool(0.5) as u8).collect()).collect();
        let fit = learn_patch_weights(&scores, &labels, &WeightConfig::default()).unwrap();
        assert_eq!(fit.weights.matrix.shape(), (k, SOURCES));
        for a in 0..k {
            let row = fit.weights.matrix.row(a);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            assert_eq!(row.iter().cloned().fold(0.0, f64::max), 1.0);
        }
    }

    #[test]
    fn single_class_falls_back_to_uniform() {
        let (scores, _) = planted(20, 0, 4);
        let labels = vec![vec![1u8]; 20];
        let fit = learn_patch_weights(&scores, &labels, &WeightConfig::default()).unwrap();
        assert_eq!(fit.warnings.len(), 1);
        assert!(fit.weights.matrix.data().iter().all(|&w| w == 1.0));
    }
}
