//! Adam with bias correction, and a reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Mat;

/// Anything exposing an ordered list of named parameter arrays.
pub trait Parameterized<T> {
    fn param_names(&self) -> Vec<String>;
    fn params(&self) -> Vec<&Mat<T>>;
    fn params_mut(&mut self) -> Vec<&mut Mat<T>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<Mat<T>>,
    v: Vec<Mat<T>>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<I>(config: AdamConfig, shapes: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let (m, v) = shapes
            .into_iter()
            .map(|(r, c)| (Mat::zeros(r, c), Mat::zeros(r, c)))
            .unzip();
        AdamState {
            m,
            v,
            t: 0,
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
        }
    }

    pub fn for_model<P: Parameterized<T> + ?Sized>(config: AdamConfig, model: &P) -> Self {
        Self::new(config, model.params().iter().map(|p| p.shape()))
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One Adam update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Mat<T>], grads: &[&Mat<T>], names: &[String]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Training(format!(
                "optimizer tracks {} arrays, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = || names.get(i).cloned().unwrap_or_else(|| format!("param[{i}]"));
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::shape(format!("adam step for {}", name()), p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { param: name() });
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((pv, &gv), (mv, vv)) in it {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Apply one Adam step to every parameter of `model`.
pub fn adam_step<T: Scalar, P: Parameterized<T> + ?Sized>(state: &mut AdamState<T>, model: &mut P, grads: &[&Mat<T>]) -> Result<()> {
    let names = model.param_names();
    let mut params = model.params_mut();
    state.step(&mut params, grads, &names)
}

/// Divide the learning rate by `factor` once the epoch loss has failed to improve
/// by more than `threshold` for `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub threshold: f64,
    pub min_lr: f64,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64, min_lr: f64) -> Self {
        PlateauScheduler {
            lr: lr.max(min_lr),
            patience,
            factor,
            threshold: 1e-6,
            min_lr,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stale(&self) -> usize {
        self.stale
    }

    pub fn update(&mut self, epoch_loss: f64) -> f64 {
        if epoch_loss < self.best - self.threshold {
            self.best = epoch_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        if self.stale >= self.patience {
            self.lr = (self.lr / self.factor).max(self.min_lr);
            self.stale = 0;
        }
        self.lr
    }
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        PlateauScheduler::new(1e-3, 5, 10.0, 1e-6)
    }
}
