//! Mini-batch training of an [`RCodeanNet`] with Adam and plateau decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{LossBreakdown, RCodeanNet};
use crate::optim::{adam_step, AdamConfig, AdamState, PlateauScheduler};
use crate::scalar::Scalar;
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub decay_factor: f64,
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            patience: 5,
            decay_factor: 10.0,
            min_lr: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.min_lr > 0.0) || !(self.decay_factor > 1.0) {
            return Err(Error::Config("lr and min_lr must be positive, decay_factor > 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-mean training losses over the epoch.
    pub total: f64,
    pub euc: f64,
    pub cos: f64,
    pub reg: f64,
    /// Learning rate in force after the scheduler saw this epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Full-data loss before the first update.
    pub initial: EvalLoss,
    /// Full-data loss after the last epoch.
    pub last: EvalLoss,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// Fractional drop of the mean reconstruction error, `1 − last/initial`.
    pub fn reconstruction_reduction(&self) -> f64 {
        if self.initial.euc <= 0.0 {
            return 0.0;
        }
        1.0 - self.last.euc / self.initial.euc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalLoss {
    pub total: f64,
    pub euc: f64,
    pub cos: f64,
    pub reg: f64,
}

impl<T: Scalar> From<LossBreakdown<T>> for EvalLoss {
    fn from(l: LossBreakdown<T>) -> Self {
        EvalLoss {
            total: l.total.as_f64(),
            euc: l.euc.as_f64(),
            cos: l.cos.as_f64(),
            reg: l.reg.as_f64(),
        }
    }
}

/// Column-mean loss over all of `data` (`d × n`), evaluated in chunks.
pub fn evaluate<T: Scalar>(net: &RCodeanNet<T>, data: &Mat<T>, chunk: usize) -> Result<EvalLoss> {
    let n = data.cols();
    if n == 0 {
        return Err(Error::Training("cannot evaluate on an empty dataset".into()));
    }
    let chunk = chunk.max(1);
    let (mut euc, mut cos) = (0.0, 0.0);
    let mut reg = 0.0;
    let idx: Vec<usize> = (0..n).collect();
    for part in idx.chunks(chunk) {
        let x = data.select_columns(part);
        let recon = net.reconstruct(&x)?;
        let l = net.loss(&x, &recon)?;
        let w = part.len() as f64;
        euc += l.euc.as_f64() * w;
        cos += l.cos.as_f64() * w;
        reg = l.reg.as_f64();
    }
    euc /= n as f64;
    cos /= n as f64;
    let p = net.params;
    Ok(EvalLoss {
        total: p.alpha * euc + p.beta * cos + p.lambda * reg,
        euc,
        cos,
        reg,
    })
}

/// Train `net` on the columns of `data`, reshuffled each epoch from `config.seed`.
pub fn train_autoencoder<T: Scalar>(net: &mut RCodeanNet<T>, data: &Mat<T>, config: &TrainConfig) -> Result<TrainLog> {
    train_autoencoder_with(net, data, config, |_| {})
}

/// As [`train_autoencoder`], calling `on_epoch` after every epoch.
pub fn train_autoencoder_with<T: Scalar>(
    net: &mut RCodeanNet<T>,
    data: &Mat<T>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog> {
    config.validate()?;
    let n = data.cols();
    if n == 0 {
        return Err(Error::Config("autoencoder training split is empty".into()));
    }
    if data.rows() != net.input_dim() {
        return Err(Error::shape("training data", (net.input_dim(), n), data.shape()));
    }
    let eval_chunk = 256;
    let initial = evaluate(net, data, eval_chunk)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::for_model(AdamConfig { lr: config.lr, ..AdamConfig::default() }, net);
    let mut sched = PlateauScheduler::new(config.lr, config.patience, config.decay_factor, config.min_lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut euc, mut cos, mut reg) = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let x = data.select_columns(batch);
            let (loss, grads) = net.loss_and_grads(&x)?;
            adam_step(&mut adam, net, &grads.as_slices())?;
            total += loss.total.as_f64();
            euc += loss.euc.as_f64();
            cos += loss.cos.as_f64();
            reg += loss.reg.as_f64();
            batches += 1;
        }
        let b = batches as f64;
        let mean_total = total / b;
        if !mean_total.is_finite() {
            return Err(Error::Training(format!("loss diverged at epoch {epoch}")));
        }
        let lr = sched.update(mean_total);
        adam.set_lr(lr);
        let rec = EpochRecord {
            epoch,
            total: mean_total,
            euc: euc / b,
            cos: cos / b,
            reg: reg / b,
            lr,
        };
        log::debug!("epoch {epoch}: total {:.6} euc {:.6} cos {:.6} lr {lr:e}", rec.total, rec.euc, rec.cos);
        on_epoch(&rec);
        epochs.push(rec);
    }

    let last = evaluate(net, data, eval_chunk)?;
    Ok(TrainLog { initial, last, epochs })
}
