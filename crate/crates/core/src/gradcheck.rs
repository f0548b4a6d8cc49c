//! Central finite-difference verification of [`RCodeanNet`] gradients.
//!
//! The numeric side only ever calls `forward` and `loss`, so it stays
//! independent of the analytic backward pass it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{BackwardOptions, CodeanParams, LayerId, RCodeanNet, DEFAULT_SKIPS};
use crate::optim::Parameterized;
use crate::tensor::{Activation, Mat};

#[derive(Clone, Copy, Debug)]
pub struct GradcheckConfig {
    pub step: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Nets whose relu pre-activations come closer than this to 0 are redrawn.
    pub kink_margin: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-6,
            abs_tol: 1e-6,
            rel_tol: 1e-4,
            kink_margin: 1e-3,
        }
    }
}

impl GradcheckConfig {
    /// Error relative to `max(|analytic|, |numeric|, abs_tol/rel_tol)`; passes iff ≤ `rel_tol`.
    pub fn relative_error(&self, analytic: f64, numeric: f64) -> f64 {
        let floor = self.abs_tol / self.rel_tol;
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
    }
}

#[derive(Clone, Debug)]
pub struct GroupReport {
    pub name: String,
    pub worst_rel: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    pub rel_tol: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&GroupReport> {
        self.groups
            .iter()
            .max_by(|a, b| a.worst_rel.total_cmp(&b.worst_rel))
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.worst_rel <= self.rel_tol)
    }

    /// Fold another report in, keeping the worst entry per group name.
    pub fn merge(&mut self, other: GradcheckReport) {
        for g in other.groups {
            match self.groups.iter_mut().find(|s| s.name == g.name) {
                Some(slot) if g.worst_rel > slot.worst_rel => *slot = g,
                Some(_) => {}
                None => self.groups.push(g),
            }
        }
    }
}

/// Compare analytic and numeric gradients of the total loss at `x` for every parameter.
pub fn check_net(net: &RCodeanNet<f64>, x: &Mat<f64>, config: &GradcheckConfig, opts: BackwardOptions) -> Result<GradcheckReport> {
    let pass = net.forward(x)?;
    let analytic = net.backward_with(x, &pass, opts)?;
    let analytic: Vec<Mat<f64>> = analytic.as_slices().into_iter().cloned().collect();
    let names = net.param_names();
    let mut probe = net.clone();
    let h = config.step;
    let mut groups = Vec::with_capacity(names.len());

    for (k, name) in names.iter().enumerate() {
        let mut report = GroupReport {
            name: name.clone(),
            worst_rel: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..analytic[k].len() {
            let orig = probe.params()[k].data()[i];
            probe.params_mut()[k].data_mut()[i] = orig + h;
            let plus = total_loss(&probe, x)?;
            probe.params_mut()[k].data_mut()[i] = orig - h;
            let minus = total_loss(&probe, x)?;
            probe.params_mut()[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[k].data()[i];
            let rel = config.relative_error(a, numeric);
            if rel > report.worst_rel || i == 0 {
                report.worst_rel = rel;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        groups.push(report);
    }
    Ok(GradcheckReport {
        groups,
        rel_tol: config.rel_tol,
    })
}

fn total_loss(net: &RCodeanNet<f64>, x: &Mat<f64>) -> Result<f64> {
    let recon = net.reconstruct(x)?;
    Ok(net.loss(x, &recon)?.total)
}

/// Does any relu pre-activation or any L1-penalised weight sit near a kink?
pub fn near_kink(net: &RCodeanNet<f64>, x: &Mat<f64>, config: &GradcheckConfig) -> Result<bool> {
    let pass = net.forward(x)?;
    let relu_kink = net
        .layers()
        .iter()
        .zip(&pass.caches)
        .filter(|(l, _)| l.act == Activation::Relu)
        .any(|(_, c)| c.pre_activation.data().iter().any(|z| z.abs() < config.kink_margin));
    let weight_margin = 10.0 * config.step;
    let l1_kink = net.layers()[..3]
        .iter()
        .any(|l| l.weight.data().iter().any(|w| w.abs() < weight_margin));
    Ok(relu_kink || l1_kink)
}

/// Draw a random net and input batch that stay clear of kinks.
pub fn random_case<R: Rng>(
    input_dim: usize,
    hidden_dim: usize,
    batch: usize,
    params: CodeanParams,
    config: &GradcheckConfig,
    rng: &mut R,
) -> Result<(RCodeanNet<f64>, Mat<f64>)> {
    for _ in 0..1000 {
        let mut net = RCodeanNet::new(input_dim, hidden_dim, params, &DEFAULT_SKIPS, rng)?;
        // Nonzero biases so that relu units are not all switched by the weights alone.
        for id in LayerId::ALL {
            let out = net.layer(id).out_dim();
            net.layer_mut(id).bias = Mat::random_uniform(out, 1, 0.1, rng);
        }
        let x = Mat::random_uniform(input_dim, batch, 0.5, rng).map(|v| v + 0.5);
        if !near_kink(&net, &x, config)? {
            return Ok((net, x));
        }
    }
    Err(Error::Training("could not draw a kink-free gradient-check case".into()))
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteConfig {
    pub seed: u64,
    pub trials: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub batch: usize,
    pub params: CodeanParams,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            trials: 20,
            input_dim: 12,
            hidden_dim: 8,
            batch: 2,
            params: CodeanParams {
                alpha: 1.0,
                beta: 0.5,
                lambda: 0.01,
            },
        }
    }
}

/// Check `trials` random nets; the report holds the worst error per parameter group.
pub fn run_suite(suite: &SuiteConfig, config: &GradcheckConfig, opts: BackwardOptions) -> Result<GradcheckReport> {
    if suite.trials == 0 {
        return Err(Error::Usage("gradient check needs at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(suite.seed);
    let mut report = GradcheckReport {
        groups: Vec::new(),
        rel_tol: config.rel_tol,
    };
    for _ in 0..suite.trials {
        let (net, x) = random_case(suite.input_dim, suite.hidden_dim, suite.batch, suite.params, config, &mut rng)?;
        report.merge(check_net(&net, &x, config, opts)?);
    }
    Ok(report)
}
