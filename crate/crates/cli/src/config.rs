//! Run configuration: defaults, then the `--config` TOML file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rcodean::data::{Split, SplitRatios};
use rcodean::net::SkipPreset;
use rcodean::pipeline::PipelineConfig;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed for data generation and every training stage.
    pub seed: u64,
    /// Worker thread cap; all cores when absent.
    pub jobs: Option<usize>,
    pub out: PathBuf,
    pub bundle: Option<PathBuf>,
    pub split: Split,
    pub dataset: DatasetConfig,
    pub splits: SplitRatios,
    pub pipeline: PipelineConfig,
    pub gradcheck: GradcheckRun,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            jobs: None,
            out: PathBuf::from("rcodean-out"),
            bundle: None,
            split: Split::Test,
            dataset: DatasetConfig::default(),
            splits: SplitRatios::default(),
            pipeline: PipelineConfig::default(),
            gradcheck: GradcheckRun::default(),
        }
    }
}

/// Either a CelebA-style attribute list or a synthetic set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub attr_list: Option<PathBuf>,
    /// Defaults to the attribute list's directory.
    pub images_dir: Option<PathBuf>,
    /// `file identity` lines; when given, splits are identity-disjoint.
    pub identities: Option<PathBuf>,
    pub synthetic: Option<SynthConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub k: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n: 1000, k: 4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckRun {
    pub trials: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub batch: usize,
}

impl Default for GradcheckRun {
    fn default() -> Self {
        GradcheckRun {
            trials: 20,
            input_dim: 12,
            hidden_dim: 8,
            batch: 2,
        }
    }
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

/// Write the resolved config to `<out>/config.resolved.toml`.
pub fn echo_config(config: &RunConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&config.out)?;
    let path = config.out.join("config.resolved.toml");
    let text = toml::to_string(config).map_err(|e| CliError::usage(format!("cannot serialise config: {e}")))?;
    fs::write(&path, text)?;
    Ok(path)
}

/// Flag values that override the corresponding config entries when present.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub split: Option<Split>,
    pub attr_list: Option<PathBuf>,
    pub images_dir: Option<PathBuf>,
    pub identities: Option<PathBuf>,
    pub synthetic_n: Option<usize>,
    pub synthetic_k: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub head_epochs: Option<usize>,
    pub trees: Option<usize>,
    pub svm_reg: Option<f64>,
    pub skips: Option<SkipPreset>,
    pub no_patch_weights: bool,
    pub trials: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Overrides {
    pub fn apply(self, c: &mut RunConfig) {
        set(&mut c.seed, self.seed);
        if self.jobs.is_some() {
            c.jobs = self.jobs;
        }
        set(&mut c.out, self.out);
        if self.bundle.is_some() {
            c.bundle = self.bundle;
        }
        set(&mut c.split, self.split);

        let d = &mut c.dataset;
        if self.attr_list.is_some() {
            d.attr_list = self.attr_list;
            d.synthetic = None;
        }
        if self.images_dir.is_some() {
            d.images_dir = self.images_dir;
        }
        if self.identities.is_some() {
            d.identities = self.identities;
        }
        if self.synthetic_n.is_some() || self.synthetic_k.is_some() {
            let s = d.synthetic.get_or_insert_with(SynthConfig::default);
            set(&mut s.n, self.synthetic_n);
            set(&mut s.k, self.synthetic_k);
            d.attr_list = None;
        }

        let p = &mut c.pipeline;
        set(&mut p.hidden_dim, self.hidden_dim);
        set(&mut p.loss.alpha, self.alpha);
        set(&mut p.loss.beta, self.beta);
        set(&mut p.loss.lambda, self.lambda);
        set(&mut p.autoencoder.lr, self.lr);
        set(&mut p.autoencoder.epochs, self.epochs);
        set(&mut p.autoencoder.patience, self.patience);
        set(&mut p.autoencoder.batch_size, self.batch_size);
        set(&mut p.head.epochs, self.head_epochs);
        set(&mut p.forest.trees, self.trees);
        set(&mut p.svm.reg, self.svm_reg);
        set(&mut p.skips, self.skips);
        if self.no_patch_weights {
            p.use_patch_weights = false;
        }
        set(&mut c.gradcheck.trials, self.trials);

        // One seed drives everything.
        c.pipeline.seed = c.seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("seed = 9\n[pipeline]\nhidden_dim = 16\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.pipeline.hidden_dim, 16);
        assert_eq!(c.pipeline.autoencoder, RunConfig::default().pipeline.autoencoder);
    }

    #[test]
    fn flags_win_over_file() {
        let mut c: RunConfig = toml::from_str("seed = 9\n[dataset.synthetic]\nn = 50\n").unwrap();
        Overrides {
            seed: Some(3),
            epochs: Some(2),
            attr_list: Some("list.txt".into()),
            no_patch_weights: true,
            ..Overrides::default()
        }
        .apply(&mut c);
        assert_eq!(c.seed, 3);
        assert_eq!(c.pipeline.seed, 3);
        assert_eq!(c.pipeline.autoencoder.epochs, 2);
        assert!(c.dataset.synthetic.is_none());
        assert!(!c.pipeline.use_patch_weights);
    }
}
