//! `rcodean` command-line tool.
//!
//! Exit status: 0 on success, 1 when a verification or runtime step fails,
//! 2 for usage and configuration errors. Log level comes from `RCODEAN_LOG`.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rcodean::data::Split;
use rcodean::net::SkipPreset;

use config::Overrides;
use error::CliError;

#[derive(Parser)]
#[command(name = "rcodean", version, about = "R-Codean patch-based facial attribute prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic attribute dataset (images + list_attr file).
    GenSynth {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of images.
        #[arg(long)]
        n: Option<usize>,
        /// Number of planted attributes (at most 8).
        #[arg(long)]
        k: Option<usize>,
        /// Image file format.
        #[arg(long, default_value = "rcim", value_parser = ["rcim", "pgm"])]
        format: String,
    },
    /// Train the full pipeline and write a model bundle.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Per-attribute accuracy of a bundle on one split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Predict attributes for individual PGM or RCIM images.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Export the learned k×10 patch weight matrix as CSV.
    ReportWeights {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Finite-difference check of the autoencoder gradients.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        trials: Option<usize>,
        /// Drop the cosine term from the analytic gradient; the check must then fail.
        #[arg(long, hide = true)]
        corrupt_drop_cosine: bool,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// CelebA-style attribute list.
    #[arg(long)]
    attr_list: Option<PathBuf>,
    /// Directory holding the listed images.
    #[arg(long)]
    images: Option<PathBuf>,
    /// `file identity` lines for identity-disjoint splits.
    #[arg(long)]
    identities: Option<PathBuf>,
    /// Use a generated synthetic dataset of this many images.
    #[arg(long)]
    synthetic_n: Option<usize>,
    #[arg(long)]
    synthetic_k: Option<usize>,
}

#[derive(Args)]
struct HyperArgs {
    /// Code width l of every autoencoder.
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Autoencoder learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Autoencoder epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    head_epochs: Option<usize>,
    /// Trees per attribute in the forest.
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    svm_reg: Option<f64>,
    /// all, cross, symmetric or none.
    #[arg(long)]
    skips: Option<SkipPreset>,
    /// Weight every source equally in stage 2.
    #[arg(long)]
    no_patch_weights: bool,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            jobs: self.jobs,
            out: self.out.clone(),
            ..Overrides::default()
        }
    }
}

impl DataArgs {
    fn fill(self, o: &mut Overrides) {
        o.attr_list = self.attr_list;
        o.images_dir = self.images;
        o.identities = self.identities;
        o.synthetic_n = self.synthetic_n;
        o.synthetic_k = self.synthetic_k;
    }
}

impl HyperArgs {
    fn fill(self, o: &mut Overrides) {
        o.hidden_dim = self.hidden_dim;
        o.alpha = self.alpha;
        o.beta = self.beta;
        o.lambda = self.lambda;
        o.lr = self.lr;
        o.epochs = self.epochs;
        o.patience = self.patience;
        o.batch_size = self.batch_size;
        o.head_epochs = self.head_epochs;
        o.trees = self.trees;
        o.svm_reg = self.svm_reg;
        o.skips = self.skips;
        o.no_patch_weights = self.no_patch_weights;
    }
}

fn init_logging() {
    let level = std::env::var("RCODEAN_LOG").unwrap_or_else(|_| "info".into());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn resolve(common: &CommonArgs, fill: impl FnOnce(&mut Overrides)) -> Result<config::RunConfig, CliError> {
    let mut c = config::load_config(common.config.as_deref())?;
    let mut o = common.overrides();
    fill(&mut o);
    o.apply(&mut c);
    if let Some(j) = c.jobs {
        if j == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot size thread pool: {e}")))?;
    }
    let path = config::echo_config(&c)?;
    log::info!("resolved config written to {}", path.display());
    Ok(c)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenSynth { common, n, k, format } => {
            let c = resolve(&common, |o| {
                o.synthetic_n = n;
                o.synthetic_k = k;
            })?;
            commands::gen_synth(&c, &format)
        }
        Command::Train { common, data, hyper } => {
            let c = resolve(&common, |o| {
                data.fill(o);
                hyper.fill(o);
            })?;
            commands::train(&c)
        }
        Command::Eval { common, data, bundle, split } => {
            let c = resolve(&common, |o| {
                data.fill(o);
                o.bundle = bundle;
                o.split = split;
            })?;
            commands::eval(&c)
        }
        Command::Predict { common, bundle, images } => {
            let c = resolve(&common, |o| o.bundle = bundle)?;
            commands::predict(&c, &images)
        }
        Command::ReportWeights { common, bundle } => {
            let c = resolve(&common, |o| o.bundle = bundle)?;
            commands::report_weights(&c)
        }
        Command::Gradcheck { common, trials, corrupt_drop_cosine } => {
            let c = resolve(&common, |o| o.trials = trials)?;
            commands::gradcheck(&c, corrupt_drop_cosine)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
