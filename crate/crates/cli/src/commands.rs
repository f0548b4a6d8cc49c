use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rcodean::data::{
    gen_synthetic, load_attr_list, load_bundle, load_bundle_for, load_gray_image, load_identities, save_bundle,
    save_pgm, save_rcim, write_attr_list, AttributeDataset, ImageSource,
};
use rcodean::gradcheck::{run_suite, GradcheckConfig, SuiteConfig};
use rcodean::net::BackwardOptions;
use rcodean::pipeline::{evaluate_split, source_name, train_pipeline, ClassifierKind, TrainReport, SOURCES};
use rcodean::Error;

use crate::config::{RunConfig, SynthConfig};
use crate::error::CliError;

pub const BUNDLE_FILE: &str = "model.rcb";
pub const ATTR_LIST_FILE: &str = "list_attr.txt";

fn write_out(config: &RunConfig, name: &str, text: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&config.out)?;
    let path = config.out.join(name);
    fs::write(&path, text)?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

fn bundle_path(config: &RunConfig) -> Result<PathBuf, CliError> {
    config
        .bundle
        .clone()
        .ok_or_else(|| CliError::usage("no bundle given; pass --bundle or set `bundle` in the config"))
}

pub fn load_dataset(config: &RunConfig) -> Result<AttributeDataset, CliError> {
    let d = &config.dataset;
    if let Some(list) = &d.attr_list {
        let images = d
            .images_dir
            .clone()
            .unwrap_or_else(|| list.parent().map(Path::to_path_buf).unwrap_or_default());
        let mut ds = load_attr_list(list, &images, config.splits)?;
        if let Some(path) = &d.identities {
            let ids = load_identities(path)?;
            let per_record = ds
                .records
                .iter()
                .map(|r| {
                    ids.get(&r.file)
                        .copied()
                        .ok_or_else(|| Error::Config(format!("no identity listed for {}", r.file)))
                })
                .collect::<Result<Vec<u64>, Error>>()?;
            let splits = config.splits.assign_by_identity(&per_record);
            ds.reassign_splits(&splits)?;
        }
        return Ok(ds);
    }
    if let Some(s) = d.synthetic {
        let mut ds = gen_synthetic(s.n, s.k, config.seed)?;
        ds.reassign_splits(&config.splits.assign(s.n))?;
        return Ok(ds);
    }
    Err(CliError::usage("no dataset configured; pass --attr-list or --synthetic-n"))
}

pub fn gen_synth(config: &RunConfig, format: &str) -> Result<(), CliError> {
    let s = config.dataset.synthetic.unwrap_or_else(SynthConfig::default);
    let mut ds = gen_synthetic(s.n, s.k, config.seed)?;
    let dir = config.out.join("images");
    fs::create_dir_all(&dir)?;
    let ImageSource::Memory(images) = &ds.images else {
        unreachable!("synthetic images live in memory")
    };
    for (r, img) in ds.records.iter_mut().zip(images) {
        if format == "pgm" {
            r.file = Path::new(&r.file).with_extension("pgm").to_string_lossy().into_owned();
            save_pgm(img, dir.join(&r.file))?;
        } else {
            save_rcim(img, dir.join(&r.file))?;
        }
    }
    ds.images = ImageSource::Dir(dir.clone());
    let list = config.out.join(ATTR_LIST_FILE);
    write_attr_list(&ds, &list)?;
    println!("wrote {} images to {} and labels to {}", ds.len(), dir.display(), list.display());
    Ok(())
}

fn loss_csv(report: &TrainReport, lr: f64) -> String {
    let mut out = String::from("source,epoch,total,euc,cos,reg,lr\n");
    for (s, log) in report.ae_logs.iter().enumerate() {
        let name = source_name(s);
        let i = log.initial;
        let _ = writeln!(out, "{name},0,{},{},{},{},{lr}", i.total, i.euc, i.cos, i.reg);
        for e in &log.epochs {
            let _ = writeln!(out, "{name},{},{},{},{},{},{}", e.epoch, e.total, e.euc, e.cos, e.reg, e.lr);
        }
    }
    out
}

fn head_loss_csv(report: &TrainReport) -> String {
    let mut out = String::from("source,epoch,loss\n");
    for (s, losses) in report.head_losses.iter().enumerate() {
        for (e, l) in losses.iter().enumerate() {
            let _ = writeln!(out, "{},{},{l}", source_name(s), e + 1);
        }
    }
    out
}

pub fn train(config: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(config)?;
    log::info!("dataset: {} records, {} attributes", ds.len(), ds.k());
    let start = Instant::now();
    let (pipeline, report) = train_pipeline(&ds, &config.pipeline)?;
    log::info!("trained in {:.1?}", start.elapsed());
    for w in &report.warnings {
        log::warn!("{w}");
    }
    write_out(config, "loss.csv", &loss_csv(&report, config.pipeline.autoencoder.lr))?;
    write_out(config, "head_loss.csv", &head_loss_csv(&report))?;
    let path = config.bundle.clone().unwrap_or_else(|| config.out.join(BUNDLE_FILE));
    save_bundle(&pipeline, &path)?;
    for (s, log) in report.ae_logs.iter().enumerate() {
        println!("{:>10}: reconstruction loss reduced by {:.1}%", source_name(s), 100.0 * log.reconstruction_reduction());
    }
    println!("bundle written to {}", path.display());
    Ok(())
}

pub fn eval(config: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(config)?;
    let pipeline = load_bundle_for(bundle_path(config)?, ds.k())?;
    let r = evaluate_split(&pipeline, &ds, config.split)?;

    let mut acc = String::from("attribute,accuracy\n");
    let mut ablation = String::from("attribute,mlp,forest,svm,vote\n");
    for (a, name) in r.attributes.iter().enumerate() {
        let _ = writeln!(acc, "{name},{:.2}", 100.0 * r.accuracy[a]);
        let [m, f, s] = &r.per_classifier;
        let _ = writeln!(
            ablation,
            "{name},{:.2},{:.2},{:.2},{:.2}",
            100.0 * m[a],
            100.0 * f[a],
            100.0 * s[a],
            100.0 * r.accuracy[a]
        );
    }
    let _ = writeln!(acc, "mean,{:.2}", 100.0 * r.mean());
    let _ = writeln!(
        ablation,
        "mean,{:.2},{:.2},{:.2},{:.2}",
        100.0 * r.classifier_mean(ClassifierKind::Mlp),
        100.0 * r.classifier_mean(ClassifierKind::Forest),
        100.0 * r.classifier_mean(ClassifierKind::Svm),
        100.0 * r.mean()
    );
    write_out(config, "accuracy.csv", &acc)?;
    write_out(config, "ablation.csv", &ablation)?;
    print!("{acc}");
    println!("{} samples on split {}", r.samples, config.split.name());
    Ok(())
}

pub fn predict(config: &RunConfig, images: &[PathBuf]) -> Result<(), CliError> {
    let pipeline = load_bundle(bundle_path(config)?)?;
    let loaded = images.iter().map(load_gray_image).collect::<Result<Vec<_>, Error>>()?;
    let preds = pipeline.predict_images(&loaded)?;
    let header = format!("file,{}\n", pipeline.attributes.join(","));
    let mut bits = header.clone();
    let mut conf = header;
    for (path, p) in images.iter().zip(&preds) {
        let file = path.display();
        let b: Vec<String> = p.bits.iter().map(u8::to_string).collect();
        let c: Vec<String> = p.confidence.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(bits, "{file},{}", b.join(","));
        let _ = writeln!(conf, "{file},{}", c.join(","));
    }
    write_out(config, "predictions.csv", &bits)?;
    write_out(config, "confidence.csv", &conf)?;
    print!("{bits}");
    Ok(())
}

pub fn report_weights(config: &RunConfig) -> Result<(), CliError> {
    let pipeline = load_bundle(bundle_path(config)?)?;
    let weights = pipeline
        .weights
        .as_ref()
        .ok_or_else(|| CliError::usage("bundle has no learned patch weights (trained with patch weighting disabled)"))?;
    let mut out = String::from("attribute");
    for s in 0..SOURCES {
        out.push(',');
        out.push_str(&source_name(s));
    }
    out.push('\n');
    for (a, name) in pipeline.attributes.iter().enumerate() {
        out.push_str(name);
        for s in 0..SOURCES {
            let _ = write!(out, ",{:.6}", weights.get(a, s));
        }
        out.push('\n');
    }
    write_out(config, "weights.csv", &out)?;
    print!("{out}");
    Ok(())
}

pub fn gradcheck(config: &RunConfig, drop_cosine: bool) -> Result<(), CliError> {
    let g = config.gradcheck;
    let suite = SuiteConfig {
        seed: config.seed,
        trials: g.trials,
        input_dim: g.input_dim,
        hidden_dim: g.hidden_dim,
        batch: g.batch,
        ..SuiteConfig::default()
    };
    let check = GradcheckConfig::default();
    let report = run_suite(&suite, &check, BackwardOptions { drop_cosine })?;
    let mut text = String::from("parameter,worst_rel_error,index,analytic,numeric\n");
    for r in &report.groups {
        let _ = writeln!(text, "{},{:.3e},{},{:.9e},{:.9e}", r.name, r.worst_rel, r.worst_index, r.analytic, r.numeric);
    }
    write_out(config, "gradcheck.csv", &text)?;
    print!("{text}");
    if report.passed() {
        println!("gradient check passed: {} trials within {:.0e}", g.trials, check.rel_tol);
        return Ok(());
    }
    let worst = report.worst().expect("a failing report has groups");
    Err(CliError::verify(format!(
        "gradient check failed at {}[{}]: relative error {:.3e} > {:.0e}",
        worst.name, worst.worst_index, worst.worst_rel, check.rel_tol
    )))
}
