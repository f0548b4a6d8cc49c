//! End-to-end attribute prediction: preprocess, tessellate, ten stage-1
//! autoencoder/head pairs, patch weighting, and the stage-2 ensemble vote.

pub mod patches;
pub mod weights;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{
    ensemble_vote, forest_train, head_hidden_dims, head_train, svm_train, to_bits, Forest, ForestConfig, HeadConfig,
    LinearSvm, MlpHead, SvmConfig,
};
use crate::data::{AttributeDataset, Split};
use crate::error::{Error, Result};
use crate::net::{CodeanParams, RCodeanNet, SkipPreset};
use crate::tensor::Mat;
use crate::train::{train_autoencoder, TrainConfig, TrainLog};

pub use patches::{
    patch_origin, preprocess, source_dim, source_name, tessellate, PatchGrid, FACE_SIZE, FULL_FACE, PATCH_SIZE, SOURCES,
};
pub use weights::{learn_patch_weights, PatchWeights, WeightConfig, WeightFit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Code width `l` of every autoencoder.
    pub hidden_dim: usize,
    pub loss: CodeanParams,
    pub skips: SkipPreset,
    pub autoencoder: TrainConfig,
    pub head: HeadConfig,
    pub use_patch_weights: bool,
    pub patch_weights: WeightConfig,
    pub stage2_mlp: HeadConfig,
    pub forest: ForestConfig,
    pub svm: SvmConfig,
    /// Master seed; every stage derives its own stream from it and the stage's own `seed`.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            hidden_dim: 512,
            loss: CodeanParams::default(),
            skips: SkipPreset::All,
            autoencoder: TrainConfig::default(),
            head: HeadConfig::default(),
            use_patch_weights: true,
            patch_weights: WeightConfig::default(),
            stage2_mlp: HeadConfig::default(),
            forest: ForestConfig::default(),
            svm: SvmConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        self.loss.validate()?;
        self.autoencoder.validate()?;
        for h in [&self.head, &self.stage2_mlp] {
            if h.batch_size == 0 || !(h.lr > 0.0) {
                return Err(Error::Config("classifier batch_size and lr must be positive".into()));
            }
        }
        if self.forest.trees == 0 || self.forest.max_depth == 0 {
            return Err(Error::Config("forest needs at least one tree of depth ≥ 1".into()));
        }
        if !(self.svm.reg > 0.0) {
            return Err(Error::Config("svm reg must be positive".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finaliser over the master seed, a stage tag and an index.
pub fn derive_seed(master: u64, stage: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED69));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STAGE_AE_INIT: u64 = 1;
const STAGE_AE_SHUFFLE: u64 = 2;
const STAGE_HEAD: u64 = 3;
const STAGE2_MLP: u64 = 4;
const STAGE2_FOREST: u64 = 5;
const STAGE2_SVM: u64 = 6;

/// Source matrices for a set of images: `sources[s]` is `source_dim(s) × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceBatch {
    pub sources: Vec<Mat<f64>>,
}

impl SourceBatch {
    pub fn len(&self) -> usize {
        self.sources.first().map_or(0, Mat::cols)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_grids(grids: &[PatchGrid]) -> Result<Self> {
        let sources = (0..SOURCES)
            .map(|s| {
                let cols: Vec<&[f64]> = grids.iter().map(|g| g.sources[s].as_slice()).collect();
                if cols.is_empty() {
                    Ok(Mat::zeros(source_dim(s), 0))
                } else {
                    Mat::from_columns(&cols)
                }
            })
            .collect::<Result<_>>()?;
        Ok(SourceBatch { sources })
    }

    /// Preprocess and tessellate raw 0–255 images.
    pub fn from_images(images: &[Mat<f64>]) -> Result<Self> {
        let grids = images
            .par_iter()
            .map(|img| tessellate(&preprocess(img)?))
            .collect::<Result<Vec<_>>>()?;
        Self::from_grids(&grids)
    }

    /// Load, preprocess and tessellate the given records of `dataset`.
    pub fn from_dataset(dataset: &AttributeDataset, indices: &[usize]) -> Result<Self> {
        let grids = indices
            .par_iter()
            .map(|&i| tessellate(&preprocess(&dataset.image(i)?)?))
            .collect::<Result<Vec<_>>>()?;
        Self::from_grids(&grids)
    }
}

/// One autoencoder and its attribute head.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceModel {
    pub net: RCodeanNet<f64>,
    pub head: MlpHead<f64>,
}

impl SourceModel {
    /// `k × n` head probabilities for `x` (`d × n`).
    pub fn score(&self, x: &Mat<f64>) -> Result<Mat<f64>> {
        self.head.score(&self.net.encode(x)?)
    }
}

#[derive(Clone, Debug)]
pub struct Stage1 {
    pub models: Vec<SourceModel>,
    pub ae_logs: Vec<TrainLog>,
    pub head_losses: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Train the ten autoencoders on `data` and a head per source on their frozen codes.
/// Sources train in parallel; every source has its own seeds.
pub fn train_stage1(data: &SourceBatch, labels: &[Vec<u8>], config: &PipelineConfig) -> Result<Stage1> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("autoencoder training split is empty".into()));
    }
    if labels.len() != data.len() {
        return Err(Error::Config(format!("{} images but {} label rows", data.len(), labels.len())));
    }
    let skips = config.skips.pairs();
    let results = (0..SOURCES)
        .into_par_iter()
        .map(|s| -> Result<_> {
            let x = &data.sources[s];
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(derive_seed(
                config.seed,
                STAGE_AE_INIT,
                s as u64,
            ));
            let mut net = RCodeanNet::new(x.rows(), config.hidden_dim, config.loss, &skips, &mut rng)?;
            let ae_cfg = TrainConfig {
                seed: derive_seed(config.seed ^ config.autoencoder.seed, STAGE_AE_SHUFFLE, s as u64),
                ..config.autoencoder.clone()
            };
            let log = train_autoencoder(&mut net, x, &ae_cfg)
                .map_err(|e| e.within(format!("autoencoder {}", source_name(s))))?;
            log::info!(
                "{}: reconstruction {:.4} -> {:.4}",
                source_name(s),
                log.initial.euc,
                log.last.euc
            );
            let codes = net.encode(x)?;
            let head_cfg = HeadConfig {
                seed: derive_seed(config.seed ^ config.head.seed, STAGE_HEAD, s as u64),
                ..config.head.clone()
            };
            let fit = head_train(&codes, labels, head_hidden_dims(config.hidden_dim), &head_cfg)?;
            Ok((SourceModel { net, head: fit.head }, log, fit.losses, fit.warnings))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut stage = Stage1 {
        models: Vec::with_capacity(SOURCES),
        ae_logs: Vec::with_capacity(SOURCES),
        head_losses: Vec::with_capacity(SOURCES),
        warnings: Vec::new(),
    };
    for (s, (model, log, losses, warnings)) in results.into_iter().enumerate() {
        stage.models.push(model);
        stage.ae_logs.push(log);
        stage.head_losses.push(losses);
        // Every head sees the same labels, so one copy of the warnings is enough.
        if s == 0 {
            stage.warnings.extend(warnings);
        }
    }
    Ok(stage)
}

/// Stage-1 scores: one `k × n` block per source.
pub fn score_batch(models: &[SourceModel], data: &SourceBatch) -> Result<Vec<Mat<f64>>> {
    if models.len() != SOURCES {
        return Err(Error::Usage(format!("pipeline has {} trained source models, needs {SOURCES}", models.len())));
    }
    models
        .par_iter()
        .zip(&data.sources)
        .map(|(m, x)| m.score(x))
        .collect()
}

/// `10 × k` stage-1 probabilities for one image's sources.
pub fn score_sample(models: &[SourceModel], grid: &PatchGrid) -> Result<Mat<f64>> {
    let blocks = score_batch(models, &SourceBatch::from_grids(std::slice::from_ref(grid))?)?;
    let k = blocks[0].rows();
    let mut out = Mat::zeros(SOURCES, k);
    for (s, b) in blocks.iter().enumerate() {
        for a in 0..k {
            out.set(s, a, b.get(a, 0));
        }
    }
    Ok(out)
}

/// Entry `(p, a)` is `weights[a][p]·scores[p][a]`, flattened source-major.
pub fn build_stage2_features(scores: &Mat<f64>, weights: &PatchWeights) -> Vec<f64> {
    let (sources, k) = scores.shape();
    let mut out = Vec::with_capacity(sources * k);
    for p in 0..sources {
        for a in 0..k {
            out.push(weights.get(a, p) * scores.get(p, a));
        }
    }
    out
}

/// Stage-2 feature rows for every column of per-source score blocks.
pub fn stage2_features(blocks: &[Mat<f64>], weights: &PatchWeights) -> Vec<Vec<f64>> {
    let (k, n) = blocks[0].shape();
    (0..n)
        .map(|j| {
            let mut row = Vec::with_capacity(SOURCES * k);
            for (p, b) in blocks.iter().enumerate() {
                for a in 0..k {
                    row.push(weights.get(a, p) * b.get(a, j));
                }
            }
            row
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub mlp: MlpHead<f64>,
    pub forest: Forest,
    pub svm: LinearSvm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierKind {
    Mlp,
    Forest,
    Svm,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] = [ClassifierKind::Mlp, ClassifierKind::Forest, ClassifierKind::Svm];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Mlp => "mlp",
            ClassifierKind::Forest => "forest",
            ClassifierKind::Svm => "svm",
        }
    }
}

/// Train the three stage-2 classifiers on feature rows.
pub fn train_ensemble(features: &[Vec<f64>], labels: &[Vec<u8>], config: &PipelineConfig) -> Result<Ensemble> {
    if features.is_empty() {
        return Err(Error::Config("classifier training split is empty".into()));
    }
    let cols: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
    let x = Mat::from_columns(&cols)?;
    let mlp_cfg = HeadConfig {
        seed: derive_seed(config.seed ^ config.stage2_mlp.seed, STAGE2_MLP, 0),
        ..config.stage2_mlp.clone()
    };
    let forest_cfg = ForestConfig {
        seed: derive_seed(config.seed ^ config.forest.seed, STAGE2_FOREST, 0),
        ..config.forest.clone()
    };
    let svm_cfg = SvmConfig {
        seed: derive_seed(config.seed ^ config.svm.seed, STAGE2_SVM, 0),
        ..config.svm.clone()
    };
    let (mlp, (forest, svm)) = rayon::join(
        || head_train(&x, labels, head_hidden_dims(config.hidden_dim), &mlp_cfg),
        || rayon::join(|| forest_train(features, labels, &forest_cfg), || svm_train(features, labels, &svm_cfg)),
    );
    Ok(Ensemble {
        mlp: mlp?.head,
        forest: forest?,
        svm: svm?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedPipeline {
    pub config: PipelineConfig,
    pub attributes: Vec<String>,
    pub models: Vec<SourceModel>,
    /// `None` when patch weighting was disabled.
    pub weights: Option<PatchWeights>,
    pub ensemble: Ensemble,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub bits: Vec<u8>,
    pub confidence: Vec<f64>,
    /// Pre-vote bits of the MLP, forest and SVM, in that order.
    pub per_classifier: [Vec<u8>; 3],
}

impl TrainedPipeline {
    pub fn k(&self) -> usize {
        self.attributes.len()
    }

    pub fn effective_weights(&self) -> PatchWeights {
        self.weights.clone().unwrap_or_else(|| PatchWeights::uniform(self.k()))
    }

    pub fn predict_batch(&self, data: &SourceBatch) -> Result<Vec<Prediction>> {
        let blocks = score_batch(&self.models, data)?;
        let features = stage2_features(&blocks, &self.effective_weights());
        let cols: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
        if cols.is_empty() {
            return Ok(Vec::new());
        }
        let mlp_probs = self.ensemble.mlp.score(&Mat::from_columns(&cols)?)?;
        Ok(features
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let mlp_p = mlp_probs.col(j);
                let forest_p = self.ensemble.forest.predict_proba(f);
                let svm_p = self.ensemble.svm.predict_proba(f);
                let mlp_bits = to_bits(&mlp_p);
                let forest_bits = to_bits(&forest_p);
                let svm_bits = self.ensemble.svm.predict(f);
                let bits = ensemble_vote(&mlp_bits, &forest_bits, &svm_bits);
                let confidence = (0..mlp_p.len())
                    .map(|a| (mlp_p[a] + forest_p[a] + svm_p[a]) / 3.0)
                    .collect();
                Prediction {
                    bits,
                    confidence,
                    per_classifier: [mlp_bits, forest_bits, svm_bits],
                }
            })
            .collect())
    }

    /// Predict raw 0–255 images of any size ≥ 8×8.
    pub fn predict_images(&self, images: &[Mat<f64>]) -> Result<Vec<Prediction>> {
        self.predict_batch(&SourceBatch::from_images(images)?)
    }

    pub fn predict(&self, image: &Mat<f64>) -> Result<Prediction> {
        Ok(self.predict_images(std::slice::from_ref(image))?.remove(0))
    }
}

/// Everything produced while training, besides the pipeline itself.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub ae_logs: Vec<TrainLog>,
    pub head_losses: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Stage 1 on the ae-train split; patch weights and stage 2 on clf-train.
pub fn train_pipeline(dataset: &AttributeDataset, config: &PipelineConfig) -> Result<(TrainedPipeline, TrainReport)> {
    config.validate()?;
    let ae_idx = dataset.indices(Split::AeTrain);
    let clf_idx = dataset.indices(Split::ClfTrain);
    if ae_idx.is_empty() {
        return Err(Error::Config("ae-train split is empty".into()));
    }
    if clf_idx.is_empty() {
        return Err(Error::Config("clf-train split is empty".into()));
    }
    let ae_data = SourceBatch::from_dataset(dataset, &ae_idx)?;
    let stage1 = train_stage1(&ae_data, &dataset.labels(&ae_idx), config)?;
    drop(ae_data);

    let clf_data = SourceBatch::from_dataset(dataset, &clf_idx)?;
    let clf_labels = dataset.labels(&clf_idx);
    let blocks = score_batch(&stage1.models, &clf_data)?;
    let mut warnings = stage1.warnings;
    let weights = if config.use_patch_weights {
        let fit = learn_patch_weights(&blocks, &clf_labels, &config.patch_weights)?;
        warnings.extend(fit.warnings);
        Some(fit.weights)
    } else {
        None
    };
    let effective = weights.clone().unwrap_or_else(|| PatchWeights::uniform(dataset.k()));
    let features = stage2_features(&blocks, &effective);
    let ensemble = train_ensemble(&features, &clf_labels, config)?;
    let pipeline = TrainedPipeline {
        config: config.clone(),
        attributes: dataset.attributes.clone(),
        models: stage1.models,
        weights,
        ensemble,
    };
    let report = TrainReport {
        ae_logs: stage1.ae_logs,
        head_losses: stage1.head_losses,
        warnings,
    };
    Ok((pipeline, report))
}

/// Accuracy of the voted prediction and of each classifier before the vote.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub attributes: Vec<String>,
    /// Per-attribute accuracy in [0,1].
    pub accuracy: Vec<f64>,
    /// `[mlp, forest, svm]` per-attribute accuracies.
    pub per_classifier: [Vec<f64>; 3],
    pub samples: usize,
}

impl EvalReport {
    pub fn mean(&self) -> f64 {
        mean(&self.accuracy)
    }

    pub fn classifier_mean(&self, kind: ClassifierKind) -> f64 {
        mean(&self.per_classifier[kind as usize])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn score_predictions(attributes: &[String], predictions: &[Prediction], labels: &[Vec<u8>]) -> Result<EvalReport> {
    let k = attributes.len();
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::Config(format!(
            "{} predictions for {} labelled samples",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|l| l.len() != k) {
        return Err(Error::Config(format!("labels do not have {k} attributes")));
    }
    let n = labels.len() as f64;
    let acc = |get: &dyn Fn(&Prediction) -> &Vec<u8>| -> Vec<f64> {
        (0..k)
            .map(|a| predictions.iter().zip(labels).filter(|(p, l)| get(p)[a] == l[a]).count() as f64 / n)
            .collect()
    };
    Ok(EvalReport {
        attributes: attributes.to_vec(),
        accuracy: acc(&|p| &p.bits),
        per_classifier: [
            acc(&|p| &p.per_classifier[0]),
            acc(&|p| &p.per_classifier[1]),
            acc(&|p| &p.per_classifier[2]),
        ],
        samples: labels.len(),
    })
}

/// Evaluate on one split of `dataset`.
pub fn evaluate_split(pipeline: &TrainedPipeline, dataset: &AttributeDataset, split: Split) -> Result<EvalReport> {
    if dataset.k() != pipeline.k() {
        return Err(Error::Config(format!(
            "bundle predicts {} attributes but the dataset has {}",
            pipeline.k(),
            dataset.k()
        )));
    }
    let idx = dataset.indices(split);
    if idx.is_empty() {
        return Err(Error::Config(format!("split {split} is empty")));
    }
    let predictions = pipeline.predict_batch(&SourceBatch::from_dataset(dataset, &idx)?)?;
    score_predictions(&pipeline.attributes, &predictions, &dataset.labels(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::MlpHead;

    #[test]
    fn untrained_heads_score_one_half() {
        let l = 4;
        let models: Vec<SourceModel> = (0..SOURCES)
            .map(|s| SourceModel {
                net: RCodeanNet::zeros(source_dim(s), l, CodeanParams::default(), &SkipPreset::All.pairs()).unwrap(),
                head: MlpHead::zeros(l, head_hidden_dims(l), 3),
            })
            .collect();
        let grid = tessellate(&Mat::filled(64, 64, 0.3)).unwrap();
        let s = score_sample(&models, &grid).unwrap();
        assert_eq!(s.shape(), (SOURCES, 3));
        assert!(s.data().iter().all(|&v| v == 0.5));
        assert!(matches!(score_sample(&models[..3], &grid), Err(Error::Usage(_))));
    }

    #[test]
    fn stage2_feature_layout() {
        let k = 40;
        let scores = Mat::from_vec(SOURCES, k, (0..SOURCES * k).map(|i| i as f64 / 1000.0).collect()).unwrap();
        let plain = build_stage2_features(&scores, &PatchWeights::uniform(k));
        assert_eq!(plain.len(), 400);
        assert_eq!(plain, scores.data());

        let mut w = Mat::filled(k, SOURCES, 1.0);
        for p in 0..SOURCES {
            w.set(5, p, if p == 2 { 1.0 } else { 0.0 });
        }
        let masked = build_stage2_features(&scores, &PatchWeights { matrix: w });
        for p in 0..SOURCES {
            let v = masked[p * k + 5];
            if p == 2 {
                assert_eq!(v, scores.get(2, 5));
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..SOURCES as u64).map(|s| derive_seed(0, STAGE_AE_INIT, s)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(a.len(), b.len());
        assert_ne!(derive_seed(0, STAGE_HEAD, 0), derive_seed(1, STAGE_HEAD, 0));
    }
}
