//! Model bundle container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RCODEAN\0"           8-byte magic
//! u32                   format version
//! u32                   header length H
//! H bytes               JSON header: config, attribute names, array manifest
//! repeated per array:   u64 element count, then that many f64
//! u32                   CRC-32 of every preceding byte
//! ```
//!
//! Arrays appear in manifest order. Network topology is rebuilt from the
//! config, so the payload holds parameters only.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::forest::{DecisionTree, Node};
use crate::classifiers::{head_hidden_dims, Forest, LinearSvm, MlpHead};
use crate::error::{Error, Result};
use crate::net::RCodeanNet;
use crate::optim::Parameterized;
use crate::pipeline::{source_dim, source_name, Ensemble, PatchWeights, PipelineConfig, SourceModel, TrainedPipeline, SOURCES};
use crate::tensor::Mat;

pub const BUNDLE_MAGIC: &[u8; 8] = b"RCODEAN\0";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub config: PipelineConfig,
    pub attributes: Vec<String>,
    pub source_dims: Vec<usize>,
    pub has_patch_weights: bool,
    /// Stage-2 SVM input width.
    pub stage2_dim: usize,
    pub trees_per_attribute: Vec<usize>,
    pub arrays: Vec<ArrayEntry>,
}

struct Writer {
    manifest: Vec<ArrayEntry>,
    payload: Vec<u8>,
}

impl Writer {
    fn push(&mut self, name: impl Into<String>, m: &Mat<f64>) {
        self.push_raw(name, m.rows(), m.cols(), m.data());
    }

    fn push_raw(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: &[f64]) {
        self.manifest.push(ArrayEntry {
            name: name.into(),
            rows,
            cols,
        });
        self.payload.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in data {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn push_model<P: Parameterized<f64>>(&mut self, prefix: &str, model: &P) {
        for (name, p) in model.param_names().iter().zip(model.params()) {
            self.push(format!("{prefix}.{name}"), p);
        }
    }

    fn push_head(&mut self, prefix: &str, head: &MlpHead<f64>) {
        self.push(format!("{prefix}.shift"), &head.shift);
        self.push(format!("{prefix}.scale"), &head.scale);
        self.push_model(prefix, head);
    }
}

fn encode_tree(tree: &DecisionTree) -> Vec<f64> {
    let mut out = Vec::with_capacity(tree.nodes.len() * 4);
    for node in &tree.nodes {
        match *node {
            Node::Leaf { prob } => out.extend([-1.0, prob, 0.0, 0.0]),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => out.extend([feature as f64, threshold, left as f64, right as f64]),
        }
    }
    out
}

fn decode_tree(data: &[f64], name: &str) -> Result<DecisionTree> {
    let n = data.len() / 4;
    let corrupt = || Error::Corrupt(format!("malformed tree {name}"));
    let index = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && (v as usize) < n {
            Ok(v as usize)
        } else {
            Err(corrupt())
        }
    };
    let mut nodes = Vec::with_capacity(n);
    for (i, q) in data.chunks_exact(4).enumerate() {
        nodes.push(if q[0] < 0.0 {
            Node::Leaf { prob: q[1] }
        } else {
            let (left, right) = (index(q[2])?, index(q[3])?);
            // Children are always stored after their parent, which rules out cycles.
            if left <= i || right <= i {
                return Err(corrupt());
            }
            Node::Split {
                feature: q[0] as usize,
                threshold: q[1],
                left,
                right,
            }
        });
    }
    if nodes.is_empty() {
        return Err(corrupt());
    }
    Ok(DecisionTree { nodes })
}

pub fn encode_bundle(pipeline: &TrainedPipeline) -> Result<Vec<u8>> {
    let mut w = Writer {
        manifest: Vec::new(),
        payload: Vec::new(),
    };
    for (s, m) in pipeline.models.iter().enumerate() {
        let name = source_name(s);
        w.push_model(&format!("{name}.net"), &m.net);
        w.push_head(&format!("{name}.head"), &m.head);
    }
    if let Some(pw) = &pipeline.weights {
        w.push("patch_weights", &pw.matrix);
    }
    let e = &pipeline.ensemble;
    w.push_head("stage2.mlp", &e.mlp);
    let mut trees_per_attribute = Vec::new();
    for (a, trees) in e.forest.per_attribute.iter().enumerate() {
        trees_per_attribute.push(trees.len());
        for (t, tree) in trees.iter().enumerate() {
            w.push_raw(format!("stage2.forest.attr{a}.tree{t}"), tree.nodes.len(), 4, &encode_tree(tree));
        }
    }
    for (a, (wv, b)) in e.svm.weights.iter().zip(&e.svm.biases).enumerate() {
        w.push_raw(format!("stage2.svm.attr{a}.weight"), 1, wv.len(), wv);
        w.push_raw(format!("stage2.svm.attr{a}.bias"), 1, 1, &[*b]);
    }
    let header = BundleHeader {
        config: pipeline.config.clone(),
        attributes: pipeline.attributes.clone(),
        source_dims: pipeline.models.iter().map(|m| m.net.input_dim()).collect(),
        has_patch_weights: pipeline.weights.is_some(),
        stage2_dim: e.svm.input_dim(),
        trees_per_attribute,
        arrays: w.manifest,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Config(format!("cannot encode bundle header: {e}")))?;
    let mut out = Vec::with_capacity(20 + json.len() + w.payload.len());
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn save_bundle(pipeline: &TrainedPipeline, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_bundle(pipeline)?)?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<TrainedPipeline> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Usage(format!("bundle not found: {}", path.display())),
        _ => Error::Io(e),
    })?;
    decode_bundle(&bytes)
}

/// Load a bundle and insist that it predicts `expected_k` attributes.
pub fn load_bundle_for(path: impl AsRef<Path>, expected_k: usize) -> Result<TrainedPipeline> {
    let p = load_bundle(path)?;
    if p.k() != expected_k {
        return Err(Error::Config(format!(
            "bundle predicts {} attributes, expected {expected_k}",
            p.k()
        )));
    }
    Ok(p)
}

struct Reader<'a> {
    entries: std::slice::Iter<'a, ArrayEntry>,
    payload: &'a [u8],
}

impl Reader<'_> {
    fn next(&mut self, expected: &str) -> Result<(usize, usize, Vec<f64>)> {
        let e = self
            .entries
            .next()
            .ok_or_else(|| Error::Corrupt(format!("manifest ends before {expected}")))?;
        if e.name != expected {
            return Err(Error::Corrupt(format!("expected array {expected}, found {}", e.name)));
        }
        if self.payload.len() < 8 {
            return Err(Error::Corrupt(format!("payload ends inside {expected}")));
        }
        let (len, rest) = self.payload.split_at(8);
        let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
        if len != e.rows.saturating_mul(e.cols) || rest.len() / 8 < len {
            return Err(Error::Corrupt(format!("array {expected} has inconsistent length")));
        }
        let (body, rest) = rest.split_at(len * 8);
        self.payload = rest;
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((e.rows, e.cols, data))
    }

    fn mat(&mut self, expected: &str, shape: (usize, usize)) -> Result<Mat<f64>> {
        let (r, c, data) = self.next(expected)?;
        if (r, c) != shape {
            return Err(Error::Corrupt(format!("array {expected} is {r}x{c}, expected {}x{}", shape.0, shape.1)));
        }
        Mat::from_vec(r, c, data)
    }

    fn fill<P: Parameterized<f64>>(&mut self, prefix: &str, model: &mut P) -> Result<()> {
        let names = model.param_names();
        for (name, p) in names.iter().zip(model.params_mut()) {
            *p = self.mat(&format!("{prefix}.{name}"), p.shape())?;
        }
        Ok(())
    }

    fn head(&mut self, prefix: &str, input: usize, hidden: [usize; 2], k: usize) -> Result<MlpHead<f64>> {
        let mut head = MlpHead::zeros(input, hidden, k);
        head.shift = self.mat(&format!("{prefix}.shift"), (input, 1))?;
        head.scale = self.mat(&format!("{prefix}.scale"), (input, 1))?;
        self.fill(prefix, &mut head)?;
        Ok(head)
    }
}

pub fn decode_bundle(bytes: &[u8]) -> Result<TrainedPipeline> {
    if bytes.len() < 24 || &bytes[..8] != BUNDLE_MAGIC {
        return Err(Error::Corrupt("not a model bundle".into()));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    if version != BUNDLE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: BUNDLE_VERSION,
        });
    }
    let hlen = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
    let json = body
        .get(16..16 + hlen)
        .ok_or_else(|| Error::Corrupt("header length exceeds file".into()))?;
    let header: BundleHeader =
        serde_json::from_slice(json).map_err(|e| Error::Corrupt(format!("unreadable header: {e}")))?;
    let config = &header.config;
    config.validate()?;
    let k = header.attributes.len();
    let l = config.hidden_dim;
    if header.source_dims.len() != SOURCES || (0..SOURCES).any(|s| header.source_dims[s] != source_dim(s)) {
        return Err(Error::Corrupt("unexpected source dimensions".into()));
    }
    let mut r = Reader {
        entries: header.arrays.iter(),
        payload: &body[16 + hlen..],
    };
    let skips = config.skips.pairs();
    let mut models = Vec::with_capacity(SOURCES);
    for s in 0..SOURCES {
        let name = source_name(s);
        let mut net = RCodeanNet::zeros(source_dim(s), l, config.loss, &skips)?;
        r.fill(&format!("{name}.net"), &mut net)?;
        let head = r.head(&format!("{name}.head"), l, head_hidden_dims(l), k)?;
        models.push(SourceModel { net, head });
    }
    let weights = if header.has_patch_weights {
        Some(PatchWeights {
            matrix: r.mat("patch_weights", (k, SOURCES))?,
        })
    } else {
        None
    };
    let stage2_dim = SOURCES * k;
    if header.stage2_dim != stage2_dim || header.trees_per_attribute.len() != k {
        return Err(Error::Corrupt("stage-2 layout does not match the attribute count".into()));
    }
    let mlp = r.head("stage2.mlp", stage2_dim, head_hidden_dims(l), k)?;
    let mut per_attribute = Vec::with_capacity(k);
    for (a, &trees) in header.trees_per_attribute.iter().enumerate() {
        let mut list = Vec::with_capacity(trees);
        for t in 0..trees {
            let name = format!("stage2.forest.attr{a}.tree{t}");
            let (_, cols, data) = r.next(&name)?;
            if cols != 4 {
                return Err(Error::Corrupt(format!("tree {name} must have 4 columns")));
            }
            let tree = decode_tree(&data, &name)?;
            if tree.nodes.iter().any(|n| matches!(n, Node::Split { feature, .. } if *feature >= stage2_dim)) {
                return Err(Error::Corrupt(format!("tree {name} splits on a missing feature")));
            }
            list.push(tree);
        }
        per_attribute.push(list);
    }
    let mut svm = LinearSvm {
        weights: Vec::with_capacity(k),
        biases: Vec::with_capacity(k),
    };
    for a in 0..k {
        svm.weights
            .push(r.mat(&format!("stage2.svm.attr{a}.weight"), (1, stage2_dim))?.into_vec());
        svm.biases.push(r.mat(&format!("stage2.svm.attr{a}.bias"), (1, 1))?.get(0, 0));
    }
    if r.entries.next().is_some() || !r.payload.is_empty() {
        return Err(Error::Corrupt("trailing data after the last array".into()));
    }
    Ok(TrainedPipeline {
        config: header.config.clone(),
        attributes: header.attributes,
        models,
        weights,
        ensemble: Ensemble {
            mlp,
            forest: Forest { per_attribute },
            svm,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::forest::{forest_train, ForestConfig};
    use crate::net::SkipPreset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Random (untrained) pipeline with every component populated.
    fn random_pipeline(k: usize, l: usize, seed: u64, weights: bool) -> TrainedPipeline {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = PipelineConfig {
            hidden_dim: l,
            skips: SkipPreset::All,
            forest: ForestConfig { trees: 3, ..ForestConfig::default() },
            ..PipelineConfig::default()
        };
        let models = (0..SOURCES)
            .map(|s| SourceModel {
                net: RCodeanNet::new(source_dim(s), l, config.loss, &config.skips.pairs(), &mut rng).unwrap(),
                head: MlpHead::new(l, head_hidden_dims(l), k, &mut rng),
            })
            .collect();
        let feats: Vec<Vec<f64>> = (0..30)
            .map(|i| (0..SOURCES * k).map(|j| ((i * 7 + j * 3) % 11) as f64 / 11.0).collect())
            .collect();
        let labels: Vec<Vec<u8>> = (0..30).map(|i| (0..k).map(|a| ((i + a) % 3 == 0) as u8).collect()).collect();
        let forest = forest_train(&feats, &labels, &config.forest).unwrap();
        let svm = LinearSvm {
            weights: (0..k).map(|a| (0..SOURCES * k).map(|j| ((a + j) as f64).sin()).collect()).collect(),
            biases: (0..k).map(|a| a as f64 * 0.1 - 0.2).collect(),
        };
        TrainedPipeline {
            attributes: (0..k).map(|a| format!("a{a}")).collect(),
            models,
            weights: weights.then(|| PatchWeights {
                matrix: Mat::random_uniform(k, SOURCES, 0.5, &mut rng).map(|v| v + 0.5),
            }),
            ensemble: Ensemble {
                mlp: MlpHead::new(SOURCES * k, head_hidden_dims(l), k, &mut rng),
                forest,
                svm,
            },
            config,
        }
    }

    #[test]
    fn round_trip_is_identical() {
        for weights in [true, false] {
            let p = random_pipeline(3, 4, 1, weights);
            let back = decode_bundle(&encode_bundle(&p).unwrap()).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn flipped_byte_is_corruption() {
        let p = random_pipeline(2, 4, 2, true);
        let mut bytes = encode_bundle(&p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode_bundle(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn other_version_rejected() {
        let p = random_pipeline(2, 4, 3, true);
        let mut bytes = encode_bundle(&p).unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode_bundle(&bytes), Err(Error::Version { found: 7, expected: 1 })));
    }

    #[test]
    fn attribute_count_guard() {
        let p = random_pipeline(2, 4, 4, true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bundle");
        save_bundle(&p, &path).unwrap();
        assert!(load_bundle_for(&path, 2).is_ok());
        assert!(matches!(load_bundle_for(&path, 5), Err(Error::Config(_))));
    }
}
