//! CelebA `list_attr` parsing, split assignment and the dataset record type.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

use super::image::load_gray_image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    AeTrain,
    ClfTrain,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::AeTrain, Split::ClfTrain, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::AeTrain => "ae-train",
            Split::ClfTrain => "clf-train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown split {s:?}; expected ae-train, clf-train or test")))
    }
}

/// Relative sizes of the three splits. Counts are `floor(n·ae/total)`,
/// `floor(n·clf/total)` and the remainder for test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub ae_train: u32,
    pub clf_train: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            ae_train: 8,
            clf_train: 1,
            test: 1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        if self.ae_train + self.clf_train + self.test == 0 {
            return Err(Error::Config("split ratios must not all be zero".into()));
        }
        Ok(())
    }

    /// `(ae_train, clf_train, test)` record counts for `n` records.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let total = (self.ae_train + self.clf_train + self.test) as usize;
        let ae = n * self.ae_train as usize / total;
        let clf = n * self.clf_train as usize / total;
        (ae, clf, n - ae - clf)
    }

    /// Contiguous index-based assignment.
    pub fn assign(&self, n: usize) -> Vec<Split> {
        let (ae, clf, _) = self.counts(n);
        (0..n)
            .map(|i| match i {
                i if i < ae => Split::AeTrain,
                i if i < ae + clf => Split::ClfTrain,
                _ => Split::Test,
            })
            .collect()
    }

    /// Keep every identity inside one split. Identities are taken in order of
    /// first appearance and a split is closed once it reaches its target count.
    pub fn assign_by_identity(&self, identities: &[u64]) -> Vec<Split> {
        let n = identities.len();
        let (ae, clf, _) = self.counts(n);
        let mut first_seen: Vec<u64> = Vec::new();
        let mut members: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, &id) in identities.iter().enumerate() {
            members
                .entry(id)
                .or_insert_with(|| {
                    first_seen.push(id);
                    Vec::new()
                })
                .push(i);
        }
        let mut out = vec![Split::Test; n];
        let mut assigned = 0;
        for id in first_seen {
            let split = if assigned < ae {
                Split::AeTrain
            } else if assigned < ae + clf {
                Split::ClfTrain
            } else {
                Split::Test
            };
            for &i in &members[&id] {
                out[i] = split;
            }
            assigned += members[&id].len();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub file: String,
    pub labels: Vec<u8>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    Dir(PathBuf),
    /// Raw 0–255 images, one per record.
    Memory(Vec<Mat<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeDataset {
    pub attributes: Vec<String>,
    pub records: Vec<Record>,
    pub images: ImageSource,
}

impl AttributeDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn k(&self) -> usize {
        self.attributes.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<Vec<u8>> {
        indices.iter().map(|&i| self.records[i].labels.clone()).collect()
    }

    /// Raw 0–255 image of record `i`.
    pub fn image(&self, i: usize) -> Result<Mat<f64>> {
        match &self.images {
            ImageSource::Memory(images) => Ok(images[i].clone()),
            ImageSource::Dir(dir) => load_gray_image(dir.join(&self.records[i].file)),
        }
    }

    pub fn reassign_splits(&mut self, splits: &[Split]) -> Result<()> {
        if splits.len() != self.len() {
            return Err(Error::Config(format!("{} split labels for {} records", splits.len(), self.len())));
        }
        for (r, &s) in self.records.iter_mut().zip(splits) {
            r.split = s;
        }
        Ok(())
    }

    /// Per-attribute fraction of positive labels among `indices`.
    pub fn positive_rate(&self, indices: &[usize]) -> Vec<f64> {
        let mut pos = vec![0usize; self.k()];
        for &i in indices {
            for (p, &b) in pos.iter_mut().zip(&self.records[i].labels) {
                *p += b as usize;
            }
        }
        pos.into_iter()
            .map(|p| p as f64 / indices.len().max(1) as f64)
            .collect()
    }
}

/// Parse a CelebA `list_attr` file; `-1` becomes 0 and `1` becomes 1.
pub fn load_attr_list(path: impl AsRef<Path>, images_dir: impl AsRef<Path>, ratios: SplitRatios) -> Result<AttributeDataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::DatasetNotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let (attributes, rows) = parse_attr_list(&text)?;
    ratios.validate()?;
    let splits = ratios.assign(rows.len());
    let records = rows
        .into_iter()
        .zip(splits)
        .map(|((file, labels), split)| Record { file, labels, split })
        .collect();
    Ok(AttributeDataset {
        attributes,
        records,
        images: ImageSource::Dir(images_dir.as_ref().to_path_buf()),
    })
}

type Rows = Vec<(String, Vec<u8>)>;

pub fn parse_attr_list(text: &str) -> Result<(Vec<String>, Rows)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, count_line) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let count: usize = count_line
        .trim()
        .parse()
        .map_err(|_| parse_err(1, format!("expected record count, found {:?}", count_line.trim())))?;
    let (_, header) = lines.next().ok_or_else(|| parse_err(2, "missing attribute names"))?;
    let attributes: Vec<String> = header.split_whitespace().map(str::to_owned).collect();
    if attributes.is_empty() {
        return Err(parse_err(2, "no attribute names"));
    }
    let k = attributes.len();
    let mut rows = Vec::with_capacity(count);
    for (lineno, line) in lines {
        let mut fields = line.split_whitespace();
        let Some(file) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if values.len() != k {
            return Err(parse_err(lineno, format!("{} labels, header lists {k} attributes", values.len())));
        }
        let labels = values
            .iter()
            .map(|v| match *v {
                "1" => Ok(1),
                "-1" => Ok(0),
                other => Err(parse_err(lineno, format!("label {other:?} is not -1 or 1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        rows.push((file.to_owned(), labels));
    }
    if rows.len() != count {
        return Err(parse_err(1, format!("header announces {count} records, found {}", rows.len())));
    }
    Ok((attributes, rows))
}

/// Write the dataset's labels in `list_attr` layout.
pub fn write_attr_list(dataset: &AttributeDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("{}\n{}\n", dataset.len(), dataset.attributes.join(" "));
    for r in &dataset.records {
        out.push_str(&r.file);
        for &b in &r.labels {
            out.push_str(if b == 1 { "  1" } else { " -1" });
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a CelebA `identity` file: `filename identity` per line.
pub fn load_identities(path: impl AsRef<Path>) -> Result<HashMap<String, u64>> {
    let text = fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut f = line.split_whitespace();
        let (Some(file), Some(id)) = (f.next(), f.next()) else { continue };
        let id = id
            .parse()
            .map_err(|_| parse_err(i + 1, format!("identity {id:?} is not an integer")))?;
        out.insert(file.to_owned(), id);
    }
    Ok(out)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}
