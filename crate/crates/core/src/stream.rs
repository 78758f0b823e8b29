//! Data sources and the one-pass mini-batch stream.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{derive_seed, seeded_rng};

/// A labeled feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f32>,
    pub label: u32,
}

impl Example {
    pub fn new(features: Vec<f32>, label: u32) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Isotropic Gaussian clusters, one per class.
    SyntheticBlobs {
        /// Standard deviation of every cluster along every axis.
        #[serde(default = "default_spread")]
        spread: f64,
        /// Standard deviation of the cluster centers around the origin.
        #[serde(default = "default_center_scale")]
        center_scale: f64,
    },
    /// A pair of binary dataset files (see [`write_examples`]).
    File { train: PathBuf, test: PathBuf },
}

fn default_spread() -> f64 {
    1.0
}

fn default_center_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_examples: usize,
    pub feature_dim: usize,
    pub n_classes: usize,
    pub source: DatasetSource,
    #[serde(default)]
    pub seed: u64,
    /// Seed of the one-pass presentation order.
    #[serde(default)]
    pub order_seed: u64,
}

impl DatasetSpec {
    pub fn blobs(n_examples: usize, feature_dim: usize, n_classes: usize, seed: u64) -> Self {
        Self {
            n_examples,
            feature_dim,
            n_classes,
            source: DatasetSource::SyntheticBlobs {
                spread: default_spread(),
                center_scale: default_center_scale(),
            },
            seed,
            order_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be at least 1"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("n_classes", "must be at least 2"));
        }
        if let DatasetSource::SyntheticBlobs {
            spread,
            center_scale,
        } = self.source
        {
            if self.n_examples < self.n_classes.max(10) {
                return Err(Error::config(
                    "n_examples",
                    format!(
                        "must be at least max(n_classes, 10) = {} so both splits are populated",
                        self.n_classes.max(10)
                    ),
                ));
            }
            if !(spread.is_finite() && spread >= 0.0) {
                return Err(Error::config("source.spread", "must be finite and >= 0"));
            }
            if !(center_scale.is_finite() && center_scale > 0.0) {
                return Err(Error::config("source.center_scale", "must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// Materializes the dataset described by this spec.
    pub fn load(&self) -> Result<Dataset> {
        self.validate()?;
        match &self.source {
            DatasetSource::SyntheticBlobs { .. } => generate_blobs(self),
            DatasetSource::File { train, test } => {
                let ds = read_dataset(train, test)?;
                if ds.feature_dim != self.feature_dim {
                    return Err(Error::config(
                        "feature_dim",
                        format!("config says {}, file has {}", self.feature_dim, ds.feature_dim),
                    ));
                }
                if ds.n_classes != self.n_classes {
                    return Err(Error::config(
                        "n_classes",
                        format!("config says {}, file has {}", self.n_classes, ds.n_classes),
                    ));
                }
                Ok(ds)
            }
        }
    }
}

/// A train/test split ready for streaming.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub feature_dim: usize,
    pub n_classes: usize,
}

const CENTER_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;

/// Cluster centers of the synthetic blob task, one row per class.
pub fn blob_centers(spec: &DatasetSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let DatasetSource::SyntheticBlobs { center_scale, .. } = spec.source else {
        return Err(Error::domain("blob centers requested for a file-backed dataset"));
    };
    let mut rng = seeded_rng(derive_seed(spec.seed, CENTER_STREAM));
    Ok((0..spec.n_classes)
        .map(|_| {
            (0..spec.feature_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    center_scale * z
                })
                .collect()
        })
        .collect())
}

/// Generates `n_classes` isotropic Gaussian clusters and splits them 90/10.
///
/// Labels are assigned round-robin before the split shuffle so every class is
/// equally represented. The test split holds `n_examples / 10` examples.
pub fn generate_blobs(spec: &DatasetSpec) -> Result<Dataset> {
    let centers = blob_centers(spec)?;
    let DatasetSource::SyntheticBlobs { spread, .. } = spec.source else {
        unreachable!("blob_centers rejects file sources");
    };
    let mut rng = seeded_rng(derive_seed(spec.seed, SAMPLE_STREAM));
    let mut all: Vec<Example> = (0..spec.n_examples)
        .map(|i| {
            let label = i % spec.n_classes;
            let features = centers[label]
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (c + spread * z) as f32
                })
                .collect();
            Example::new(features, label as u32)
        })
        .collect();
    all.shuffle(&mut seeded_rng(derive_seed(spec.seed, SPLIT_STREAM)));
    let n_test = spec.n_examples / 10;
    let train = all.split_off(n_test);
    Ok(Dataset {
        train,
        test: all,
        feature_dim: spec.feature_dim,
        n_classes: spec.n_classes,
    })
}

/// One incoming mini-batch of the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBatch {
    pub examples: Vec<Example>,
    /// Position of this batch in the stream, starting at 0.
    pub step_index: usize,
    pub is_final: bool,
}

/// Iterator over a seeded permutation of a training set, in mini-batches.
#[derive(Debug)]
pub struct OnePassStream<'a> {
    data: &'a [Example],
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl OnePassStream<'_> {
    pub fn n_batches(&self) -> usize {
        self.data.len().div_ceil(self.batch_size)
    }

    /// The presentation order as indices into the training set.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for OnePassStream<'_> {
    type Item = StreamBatch;

    fn next(&mut self) -> Option<StreamBatch> {
        let start = self.next * self.batch_size;
        if start >= self.order.len() {
            return None;
        }
        let end = (start + self.batch_size).min(self.order.len());
        let batch = StreamBatch {
            examples: self.order[start..end]
                .iter()
                .map(|&i| self.data[i].clone())
                .collect(),
            step_index: self.next,
            is_final: end == self.order.len(),
        };
        self.next += 1;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.n_batches() - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for OnePassStream<'_> {}

/// Streams `train` exactly once in `batch_size` chunks of a seeded uniform
/// permutation. The final batch may be short.
pub fn one_pass_iter(train: &[Example], order_seed: u64, batch_size: usize) -> OnePassStream<'_> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut seeded_rng(order_seed));
    OnePassStream {
        data: train,
        order,
        batch_size,
        next: 0,
    }
}

const MAGIC: &[u8; 4] = b"OPDS";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

/// Contents of one binary dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleFile {
    pub feature_dim: usize,
    pub n_classes: usize,
    pub examples: Vec<Example>,
}

/// Serializes examples in the little-endian `OPDS` v1 layout:
///
/// ```text
/// "OPDS" | version u32 = 1 | n u64 | D u32 | C u32 | n × ([f32; D], label u32)
/// ```
pub fn encode_examples(examples: &[Example], feature_dim: usize, n_classes: usize) -> Result<Vec<u8>> {
    let dim = u32::try_from(feature_dim).map_err(|_| Error::domain("feature_dim exceeds u32"))?;
    let classes = u32::try_from(n_classes).map_err(|_| Error::domain("n_classes exceeds u32"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + examples.len() * (4 * feature_dim + 4));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(examples.len() as u64).to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&classes.to_le_bytes());
    for ex in examples {
        if ex.features.len() != feature_dim {
            return Err(Error::Shape {
                expected: feature_dim,
                got: ex.features.len(),
            });
        }
        if ex.label >= classes {
            return Err(Error::domain(format!(
                "label {} out of range for {n_classes} classes",
                ex.label
            )));
        }
        for v in &ex.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&ex.label.to_le_bytes());
    }
    Ok(out)
}

pub fn write_examples(
    path: impl AsRef<Path>,
    examples: &[Example],
    feature_dim: usize,
    n_classes: usize,
) -> Result<()> {
    let bytes = encode_examples(examples, feature_dim, n_classes)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parses an `OPDS` v1 buffer; errors carry the byte offset of the fault.
pub fn parse_examples(bytes: &[u8]) -> Result<ExampleFile> {
    if bytes.len() < HEADER_LEN {
        return Err(parse_err(
            bytes.len(),
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(parse_err(0, "bad magic, expected \"OPDS\""));
    }
    let version = read_u32(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(parse_err(4, format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = read_u32(bytes, 16) as usize;
    let classes = read_u32(bytes, 20);
    if dim == 0 {
        return Err(parse_err(16, "feature dimension is 0"));
    }
    if classes == 0 {
        return Err(parse_err(20, "class count is 0"));
    }
    let record = 4 * dim + 4;
    let payload = (bytes.len() - HEADER_LEN) as u64;
    let expected = n.checked_mul(record as u64);
    if expected.is_none_or(|e| e > payload) {
        // Point at the first record that does not fit.
        let complete = payload / record as u64;
        let offset = HEADER_LEN + complete as usize * record;
        return Err(parse_err(
            offset,
            format!("truncated payload: header advertises {n} records, only {complete} complete"),
        ));
    }
    let n = n as usize;
    let end = HEADER_LEN + n * record;
    if end != bytes.len() {
        return Err(parse_err(
            end,
            format!("{} trailing bytes after last record", bytes.len() - end),
        ));
    }
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let base = HEADER_LEN + i * record;
        let features = (0..dim)
            .map(|j| f32::from_le_bytes(bytes[base + 4 * j..base + 4 * j + 4].try_into().unwrap()))
            .collect();
        let label_at = base + 4 * dim;
        let label = read_u32(bytes, label_at);
        if label >= classes {
            return Err(parse_err(
                label_at,
                format!("label {label} out of range for {classes} classes"),
            ));
        }
        examples.push(Example::new(features, label));
    }
    Ok(ExampleFile {
        feature_dim: dim,
        n_classes: classes as usize,
        examples,
    })
}

pub fn read_examples(path: impl AsRef<Path>) -> Result<ExampleFile> {
    parse_examples(&fs::read(path)?)
}

/// Reads a train file and a test file that must agree on `D` and `C`.
pub fn read_dataset(train: impl AsRef<Path>, test: impl AsRef<Path>) -> Result<Dataset> {
    let tr = read_examples(train)?;
    let te = read_examples(test)?;
    if tr.feature_dim != te.feature_dim || tr.n_classes != te.n_classes {
        return Err(Error::domain(format!(
            "train (D={}, C={}) and test (D={}, C={}) disagree",
            tr.feature_dim, tr.n_classes, te.feature_dim, te.n_classes
        )));
    }
    if te.examples.is_empty() {
        return Err(Error::domain("test file holds no examples"));
    }
    Ok(Dataset {
        train: tr.examples,
        test: te.examples,
        feature_dim: tr.feature_dim,
        n_classes: tr.n_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> DatasetSpec {
        DatasetSpec::blobs(200, 5, 4, seed)
    }

    #[test]
    fn blobs_are_deterministic() {
        assert_eq!(generate_blobs(&small(7)).unwrap(), generate_blobs(&small(7)).unwrap());
        assert_ne!(generate_blobs(&small(7)).unwrap(), generate_blobs(&small(8)).unwrap());
    }

    #[test]
    fn blobs_split_ninety_ten() {
        let ds = generate_blobs(&small(1)).unwrap();
        assert_eq!(ds.test.len(), 20);
        assert_eq!(ds.train.len(), 180);
        assert!(ds.train.iter().chain(&ds.test).all(|e| e.features.len() == 5 && e.label < 4));
    }

    #[test]
    fn degenerate_specs_rejected() {
        let mut s = small(1);
        s.n_classes = 1;
        assert!(matches!(generate_blobs(&s), Err(Error::Config { .. })));
        let mut s = small(1);
        s.feature_dim = 0;
        assert!(generate_blobs(&s).is_err());
        let mut s = small(1);
        s.n_examples = 3;
        assert!(generate_blobs(&s).is_err());
    }

    #[test]
    fn batch_sizes_ten_by_three() {
        let ds: Vec<Example> = (0..10).map(|i| Example::new(vec![i as f32], 0)).collect();
        let sizes: Vec<usize> = one_pass_iter(&ds, 3, 3).map(|b| b.examples.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let finals: Vec<bool> = one_pass_iter(&ds, 3, 3).map(|b| b.is_final).collect();
        assert_eq!(finals, vec![false, false, false, true]);
    }

    #[test]
    fn header_with_zero_classes() {
        let mut bytes = encode_examples(&[], 3, 2).unwrap();
        bytes[20..24].copy_from_slice(&0u32.to_le_bytes());
        match parse_examples(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_record_reports_its_offset() {
        let ex: Vec<Example> = (0..4).map(|i| Example::new(vec![i as f32; 3], 1)).collect();
        let bytes = encode_examples(&ex, 3, 2).unwrap();
        // cut inside the third record
        let cut = &bytes[..HEADER_LEN + 2 * 16 + 5];
        match parse_examples(cut) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, (HEADER_LEN + 32) as u64),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn label_out_of_range_names_label_offset() {
        let ex = vec![Example::new(vec![0.0; 2], 0), Example::new(vec![0.0; 2], 1)];
        let mut bytes = encode_examples(&ex, 2, 2).unwrap();
        let label_at = HEADER_LEN + 12 + 8;
        bytes[label_at..label_at + 4].copy_from_slice(&9u32.to_le_bytes());
        match parse_examples(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, label_at as u64),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_examples(&[], 1, 2).unwrap();
        bytes[0] = b'X';
        assert!(matches!(parse_examples(&bytes), Err(Error::Parse { offset: 0, .. })));
        let mut bytes = encode_examples(&[], 1, 2).unwrap();
        bytes[4] = 2;
        assert!(matches!(parse_examples(&bytes), Err(Error::Parse { offset: 4, .. })));
    }
}
