//! Preprocessed dataset: standardized feature rows, labels, fitted
//! statistics and the split, persisted as one file.
//!
//! File layout: a text header (see [`super::header`]) with magic
//! `DLSVMDS`, then `samples × feature_dim` little-endian f32 values in
//! row-major order, then `samples` label bytes.
//!
//! ```text
//! DLSVMDS
//! version = 1
//! samples = 9339
//! feature_dim = 1024
//! side = 32
//! seed = 42
//! ratio = 0.7
//! batch = 256
//! fit_on = train
//! classes = 25
//! class = Adialer.C
//! ...
//! mu = <feature_dim floats>
//! sigma = <feature_dim floats>
//! train = <indices>
//! test = <indices>
//! unused = <indices>
//! end
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::header::{read_f32s, write_f32s, Header, HeaderWriter};
use super::resize::resize_square;
use super::split::{split_indices, SplitIndices};
use super::standardize::Standardizer;
use super::visualize::MalwareImage;
use super::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &str = "DLSVMDS";
pub const VERSION: u32 = 1;

/// Which rows the standardization statistics are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitOn {
    #[default]
    Train,
    All,
}

impl fmt::Display for FitOn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitOn::Train => "train",
            FitOn::All => "all",
        })
    }
}

impl FromStr for FitOn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(FitOn::Train),
            "all" => Ok(FitOn::All),
            _ => Err(Error::config(format!("fit-on must be `train` or `all`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessOptions {
    pub side: usize,
    pub ratio: f64,
    pub batch: usize,
    pub seed: u64,
    pub fit_on: FitOn,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            side: 32,
            ratio: 0.7,
            batch: 256,
            seed: 42,
            fit_on: FitOn::Train,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetContainer {
    /// Row-major `samples × feature_dim`, already standardized.
    pub features: Vec<f32>,
    pub feature_dim: usize,
    pub side: usize,
    pub labels: Vec<u8>,
    pub standardizer: Standardizer,
    pub split: SplitIndices,
    pub seed: u64,
    pub ratio: f64,
    pub batch: usize,
    pub fit_on: FitOn,
    pub class_names: Vec<String>,
}

impl DatasetContainer {
    /// Resizes every image to `side × side`, splits, and standardizes.
    pub fn from_images(images: &[MalwareImage], class_names: Vec<String>, opts: &PreprocessOptions) -> Result<Self> {
        let dim = opts.side * opts.side;
        let mut features = Vec::with_capacity(images.len() * dim);
        let mut labels = Vec::with_capacity(images.len());
        for img in images {
            features.extend(resize_square(img, opts.side));
            labels.push(label_byte(img.label)?);
        }
        Self::from_raw(features, labels, class_names, opts)
    }

    /// Splits and standardizes raw `p × side²` feature rows.
    pub fn from_raw(
        mut features: Vec<f32>,
        labels: Vec<u8>,
        class_names: Vec<String>,
        opts: &PreprocessOptions,
    ) -> Result<Self> {
        let dim = opts.side * opts.side;
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::dim(format!(
                "{} feature values for {} labels of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= class_names.len()) {
            return Err(Error::input(format!(
                "label {bad} but only {} classes",
                class_names.len()
            )));
        }
        let split = split_indices(labels.len(), opts.ratio, opts.batch, opts.seed)?;
        let fit_rows: Vec<usize> = match opts.fit_on {
            FitOn::Train => split.train.clone(),
            FitOn::All => (0..labels.len()).collect(),
        };
        let standardizer = Standardizer::fit(&features, dim, &fit_rows)?;
        standardizer.apply(&mut features)?;
        Ok(Self {
            features,
            feature_dim: dim,
            side: opts.side,
            labels,
            standardizer,
            split,
            seed: opts.seed,
            ratio: opts.ratio,
            batch: opts.batch,
            fit_on: opts.fit_on,
            class_names,
        })
    }

    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn indices(&self, subset: Subset) -> &[usize] {
        match subset {
            Subset::Train => &self.split.train,
            Subset::Test => &self.split.test,
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Gathers rows into a `[n, feature_dim]` tensor.
    pub fn batch_features(&self, indices: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(indices.len() * self.feature_dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![indices.len(), self.feature_dim], data).expect("gathered rows match shape")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| usize::from(self.labels[i])).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[usize::from(l)] += 1;
        }
        counts
    }

    /// Short hex digest of μ and σ, handy for checking that a checkpoint and
    /// a dataset agree.
    pub fn stats_checksum(&self) -> String {
        stats_checksum(&self.standardizer)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = HeaderWriter::new(MAGIC);
        h.field("version", VERSION)
            .field("samples", self.samples())
            .field("feature_dim", self.feature_dim)
            .field("side", self.side)
            .field("seed", self.seed)
            .field("ratio", self.ratio)
            .field("batch", self.batch)
            .field("fit_on", self.fit_on)
            .field("classes", self.num_classes());
        for name in &self.class_names {
            h.field("class", name);
        }
        h.list("mu", &self.standardizer.mu)
            .list("sigma", &self.standardizer.sigma)
            .list("train", &self.split.train)
            .list("test", &self.split.test)
            .list("unused", &self.split.unused);
        let mut out = h.finish();
        write_f32s(&mut out, &self.features);
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let h = Header::parse(bytes, MAGIC)?;
        let version: u32 = h.get("version")?;
        if version != VERSION {
            let off = h.entry("version")?.offset;
            return Err(Error::format(off, format!("unsupported dataset version {version}")));
        }
        let samples: usize = h.get("samples")?;
        let feature_dim: usize = h.get("feature_dim")?;
        let side: usize = h.get("side")?;
        if side * side != feature_dim {
            return Err(Error::format(
                h.entry("side")?.offset,
                "side² does not equal feature_dim",
            ));
        }
        let classes: usize = h.get("classes")?;
        let class_names: Vec<String> = h.all("class").map(|e| e.value.clone()).collect();
        if class_names.len() != classes {
            return Err(Error::format(
                h.entry("classes")?.offset,
                format!("{classes} classes declared, {} named", class_names.len()),
            ));
        }
        let mu: Vec<f32> = h.get_list("mu")?;
        let sigma: Vec<f32> = h.get_list("sigma")?;
        if mu.len() != feature_dim || sigma.len() != feature_dim {
            return Err(Error::format(
                h.entry("mu")?.offset,
                "statistics length differs from feature_dim",
            ));
        }
        let split = SplitIndices {
            train: h.get_list("train")?,
            test: h.get_list("test")?,
            unused: h.get_list("unused")?,
        };
        let mut seen = vec![false; samples];
        for &i in split.train.iter().chain(&split.test).chain(&split.unused) {
            if i >= samples || std::mem::replace(&mut seen[i], true) {
                return Err(Error::format(
                    h.entry("train")?.offset,
                    format!("split index {i} invalid or repeated"),
                ));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::format(
                h.entry("train")?.offset,
                "split does not cover every sample",
            ));
        }

        let mut pos = h.payload_offset;
        let features = read_f32s(bytes, &mut pos, samples * feature_dim)?;
        if bytes.len() < pos + samples {
            return Err(Error::format(bytes.len() as u64, "truncated label block"));
        }
        let labels = bytes[pos..pos + samples].to_vec();
        if bytes.len() != pos + samples {
            return Err(Error::format(
                (pos + samples) as u64,
                "trailing bytes after label block",
            ));
        }
        if let Some(k) = labels.iter().position(|&l| usize::from(l) >= classes) {
            return Err(Error::format((pos + k) as u64, "label out of class range"));
        }
        Ok(Self {
            features,
            feature_dim,
            side,
            labels,
            standardizer: Standardizer { mu, sigma },
            split,
            seed: h.get("seed")?,
            ratio: h.get("ratio")?,
            batch: h.get("batch")?,
            fit_on: h
                .get::<String>("fit_on")?
                .parse()
                .map_err(|_| Error::format(h.entry("fit_on").map(|e| e.offset).unwrap_or(0), "bad fit_on"))?,
            class_names,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn stats_checksum(s: &Standardizer) -> String {
    let mut hasher = Sha256::new();
    for v in s.mu.iter().chain(&s.sigma) {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn label_byte(label: usize) -> Result<u8> {
    u8::try_from(label).map_err(|_| Error::input(format!("label {label} does not fit in a byte")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(p: usize) -> DatasetContainer {
        let opts = PreprocessOptions {
            side: 2,
            ratio: 0.5,
            batch: 4,
            seed: 9,
            fit_on: FitOn::Train,
        };
        let features: Vec<f32> = (0..p * 4).map(|i| (i * 7 % 11) as f32).collect();
        let labels: Vec<u8> = (0..p).map(|i| (i % 3) as u8).collect();
        DatasetContainer::from_raw(features, labels, vec!["a".into(), "b".into(), "c c".into()], &opts).unwrap()
    }

    #[test]
    fn byte_round_trip() {
        let ds = toy(19);
        let bytes = ds.to_bytes();
        let back = DatasetContainer::from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(ds.split.total(), 19);
        assert_eq!(ds.class_counts(), vec![7, 6, 6]);
    }

    #[test]
    fn truncation_and_magic_are_format_errors() {
        let bytes = toy(8).to_bytes();
        for cut in [3, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                DatasetContainer::from_bytes(&bytes[..cut]),
                Err(Error::Format { .. })
            ));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            DatasetContainer::from_bytes(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn train_rows_are_standardized() {
        let ds = toy(40);
        for j in 0..4 {
            let mean: f64 =
                ds.split.train.iter().map(|&i| f64::from(ds.row(i)[j])).sum::<f64>() / ds.split.train.len() as f64;
            assert!(mean.abs() < 1e-6);
        }
    }

    #[test]
    fn fit_on_all_uses_every_row() {
        let a = toy(40);
        let opts = PreprocessOptions {
            side: 2,
            ratio: 0.5,
            batch: 4,
            seed: 9,
            fit_on: FitOn::All,
        };
        let features: Vec<f32> = (0..160).map(|i| (i * 7 % 11) as f32).collect();
        let labels: Vec<u8> = (0..40).map(|i| (i % 3) as u8).collect();
        let b = DatasetContainer::from_raw(features, labels, a.class_names.clone(), &opts).unwrap();
        assert_ne!(a.standardizer, b.standardizer);
        let mean: f64 = (0..40).map(|i| f64::from(b.row(i)[0])).sum::<f64>() / 40.0;
        assert!(mean.abs() < 1e-6);
    }

    #[test]
    fn batch_gathering() {
        let ds = toy(12);
        let x = ds.batch_features(&[3, 0]);
        assert_eq!(x.shape(), &[2, 4]);
        assert_eq!(x.row(0), ds.row(3));
        assert_eq!(ds.batch_labels(&[3, 0, 5]), vec![0, 0, 2]);
    }
}
