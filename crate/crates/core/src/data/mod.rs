//! Dataset containers (IDX, CIFAR-10 binary), download cache and minibatching.

mod fetch;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::Batch;
use crate::nn::{NnError, RngState, Tensor};

pub use fetch::{
    cache_dir, default_sources, dataset_cache, fetch, verify_cache, Compression, FetchOptions, RemoteFile, CACHE_ENV,
};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const NUM_CLASSES: usize = 10;
pub const BATCH_SIZE: usize = 100;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated ({detail})")]
    Truncated { path: PathBuf, detail: String },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is outside 0..{NUM_CLASSES}")]
    BadLabel { index: usize, label: u8 },
    #[error("{path}: length {len} is not a multiple of {CIFAR_RECORD}")]
    BadCifarLength { path: PathBuf, len: u64 },
    #[error("unknown dataset `{0}` (expected mnist, fmnist or cifar10)")]
    UnknownDataset(String),
    #[error("dataset {dataset} not found in {dir}; run `paramscope fetch` first")]
    Missing { dataset: DatasetName, dir: PathBuf },
    #[error("checksum mismatch for {file}: expected {expected}, got {actual}")]
    ChecksumMismatch { file: String, expected: String, actual: String },
    #[error("no pinned checksum or sidecar for {file}")]
    ChecksumUnavailable { file: String },
    #[error("download of {url} failed after {attempts} attempts: {reason}")]
    Network { url: String, attempts: u32, reason: String },
    #[error("invalid batch plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Mnist,
    Fmnist,
    Cifar10,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Fmnist => "fmnist",
            DatasetName::Cifar10 => "cifar10",
        }
    }

    /// Per-image shape `[C, H, W]`.
    pub fn image_shape(self) -> [usize; 3] {
        match self {
            DatasetName::Cifar10 => crate::models::CIFAR_SHAPE,
            _ => crate::models::MNIST_SHAPE,
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetName::Mnist),
            "fmnist" | "fashion-mnist" | "fashion_mnist" => Ok(DatasetName::Fmnist),
            "cifar10" | "cifar-10" => Ok(DatasetName::Cifar10),
            _ => Err(DataError::UnknownDataset(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: DatasetName,
    pub split: Split,
    /// `[N, C, H, W]`, pixels in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    /// Gathers the listed examples into a batch.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let stride = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Batch {
            x: Tensor::new(shape, data).expect("gather shape"),
            labels: indices.iter().map(|&i| self.labels[i] as usize).collect(),
        }
    }

    /// Contiguous examples `[start, end)` as a batch.
    pub fn slice(&self, start: usize, end: usize) -> Batch {
        let idx: Vec<usize> = (start..end.min(self.len())).collect();
        self.gather(&idx)
    }

    /// The examples at `indices`, as a new dataset.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let b = self.gather(indices);
        Dataset { name: self.name, split: self.split, images: b.x, labels: indices.iter().map(|&i| self.labels[i]).collect() }
    }

    /// First `n` examples of a permutation drawn from `seed`.
    pub fn subset(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let perm = RngState::new(seed).permutation(self.len());
        self.select(&perm[..n])
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(io_err(path))
}

fn parse_idx(path: &Path, bytes: &[u8], expected: u32) -> Result<(Vec<usize>, usize), DataError> {
    if bytes.len() < 4 {
        return Err(DataError::Truncated { path: path.into(), detail: "missing header".into() });
    }
    let magic = be_u32(bytes, 0);
    if magic != expected {
        return Err(DataError::BadMagic { path: path.into(), found: magic, expected });
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(DataError::Truncated { path: path.into(), detail: "incomplete dimension list".into() });
    }
    let dims: Vec<usize> = (0..ndim).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let want: usize = dims.iter().product();
    if bytes.len() - header < want {
        return Err(DataError::Truncated {
            path: path.into(),
            detail: format!("{} payload bytes, header promises {want}", bytes.len() - header),
        });
    }
    Ok((dims, header))
}

fn check_labels(labels: &[u8]) -> Result<(), DataError> {
    match labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
        Some(index) => Err(DataError::BadLabel { index, label: labels[index] }),
        None => Ok(()),
    }
}

/// Reads an IDX image file and its label file.
pub fn load_idx(images_path: &Path, labels_path: &Path, name: DatasetName, split: Split) -> Result<Dataset, DataError> {
    let img = read(images_path)?;
    let (dims, off) = parse_idx(images_path, &img, IDX_IMAGES_MAGIC)?;
    let lab = read(labels_path)?;
    let (ldims, loff) = parse_idx(labels_path, &lab, IDX_LABELS_MAGIC)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    if ldims[0] != n {
        return Err(DataError::CountMismatch { images: n, labels: ldims[0] });
    }
    let labels = lab[loff..loff + n].to_vec();
    check_labels(&labels)?;
    let data = img[off..off + n * h * w].iter().map(|&p| p as f64 / 255.0).collect();
    Ok(Dataset { name, split, images: Tensor::new(vec![n, 1, h, w], data)?, labels })
}

fn to_byte(p: f64) -> u8 {
    (p * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes a dataset as an IDX image/label pair.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<(), DataError> {
    let s = ds.images.shape();
    let mut img = Vec::with_capacity(16 + ds.images.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for &d in &[s[0], s[2], s[3]] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    img.extend(ds.images.data().iter().map(|&p| to_byte(p)));
    fs::write(images_path, img).map_err(io_err(images_path))?;

    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    lab.extend_from_slice(&ds.labels);
    fs::write(labels_path, lab).map_err(io_err(labels_path))
}

/// Reads and concatenates CIFAR-10 binary batch files.
pub fn load_cifar10(batch_files: &[PathBuf], split: Split) -> Result<Dataset, DataError> {
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for path in batch_files {
        let bytes = read(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(DataError::BadCifarLength { path: path.clone(), len: bytes.len() as u64 });
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            labels.push(rec[0]);
            data.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
        }
    }
    check_labels(&labels)?;
    let n = labels.len();
    Ok(Dataset { name: DatasetName::Cifar10, split, images: Tensor::new(vec![n, 3, 32, 32], data)?, labels })
}

/// Writes a dataset as one CIFAR-10 binary batch file.
pub fn write_cifar10(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let stride = ds.image_len();
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD);
    for (i, &label) in ds.labels.iter().enumerate() {
        out.push(label);
        out.extend(ds.images.data()[i * stride..(i + 1) * stride].iter().map(|&p| to_byte(p)));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub const IDX_FILES: [&str; 4] =
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];
pub const CIFAR_DIR: &str = "cifar-10-batches-bin";
pub const CIFAR_TRAIN: [&str; 5] = ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const CIFAR_TEST: &str = "test_batch.bin";

/// Loads one split from the cache layout `<cache>/<dataset>/...`.
pub fn load_split(cache: &Path, name: DatasetName, split: Split) -> Result<Dataset, DataError> {
    let dir = dataset_cache(cache, name);
    let missing = |p: &Path| !p.is_file();
    match name {
        DatasetName::Cifar10 => {
            let files: Vec<PathBuf> = match split {
                Split::Train => CIFAR_TRAIN.iter().map(|f| dir.join(CIFAR_DIR).join(f)).collect(),
                Split::Test => vec![dir.join(CIFAR_DIR).join(CIFAR_TEST)],
            };
            if files.iter().any(|p| missing(p)) {
                return Err(DataError::Missing { dataset: name, dir });
            }
            load_cifar10(&files, split)
        }
        _ => {
            let (i, l) = match split {
                Split::Train => (IDX_FILES[0], IDX_FILES[1]),
                Split::Test => (IDX_FILES[2], IDX_FILES[3]),
            };
            let (i, l) = (dir.join(i), dir.join(l));
            if missing(&i) || missing(&l) {
                return Err(DataError::Missing { dataset: name, dir });
            }
            load_idx(&i, &l, name, split)
        }
    }
}

/// Minibatch schedule: one permutation per epoch from the trial stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    /// Seed of the trial's shuffle stream.
    pub seed: u64,
}

impl BatchPlan {
    pub fn new(batch_size: usize, seed: u64) -> Result<Self, DataError> {
        if batch_size == 0 {
            return Err(DataError::InvalidPlan("batch size must be positive".into()));
        }
        Ok(BatchPlan { batch_size, seed })
    }

    /// Example order for `epoch` over `n` examples.
    pub fn permutation(&self, n: usize, epoch: usize) -> Vec<usize> {
        RngState::new(self.seed).split(epoch as u64).permutation(n)
    }

    /// Full batches per epoch; the short remainder is dropped.
    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n / self.batch_size
    }

    pub fn dropped(&self, n: usize) -> usize {
        n % self.batch_size
    }

    /// Index lists of every full batch in `epoch`.
    pub fn epoch_indices(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let perm = self.permutation(n, epoch);
        perm.chunks_exact(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Batches of one epoch, gathered lazily.
pub fn batches<'a>(ds: &'a Dataset, plan: &BatchPlan, epoch: usize) -> impl Iterator<Item = Batch> + 'a {
    plan.epoch_indices(ds.len(), epoch).into_iter().map(move |idx| ds.gather(&idx))
}
