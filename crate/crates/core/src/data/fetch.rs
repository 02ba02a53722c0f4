//! Download cache: `<cache>/<dataset>/<file>`, one pinned SHA-256 per file.
//!
//! Checksums always refer to the file as stored in the cache (after gzip
//! decompression; a tar.gz archive is stored as-is and unpacked beside it).
//! Without a pin, `<url>.sha256` is consulted. A verified file gets a local
//! `<file>.sha256` record so later runs can validate it offline.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, DataError, DatasetName, CIFAR_DIR, CIFAR_TEST, CIFAR_TRAIN, IDX_FILES};

pub const CACHE_ENV: &str = "PARAMSCOPE_CACHE";

/// `$PARAMSCOPE_CACHE`, else `~/.cache/paramscope`.
pub fn cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(dir);
    }
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    home.join(".cache").join("paramscope")
}

pub fn dataset_cache(cache: &Path, name: DatasetName) -> PathBuf {
    cache.join(name.as_str())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compression {
    #[default]
    None,
    Gzip,
    TarGz,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteFile {
    /// Name inside the dataset's cache directory.
    pub file: String,
    pub url: String,
    #[serde(default)]
    pub sha256: Option<String>,
    #[serde(default)]
    pub compression: Compression,
}

const MNIST_BASE: &str = "https://storage.googleapis.com/cvdf-datasets/mnist/";
const FMNIST_BASE: &str = "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/";
const CIFAR_URL: &str = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";

const MNIST_SHA256: [&str; 4] = [
    "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
];

fn idx_sources(base: &str, pins: Option<&[&str; 4]>) -> Vec<RemoteFile> {
    IDX_FILES
        .iter()
        .enumerate()
        .map(|(i, f)| RemoteFile {
            file: f.to_string(),
            url: format!("{base}{f}.gz"),
            sha256: pins.map(|p| p[i].to_string()),
            compression: Compression::Gzip,
        })
        .collect()
}

/// Built-in mirrors. Only MNIST carries pinned checksums; the others rely on
/// a sidecar or a pin supplied in the config.
pub fn default_sources(name: DatasetName) -> Vec<RemoteFile> {
    match name {
        DatasetName::Mnist => idx_sources(MNIST_BASE, Some(&MNIST_SHA256)),
        DatasetName::Fmnist => idx_sources(FMNIST_BASE, None),
        DatasetName::Cifar10 => vec![RemoteFile {
            file: "cifar-10-binary.tar.gz".into(),
            url: CIFAR_URL.into(),
            sha256: None,
            compression: Compression::TarGz,
        }],
    }
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    /// Attempts per URL, including the first.
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions { attempts: 4, backoff: Duration::from_millis(500), timeout: Duration::from_secs(300) }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".sha256");
    PathBuf::from(s)
}

fn parse_sidecar(text: &str) -> Option<String> {
    let token = text.split_whitespace().next()?.to_ascii_lowercase();
    (token.len() == 64 && token.bytes().all(|b| b.is_ascii_hexdigit())).then_some(token)
}

fn recorded_sum(path: &Path) -> Option<String> {
    fs::read_to_string(sidecar(path)).ok().and_then(|t| parse_sidecar(&t))
}

/// Checksum a cached file should have, if known without network access.
fn local_expectation(src: &RemoteFile, path: &Path) -> Option<String> {
    src.sha256.as_ref().map(|s| s.to_ascii_lowercase()).or_else(|| recorded_sum(path))
}

fn file_matches(path: &Path, expected: &str) -> Result<Option<String>, DataError> {
    if !path.is_file() {
        return Ok(None);
    }
    let actual = sha256_hex(&fs::read(path).map_err(io_err(path))?);
    Ok(if actual == expected { None } else { Some(actual) })
}

fn agent(opts: &FetchOptions) -> ureq::Agent {
    ureq::Agent::new_with_config(ureq::Agent::config_builder().timeout_global(Some(opts.timeout)).build())
}

fn get(agent: &ureq::Agent, url: &str, opts: &FetchOptions) -> Result<Vec<u8>, DataError> {
    let mut delay = opts.backoff;
    let mut last = String::new();
    let attempts = opts.attempts.max(1);
    for attempt in 1..=attempts {
        let result = agent
            .get(url)
            .call()
            .and_then(|mut r| r.body_mut().with_config().limit(u64::MAX).read_to_vec());
        match result {
            Ok(bytes) => return Ok(bytes),
            Err(e) => last = e.to_string(),
        }
        if attempt < attempts {
            thread::sleep(delay);
            delay *= 2;
        }
    }
    Err(DataError::Network { url: url.to_string(), attempts, reason: last })
}

fn gunzip(bytes: &[u8], url: &str) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    GzDecoder::new(bytes).read_to_end(&mut out).map_err(|e| DataError::Network {
        url: url.to_string(),
        attempts: 1,
        reason: format!("gzip: {e}"),
    })?;
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".part");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn unpack_tar_gz(archive: &Path, dir: &Path) -> Result<(), DataError> {
    let file = fs::File::open(archive).map_err(io_err(archive))?;
    tar::Archive::new(GzDecoder::new(file)).unpack(dir).map_err(io_err(archive))
}

fn cifar_members(dir: &Path) -> Vec<PathBuf> {
    CIFAR_TRAIN.iter().chain(std::iter::once(&CIFAR_TEST)).map(|f| dir.join(CIFAR_DIR).join(f)).collect()
}

fn outputs(src: &RemoteFile, dir: &Path) -> Vec<PathBuf> {
    match src.compression {
        Compression::TarGz => cifar_members(dir),
        _ => vec![dir.join(&src.file)],
    }
}

fn ensure_unpacked(src: &RemoteFile, path: &Path, dir: &Path) -> Result<(), DataError> {
    if src.compression == Compression::TarGz && outputs(src, dir).iter().any(|p| !p.is_file()) {
        unpack_tar_gz(path, dir)?;
    }
    Ok(())
}

/// Downloads every missing or invalid file of `name` into the cache and
/// returns the usable paths. Valid cached files cause no network traffic.
pub fn fetch(
    name: DatasetName,
    sources: &[RemoteFile],
    cache: &Path,
    opts: &FetchOptions,
) -> Result<Vec<PathBuf>, DataError> {
    let dir = dataset_cache(cache, name);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let agent = agent(opts);
    let mut paths = Vec::new();
    for src in sources {
        let path = dir.join(&src.file);
        let valid = match local_expectation(src, &path) {
            Some(expected) => path.is_file() && file_matches(&path, &expected)?.is_none(),
            None => false,
        };
        if !valid {
            let raw = get(&agent, &src.url, opts)?;
            let bytes = match src.compression {
                Compression::Gzip => gunzip(&raw, &src.url)?,
                _ => raw,
            };
            let expected = match &src.sha256 {
                Some(pin) => pin.to_ascii_lowercase(),
                None => {
                    let text = get(&agent, &format!("{}.sha256", src.url), opts)
                        .map_err(|_| DataError::ChecksumUnavailable { file: src.file.clone() })?;
                    parse_sidecar(&String::from_utf8_lossy(&text))
                        .ok_or_else(|| DataError::ChecksumUnavailable { file: src.file.clone() })?
                }
            };
            let actual = sha256_hex(&bytes);
            if actual != expected {
                return Err(DataError::ChecksumMismatch { file: src.file.clone(), expected, actual });
            }
            write_atomic(&path, &bytes)?;
            let side = sidecar(&path);
            fs::write(&side, format!("{actual}  {}\n", src.file)).map_err(io_err(&side))?;
            if src.compression == Compression::TarGz {
                unpack_tar_gz(&path, &dir)?;
            }
        } else {
            ensure_unpacked(src, &path, &dir)?;
        }
        paths.extend(outputs(src, &dir));
    }
    Ok(paths)
}

/// Re-hashes cached files without touching the network.
pub fn verify_cache(name: DatasetName, sources: &[RemoteFile], cache: &Path) -> Result<Vec<PathBuf>, DataError> {
    let dir = dataset_cache(cache, name);
    let mut paths = Vec::new();
    for src in sources {
        let path = dir.join(&src.file);
        if !path.is_file() {
            return Err(DataError::Missing { dataset: name, dir });
        }
        let expected = local_expectation(src, &path).ok_or_else(|| DataError::ChecksumUnavailable { file: src.file.clone() })?;
        if let Some(actual) = file_matches(&path, &expected)? {
            return Err(DataError::ChecksumMismatch { file: src.file.clone(), expected, actual });
        }
        paths.extend(outputs(src, &dir));
    }
    Ok(paths)
}
