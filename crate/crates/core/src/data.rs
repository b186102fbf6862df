//! MNIST ingestion from IDX files.
//!
//! IDX layout: a big-endian `u32` magic (`0x00000803` for `u8` images with
//! three dimensions, `0x00000801` for `u8` labels with one), one big-endian
//! `u32` per dimension, then the row-major payload.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const N_CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Decoded IDX payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Idx {
    Images { rows: usize, cols: usize, pixels: Vec<u8> },
    Labels(Vec<u8>),
}

impl Idx {
    pub fn len(&self) -> usize {
        match self {
            Idx::Images { rows, cols, pixels } => pixels.len() / (rows * cols).max(1),
            Idx::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("header truncated at byte {at}")))
}

pub fn parse_idx(bytes: &[u8]) -> Result<Idx> {
    let magic = read_u32(bytes, 0)?;
    let ndim = match magic {
        IMAGE_MAGIC => 3,
        LABEL_MAGIC => 1,
        other => return Err(Error::Format(format!("bad IDX magic {other:#010x}"))),
    };
    let dims = (0..ndim)
        .map(|i| read_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "payload truncated: {} of {expected} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    Ok(if ndim == 3 {
        Idx::Images {
            rows: dims[1],
            cols: dims[2],
            pixels: payload.to_vec(),
        }
    } else {
        Idx::Labels(payload.to_vec())
    })
}

pub fn encode_idx(idx: &Idx) -> Vec<u8> {
    let mut out = Vec::new();
    match idx {
        Idx::Images { rows, cols, pixels } => {
            out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
            for d in [idx.len(), *rows, *cols] {
                out.extend_from_slice(&(d as u32).to_be_bytes());
            }
            out.extend_from_slice(pixels);
        }
        Idx::Labels(labels) => {
            out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
            out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
            out.extend_from_slice(labels);
        }
    }
    out
}

/// Pixel standardization `x ↦ (x/255 − mean)/std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: 0.1307,
            std: 0.3081,
        }
    }
}

impl Normalization {
    pub fn apply(&self, byte: u8) -> f64 {
        (byte as f64 / 255.0 - self.mean) / self.std
    }

    /// Inverse of [`Normalization::apply`] on the 0..=255 scale.
    pub fn invert(&self, value: f64) -> f64 {
        (value * self.std + self.mean) * 255.0
    }
}

pub fn normalize(pixels: &[u8], norm: Normalization) -> Vec<f64> {
    pixels.iter().map(|&b| norm.apply(b)).collect()
}

/// Normalized images `[N, 1, rows, cols]` with labels in `0..10`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::Dimension(format!("images must be [N, 1, H, W], got {shape:?}")));
        }
        if shape[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "{} images but {} labels",
                shape[0],
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= N_CLASSES) {
            return Err(Error::Format(format!("label {bad} outside 0..{N_CLASSES}")));
        }
        Ok(Self { images, labels })
    }

    pub fn from_idx(images: &Idx, labels: &Idx, norm: Normalization) -> Result<Self> {
        let (Idx::Images { rows, cols, pixels }, Idx::Labels(raw)) = (images, labels) else {
            return Err(Error::Format("expected an image file and a label file".into()));
        };
        let n = images.len();
        let tensor = Tensor::new(vec![n, 1, *rows, *cols], normalize(pixels, norm))?;
        Dataset::new(tensor, raw.iter().map(|&l| l as usize).collect())
    }

    pub fn load(images: impl AsRef<Path>, labels: impl AsRef<Path>, norm: Normalization) -> Result<Self> {
        let read = |p: &Path| fs::read(p).map_err(|e| Error::io(p, e));
        let img = parse_idx(&read(images.as_ref())?)?;
        let lbl = parse_idx(&read(labels.as_ref())?)?;
        Dataset::from_idx(&img, &lbl, norm)
    }

    /// Train and validation sets from a directory with the standard file names.
    pub fn load_mnist(dir: impl AsRef<Path>, norm: Normalization) -> Result<(Self, Self)> {
        let dir = dir.as_ref();
        let train = Dataset::load(dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS), norm)?;
        let val = Dataset::load(dir.join(TEST_IMAGES), dir.join(TEST_LABELS), norm)?;
        Ok((train, val))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0; N_CLASSES];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Images and labels at `indices`, in the given order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let [c, h, w] = self.sample_shape();
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        for &i in indices {
            data.extend_from_slice(self.images.outer(i));
        }
        let images = Tensor::new(vec![indices.len(), c, h, w], data).expect("shape matches gathered data");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.gather(indices);
        Dataset { images, labels }
    }
}

/// Deterministic stratified sample of `n` items.
///
/// Per-class quotas follow the largest-remainder method, so each class
/// receives its proportional share rounded up or down. Within a class the
/// members are drawn by a seeded shuffle. The result keeps the original
/// relative order, so `n = N` returns the dataset unchanged.
pub fn subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    let total = ds.len();
    if n > total {
        return Err(Error::Input(format!("subset of {n} from {total} items")));
    }
    if n == total {
        return Ok(ds.clone());
    }
    let counts = ds.class_counts();
    let mut quota = [0usize; N_CLASSES];
    let mut remainders: Vec<(usize, usize)> = Vec::with_capacity(N_CLASSES);
    for (k, &c) in counts.iter().enumerate() {
        let scaled = n * c;
        quota[k] = scaled / total;
        remainders.push((scaled % total, k));
    }
    let short = n - quota.iter().sum::<usize>();
    // Largest remainder first; lower class index breaks ties.
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, k) in remainders.iter().take(short) {
        quota[k] += 1;
    }

    let mut rng = rng::stream(seed, Stream::Subset);
    let mut chosen = Vec::with_capacity(n);
    for (k, &q) in quota.iter().enumerate() {
        let mut members: Vec<usize> = (0..total).filter(|&i| ds.labels[i] == k).collect();
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..q]);
    }
    chosen.sort_unstable();
    Ok(ds.select(&chosen))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Outcome of checking one line of a digest list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigestCheck {
    pub file: PathBuf,
    pub expected: String,
    /// `None` when the file could not be read.
    pub actual: Option<String>,
}

impl DigestCheck {
    pub fn ok(&self) -> bool {
        self.actual.as_deref() == Some(self.expected.as_str())
    }
}

/// Parses `filename hexdigest` lines; blank lines and `#` comments are skipped.
pub fn parse_digest_list(text: &str) -> Result<Vec<(String, String)>> {
    let mut entries = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(name), Some(digest), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format(format!(
                "digest line {}: expected `filename hexdigest`",
                no + 1
            )));
        };
        if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::Format(format!(
                "digest line {}: `{digest}` is not a SHA-256 hex digest",
                no + 1
            )));
        }
        entries.push((name.to_string(), digest.to_ascii_lowercase()));
    }
    Ok(entries)
}

/// Checks every entry of the digest list at `list`; relative file names are
/// resolved against `base`.
pub fn verify_digests(list: impl AsRef<Path>, base: impl AsRef<Path>) -> Result<Vec<DigestCheck>> {
    let list = list.as_ref();
    let text = fs::read_to_string(list).map_err(|e| Error::io(list, e))?;
    Ok(parse_digest_list(&text)?
        .into_iter()
        .map(|(name, expected)| {
            let file = base.as_ref().join(name);
            let actual = fs::read(&file).ok().map(|b| sha256_hex(&b));
            DigestCheck { file, expected, actual }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels_file(labels: &[u8]) -> Vec<u8> {
        encode_idx(&Idx::Labels(labels.to_vec()))
    }

    fn balanced(n_per_class: usize) -> Dataset {
        let labels: Vec<usize> = (0..N_CLASSES * n_per_class).map(|i| i % N_CLASSES).collect();
        let n = labels.len();
        let data = (0..n * 4).map(|i| i as f64).collect();
        Dataset::new(Tensor::new(vec![n, 1, 2, 2], data).unwrap(), labels).unwrap()
    }

    #[test]
    fn decodes_labels() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 9];
        assert_eq!(parse_idx(&bytes).unwrap(), Idx::Labels(vec![7, 2, 9]));
    }

    #[test]
    fn rejects_bad_magic() {
        let bytes = [0x12, 0x34, 0x56, 0x78, 0, 0, 0, 0];
        assert!(matches!(parse_idx(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let mut b = labels_file(&[1, 2, 3]);
        b.pop();
        assert!(matches!(parse_idx(&b), Err(Error::Format(_))));
        let mut b = labels_file(&[1, 2, 3]);
        b.push(0);
        assert!(matches!(parse_idx(&b), Err(Error::Format(_))));
        assert!(matches!(parse_idx(&[0, 0, 8, 3, 0, 0]), Err(Error::Format(_))));
    }

    #[test]
    fn images_round_trip() {
        let idx = Idx::Images {
            rows: 2,
            cols: 3,
            pixels: (0..12).collect(),
        };
        let bytes = encode_idx(&idx);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(parse_idx(&bytes).unwrap(), idx);
        assert_eq!(idx.len(), 2);
    }

    #[test]
    fn normalization_endpoints() {
        let n = Normalization::default();
        assert!((n.apply(0) + 0.4242).abs() < 1e-4);
        assert!((n.apply(255) - 2.8215).abs() < 1e-4);
        assert!((n.invert(n.apply(77)) - 77.0).abs() < 1e-12);
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        let img = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(Dataset::new(img.clone(), vec![10]).is_err());
        assert!(Dataset::new(img, vec![1, 2]).is_err());
    }

    #[test]
    fn from_idx_checks_kinds() {
        let l = Idx::Labels(vec![1]);
        assert!(Dataset::from_idx(&l, &l, Normalization::default()).is_err());
    }

    #[test]
    fn subset_identity_at_full_size() {
        let ds = balanced(3);
        assert_eq!(subset(&ds, ds.len(), 9).unwrap(), ds);
    }

    #[test]
    fn subset_one_per_class() {
        let ds = balanced(5);
        let s = subset(&ds, 10, 1).unwrap();
        assert_eq!(s.class_counts(), [1; N_CLASSES]);
        assert_eq!(s, subset(&ds, 10, 1).unwrap());
    }

    #[test]
    fn subset_too_large() {
        let ds = balanced(1);
        assert!(matches!(subset(&ds, 11, 0), Err(Error::Input(_))));
    }

    #[test]
    fn gather_keeps_rows() {
        let ds = balanced(2);
        let (x, y) = ds.gather(&[3, 0]);
        assert_eq!(x.outer(0), ds.images().outer(3));
        assert_eq!(y, vec![3, 0]);
    }

    #[test]
    fn digest_list_parsing() {
        let text = "# comment\n\na.bin  ABCDEF0123456789abcdef0123456789abcdef0123456789abcdef0123456789\n";
        let entries = parse_digest_list(text).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(
            entries[0].1,
            "abcdef0123456789abcdef0123456789abcdef0123456789abcdef0123456789"
        );
        assert!(parse_digest_list("a.bin xyz").is_err());
        assert!(parse_digest_list("a.bin").is_err());
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
