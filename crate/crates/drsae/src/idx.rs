//! MNIST IDX files (optionally gzip-compressed).

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use drsae_core::dataset::{split_order, Dataset, LabeledSet};
use drsae_core::Matrix;
use flate2::read::GzDecoder;
use thiserror::Error;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}: truncated header ({found} of {needed} bytes)")]
    TruncatedHeader { file: String, needed: usize, found: usize },
    #[error("{file}: wrong magic 0x{found:08x}, expected 0x{expected:08x}")]
    WrongMagic { file: String, expected: u32, found: u32 },
    #[error("{file}: truncated payload ({found} of {expected} bytes)")]
    TruncatedPayload { file: String, expected: usize, found: usize },
    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{file}: label {label} at item {index} is out of range")]
    LabelOutOfRange { file: String, index: usize, label: u8 },
    #[error("{file}: image {index} is all zeros and cannot be normalized")]
    ZeroImage { file: String, index: usize },
}

/// Raw image block: `count` images of `rows × cols` bytes each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn header<'a>(bytes: &'a [u8], file: &str, magic: u32, dims: usize) -> Result<(Vec<usize>, &'a [u8]), LoadError> {
    let needed = 4 + 4 * dims;
    if bytes.len() < needed {
        return Err(LoadError::TruncatedHeader { file: file.into(), needed, found: bytes.len() });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(LoadError::WrongMagic { file: file.into(), expected: magic, found });
    }
    let sizes = (0..dims).map(|k| be_u32(bytes, 4 + 4 * k) as usize).collect();
    Ok((sizes, &bytes[needed..]))
}

fn payload<'a>(body: &'a [u8], file: &str, expected: usize) -> Result<&'a [u8], LoadError> {
    if body.len() < expected {
        return Err(LoadError::TruncatedPayload { file: file.into(), expected, found: body.len() });
    }
    Ok(&body[..expected])
}

pub fn parse_images(bytes: &[u8], file: &str) -> Result<IdxImages, LoadError> {
    let (sizes, body) = header(bytes, file, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (sizes[0], sizes[1], sizes[2]);
    // A corrupted header can claim more than usize holds.
    let expected = count.checked_mul(rows).and_then(|v| v.checked_mul(cols)).unwrap_or(usize::MAX);
    let pixels = payload(body, file, expected)?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn parse_labels(bytes: &[u8], file: &str) -> Result<Vec<u8>, LoadError> {
    let (sizes, body) = header(bytes, file, LABELS_MAGIC, 1)?;
    Ok(payload(body, file, sizes[0])?.to_vec())
}

/// Reads a file, inflating it when it starts with the gzip signature.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, LoadError> {
    let io = |source| LoadError::Io { path: path.to_path_buf(), source };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Validated images and labels, still as bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSet {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl RawSet {
    pub fn new(images: IdxImages, labels: Vec<u8>, classes: usize, image_file: &str, label_file: &str) -> Result<Self, LoadError> {
        if images.count != labels.len() {
            return Err(LoadError::CountMismatch { images: images.count, labels: labels.len() });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
            return Err(LoadError::LabelOutOfRange { file: label_file.into(), index, label });
        }
        let m = images.rows * images.cols;
        if m > 0 {
            if let Some(index) = images.pixels.chunks_exact(m).position(|img| img.iter().all(|&p| p == 0)) {
                return Err(LoadError::ZeroImage { file: image_file.into(), index });
            }
        }
        Ok(RawSet { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.images.rows * self.images.cols
    }

    /// The given items with pixels scaled to [0, 1] and every image
    /// normalized to unit ℓ₂ norm.
    pub fn select(&self, idx: &[usize]) -> LabeledSet {
        let m = self.input_dim();
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            data.extend(self.images.pixels[i * m..(i + 1) * m].iter().map(|&p| p as f64 / 255.0));
        }
        let inputs = Matrix::from_vec(idx.len(), m, data).expect("sized above");
        let set = LabeledSet { inputs, labels: Some(idx.iter().map(|&i| self.labels[i] as usize).collect()) };
        set.normalized().expect("zero images rejected at construction")
    }

    pub fn all(&self) -> LabeledSet {
        self.select(&(0..self.len()).collect::<Vec<_>>())
    }
}

pub fn load_raw(images_path: &Path, labels_path: &Path, classes: usize) -> Result<RawSet, LoadError> {
    let image_file = images_path.display().to_string();
    let label_file = labels_path.display().to_string();
    let images = parse_images(&read_maybe_gz(images_path)?, &image_file)?;
    let labels = parse_labels(&read_maybe_gz(labels_path)?, &label_file)?;
    RawSet::new(images, labels, classes, &image_file, &label_file)
}

/// Loads an image/label pair, scales pixels to [0, 1] and normalizes every
/// image to unit ℓ₂ norm.
pub fn load_idx(images_path: &Path, labels_path: &Path, classes: usize) -> Result<LabeledSet, LoadError> {
    Ok(load_raw(images_path, labels_path, classes)?.all())
}

/// Train/validation drawn from `pool` by the seeded split, followed by the
/// first `test_count` items of `test` (all when `None`).
pub fn split_raw(
    pool: &RawSet,
    test: &RawSet,
    train_count: usize,
    val_count: usize,
    test_count: Option<usize>,
    seed: u64,
) -> drsae_core::Result<Dataset> {
    let order = split_order(pool.len(), train_count, val_count, seed)?;
    let test_n = test_count.unwrap_or(test.len()).min(test.len());
    let test_set = test.select(&(0..test_n).collect::<Vec<_>>());
    Dataset::assemble(pool.select(&order), &test_set, train_count, val_count)
}

/// The first `k` items of each class among `candidates`, in candidate order.
pub fn first_k_per_class(labels: &[u8], candidates: &[usize], k: usize, classes: usize) -> Vec<usize> {
    let mut taken = vec![0usize; classes];
    candidates
        .iter()
        .copied()
        .filter(|&i| {
            let c = &mut taken[labels[i] as usize];
            *c += 1;
            *c <= k
        })
        .collect()
}

/// Balanced desk-scale subset: the seeded `train_count`/`val_count` split of
/// `pool` is made first, then the first `train_per_class` (`val_per_class`)
/// items of every class are kept from the training (validation) part.
#[allow(clippy::too_many_arguments)]
pub fn split_raw_per_class(
    pool: &RawSet,
    test: &RawSet,
    train_count: usize,
    val_count: usize,
    train_per_class: usize,
    val_per_class: usize,
    test_count: Option<usize>,
    classes: usize,
    seed: u64,
) -> drsae_core::Result<Dataset> {
    let order = split_order(pool.len(), train_count, val_count, seed)?;
    let (train_part, val_part) = order.split_at(train_count);
    let mut idx = first_k_per_class(&pool.labels, train_part, train_per_class, classes);
    let n_train = idx.len();
    idx.extend(first_k_per_class(&pool.labels, val_part, val_per_class, classes));
    let n_val = idx.len() - n_train;
    let test_n = test_count.unwrap_or(test.len()).min(test.len());
    let test_set = test.select(&(0..test_n).collect::<Vec<_>>());
    Dataset::assemble(pool.select(&idx), &test_set, n_train, n_val)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images_bytes(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for w in [IMAGES_MAGIC, count, rows, cols] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn labels_bytes(labels: &[u8]) -> Vec<u8> {
        let mut v = LABELS_MAGIC.to_be_bytes().to_vec();
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn parses_tiny_files() {
        let img = parse_images(&images_bytes(2, 1, 2, &[3, 4, 0, 255]), "i").unwrap();
        let lab = parse_labels(&labels_bytes(&[7, 1]), "l").unwrap();
        let set = RawSet::new(img, lab, 10, "i", "l").unwrap().all();
        assert_eq!(set.labels, Some(vec![7, 1]));
        assert!((set.inputs.get(0, 0) - 0.6).abs() < 1e-15);
        assert_eq!(set.inputs.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn per_class_keeps_candidate_order() {
        let labels = [0, 1, 0, 0, 1, 2, 1];
        assert_eq!(first_k_per_class(&labels, &[6, 5, 4, 3, 2, 1, 0], 2, 3), vec![6, 5, 4, 3, 2]);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(parse_images(&[], "i"), Err(LoadError::TruncatedHeader { found: 0, .. })));
        assert!(matches!(
            parse_images(&labels_bytes(&[1, 2, 3, 4, 5, 6, 7, 8]), "i"),
            Err(LoadError::WrongMagic { expected: IMAGES_MAGIC, found: LABELS_MAGIC, .. })
        ));
        assert!(matches!(parse_images(&images_bytes(2, 2, 2, &[1; 7]), "i"), Err(LoadError::TruncatedPayload { expected: 8, found: 7, .. })));
        let img = parse_images(&images_bytes(1, 1, 1, &[1]), "i").unwrap();
        assert!(matches!(RawSet::new(img.clone(), vec![1, 2], 10, "i", "l"), Err(LoadError::CountMismatch { images: 1, labels: 2 })));
        assert!(matches!(RawSet::new(img, vec![10], 10, "i", "l"), Err(LoadError::LabelOutOfRange { label: 10, .. })));
        let img = parse_images(&images_bytes(1, 1, 1, &[0]), "i").unwrap();
        assert!(matches!(RawSet::new(img, vec![1], 10, "i", "l"), Err(LoadError::ZeroImage { index: 0, .. })));
    }
}
