//! MNIST IDX ingestion, SNR-controlled Gaussian noise and synthetic
//! least-squares problems.
//!
//! All randomness comes from [`seeded_rng`], a ChaCha8 stream keyed by an
//! explicit 64-bit seed. Standard normal variates use `rand_distr`'s
//! `StandardNormal` (ziggurat), so a given seed reproduces bit-identical data
//! for a fixed dependency set.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a tag.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Matrix with i.i.d. `N(0, std²)` entries, filled row by row.
pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Matrix {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_row_major(rows, cols, &data).expect("finite gaussian draws")
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated file, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is outside [0, 10)")]
    BadLabel { index: usize, label: u8 },
    #[error("dataset is empty")]
    Empty,
}

/// Images (one per row, pixels in `[0, 1]`) with their digit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Matrix,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` samples (or all of them if there are fewer).
    pub fn truncate(&self, n: usize) -> Dataset {
        let n = n.min(self.len()).max(1);
        let idx: Vec<usize> = (0..n).collect();
        Dataset {
            images: self.images.select_rows(&idx),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// One-hot encoding of the labels, `len × 10`.
    pub fn one_hot(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), 10);
        for (i, &l) in self.labels.iter().enumerate() {
            m[(i, l as usize)] = 1.0;
        }
        m
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            expected: offset + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn payload<'a>(
    bytes: &'a [u8],
    header: usize,
    len: usize,
    path: &Path,
) -> Result<&'a [u8], DataError> {
    bytes
        .get(header..header + len)
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            expected: header + len,
            found: bytes.len(),
        })
}

/// Reads an IDX image/label pair. Pixels are scaled to `[0, 1]` by `/255`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let img = read(images_path)?;
    check_magic(&img, IMAGES_MAGIC, images_path)?;
    let count = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let pixels = rows * cols;
    let raw = payload(&img, 16, count * pixels, images_path)?;

    let lab = read(labels_path)?;
    check_magic(&lab, LABELS_MAGIC, labels_path)?;
    let label_count = be_u32(&lab, 4, labels_path)? as usize;
    let labels = payload(&lab, 8, label_count, labels_path)?.to_vec();

    if count != label_count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    if count == 0 || pixels == 0 {
        return Err(DataError::Empty);
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= 10) {
        return Err(DataError::BadLabel { index, label });
    }
    let images = Matrix::from_fn(count, pixels, |i, j| raw[i * pixels + j] as f64 / 255.0);
    Ok(Dataset { images, labels })
}

/// Writes a dataset in IDX format. Pixels are mapped back to bytes with
/// `round(255 x)`, so datasets loaded by [`load_idx`] round-trip exactly.
pub fn write_idx(
    dataset: &Dataset,
    image_side: (usize, usize),
    images_path: &Path,
    labels_path: &Path,
) -> Result<(), DataError> {
    let (h, w) = image_side;
    assert_eq!(
        h * w,
        dataset.images.cols(),
        "image side does not match pixel count"
    );
    let n = dataset.len();
    let mut img = Vec::with_capacity(16 + n * h * w);
    for v in [IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for i in 0..n {
        for j in 0..h * w {
            img.push((dataset.images[(i, j)].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend_from_slice(&dataset.labels);

    for (path, bytes) in [(images_path, img), (labels_path, lab)] {
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|source| DataError::Io {
                path: path.to_path_buf(),
                source,
            })?;
    }
    Ok(())
}

/// Which MNIST split to read from a data directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads the standard MNIST file pair (`train-*` or `t10k-*`) from `dir`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset, DataError> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Signal-to-noise ratio (signal power over noise power) and noise seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// `f64::INFINITY` means no noise.
    pub snr: f64,
    pub seed: u64,
}

/// Adds white Gaussian noise per image with standard deviation
/// `‖x‖₂ / √(D · snr)`, so the expected noise power is `‖x‖² / snr`.
/// Noisy pixels are not clipped. All-zero images stay noise free.
pub fn add_noise(images: &Matrix, spec: NoiseSpec) -> Matrix {
    assert!(spec.snr > 0.0, "snr must be positive");
    if spec.snr.is_infinite() {
        return images.clone();
    }
    let (n, d) = images.shape();
    let mut rng = seeded_rng(spec.seed);
    let mut out = images.clone();
    for i in 0..n {
        let norm = (0..d)
            .map(|j| images[(i, j)] * images[(i, j)])
            .sum::<f64>()
            .sqrt();
        let std = norm / (d as f64 * spec.snr).sqrt();
        for j in 0..d {
            let g: f64 = rng.sample(StandardNormal);
            out[(i, j)] += std * g;
        }
    }
    out
}

/// Fixed data of `min_W ‖WX − Y‖_F² + λ·penalty(W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LsqProblem {
    /// `m × d`
    pub x: Matrix,
    /// `n × d`
    pub y: Matrix,
}

impl LsqProblem {
    /// `(n, m, d)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.y.rows(), self.x.rows(), self.x.cols())
    }
}

/// Standard normal `X` (`m × d`) then `Y` (`n × d`), drawn from one stream.
pub fn make_lsq_problem(n: usize, m: usize, d: usize, seed: u64) -> LsqProblem {
    assert!(n >= 1 && m >= 1 && d >= 1, "dimensions must be positive");
    let mut rng = seeded_rng(seed);
    let x = gaussian_matrix(m, d, 1.0, &mut rng);
    let y = gaussian_matrix(n, d, 1.0, &mut rng);
    LsqProblem { x, y }
}
