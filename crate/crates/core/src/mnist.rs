//! MNIST in the IDX container format.
//!
//! IDX is big-endian: a `u32` magic (2051 for 3-d `u8` images, 2049 for 1-d
//! `u8` labels), one `u32` per dimension, then the raw payload. Files ending
//! in `.gz` are decompressed transparently.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::math::{Matrix, Rng};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const CLASSES: usize = 10;
pub const PIXELS: usize = 784;

/// Images scaled to `[0, 1]`, one per row, with optional one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Matrix,
    pub labels: Option<Matrix>,
}

impl Dataset {
    pub fn new(images: Matrix, labels: Option<Matrix>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.rows() != images.rows() {
                return Err(Error::Inconsistent(format!(
                    "{} images but {} labels",
                    images.rows(),
                    l.rows()
                )));
            }
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The first `n` samples in file order.
    pub fn take_subset(&self, n: usize) -> Result<Dataset> {
        if n > self.len() || n == 0 {
            return Err(Error::OutOfBounds {
                index: n,
                len: self.len(),
            });
        }
        if n == self.len() {
            return Ok(self.clone());
        }
        let idx: Vec<usize> = (0..n).collect();
        Ok(Dataset {
            images: self.images.gather_rows(&idx),
            labels: self.labels.as_ref().map(|l| l.gather_rows(&idx)),
        })
    }

    /// One epoch of batches. With `shuffle` the order is a fresh permutation
    /// drawn from `rng`; without it, file order and `rng` is untouched.
    pub fn batches(&self, batch_size: usize, rng: &mut Rng, shuffle: bool) -> Result<Batches<'_>> {
        if batch_size == 0 || self.len() % batch_size != 0 {
            return Err(Error::config(format!(
                "batch size {batch_size} does not divide the {} samples",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        if shuffle {
            rng.shuffle(&mut order);
        }
        Ok(Batches {
            data: self,
            order,
            batch_size,
            next: 0,
        })
    }

    /// Label indices recovered from the one-hot rows.
    pub fn label_indices(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(Matrix::argmax_rows)
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub x: Matrix,
    pub y: Option<Matrix>,
}

impl Batch {
    /// The training target: labels when present, otherwise the input itself.
    pub fn target(&self) -> &Matrix {
        self.y.as_ref().unwrap_or(&self.x)
    }
}

pub struct Batches<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.order.len() {
            return None;
        }
        let indices = self.order[self.next..self.next + self.batch_size].to_vec();
        self.next += self.batch_size;
        Some(Batch {
            x: self.data.images.gather_rows(&indices),
            y: self.data.labels.as_ref().map(|l| l.gather_rows(&indices)),
            indices,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.next) / self.batch_size;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    let res = if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes)
    } else {
        let mut f = file;
        f.read_to_end(&mut bytes)
    };
    res.map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Validates magic and length and returns `(dims, payload)`.
fn parse_idx<'a>(bytes: &'a [u8], magic: u32, ndims: usize, path: &Path) -> Result<(Vec<usize>, &'a [u8])> {
    let header = 4 + 4 * ndims;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: header,
            actual: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: magic,
            actual: found,
        });
    }
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.into(),
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndims).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Inconsistent(format!(
            "{}: {} trailing bytes after the payload",
            path.display(),
            payload.len() - expected
        )));
    }
    Ok((dims, payload))
}

/// Images as an `N × (rows·cols)` matrix with pixels divided by 255.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let (dims, payload) = parse_idx(bytes, IMAGE_MAGIC, 3, path)?;
    let (n, width) = (dims[0], dims[1] * dims[2]);
    if n == 0 || width == 0 {
        return Err(Error::Inconsistent(format!("{}: empty image set", path.display())));
    }
    let data = payload.iter().map(|&p| p as f64 / 255.0).collect();
    Matrix::new(n, width, data)
}

/// Labels as one-hot rows over ten classes.
pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let (dims, payload) = parse_idx(bytes, LABEL_MAGIC, 1, path)?;
    if dims[0] == 0 {
        return Err(Error::Inconsistent(format!("{}: empty label set", path.display())));
    }
    one_hot(payload).map_err(|e| match e {
        Error::Inconsistent(msg) => Error::Inconsistent(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn one_hot(labels: &[u8]) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len().max(1), CLASSES);
    for (r, &l) in labels.iter().enumerate() {
        if l as usize >= CLASSES {
            return Err(Error::Inconsistent(format!("label {l} at row {r} is not a digit")));
        }
        m.set(r, l as usize, 1.0);
    }
    Ok(m)
}

pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let images = parse_images(&read_file(images_path)?, images_path)?;
    let labels = match labels_path {
        Some(p) => Some(parse_labels(&read_file(p)?, p)?),
        None => None,
    };
    Dataset::new(images, labels)
}

/// Serializes images back to IDX. Pixels must be multiples of 1/255.
pub fn encode_images(images: &Matrix, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows * cols != images.cols() {
        return Err(Error::config(format!(
            "{rows}x{cols} images cannot hold {} pixels",
            images.cols()
        )));
    }
    let mut out = Vec::with_capacity(16 + images.data().len());
    for v in [IMAGE_MAGIC, images.rows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for &p in images.data() {
        let scaled = p * 255.0;
        let byte = scaled.round();
        if !(0.0..=255.0).contains(&byte) || (scaled - byte).abs() > 1e-9 {
            return Err(Error::config(format!("pixel {p} is not a multiple of 1/255 in [0, 1]")));
        }
        out.push(byte as u8);
    }
    Ok(out)
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Conventional file names for the four MNIST files, optionally gzipped.
#[derive(Debug, Clone)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

fn locate(dir: &Path, stem: &str) -> Result<PathBuf> {
    let dotted = stem.replacen("-idx", ".idx", 1);
    for name in [stem.to_string(), format!("{stem}.gz"), dotted.clone(), format!("{dotted}.gz")] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    let missing = dir.join(stem);
    Err(Error::io(
        missing,
        std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found (also tried .gz)"),
    ))
}

impl MnistFiles {
    pub fn in_dir(dir: &Path) -> Result<Self> {
        Ok(MnistFiles {
            train_images: locate(dir, "train-images-idx3-ubyte")?,
            train_labels: locate(dir, "train-labels-idx1-ubyte")?,
            test_images: locate(dir, "t10k-images-idx3-ubyte")?,
            test_labels: locate(dir, "t10k-labels-idx1-ubyte")?,
        })
    }

    pub fn load_train(&self) -> Result<Dataset> {
        load_idx(&self.train_images, Some(&self.train_labels))
    }

    pub fn load_test(&self) -> Result<Dataset> {
        load_idx(&self.test_images, Some(&self.test_labels))
    }
}
