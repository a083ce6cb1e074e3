//! Datasets: MNIST IDX files and seeded Gaussian blobs.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::{rows_of, Batch};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Environment variable naming the directory that holds the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "CHANNEL_PAC_DATA_DIR";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label: bad, classes });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "in dataset features".into(),
            });
        }
        let features = if features.is_standard_layout() {
            features
        } else {
            features.as_standard_layout().into_owned()
        };
        Ok(Dataset {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("index {i} out of range")));
        }
        Dataset::new(
            rows_of(&self.features.view(), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.classes,
        )
    }

    /// The first `n` samples.
    pub fn first(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        self.select(&(0..n).collect::<Vec<_>>())
    }

    /// `n` samples picked by a seeded shuffle.
    pub fn shuffled_subset(&self, n: usize, rng: &mut Rng) -> Result<Dataset> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut idx);
        idx.truncate(n.min(self.len()));
        self.select(&idx)
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let x = rows_of(&self.features.view(), indices);
        Batch::new(
            Tensor::from_array(x),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            inputs: Tensor::from_array(self.features.clone()),
            labels: self.labels.clone(),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl Reader<'_> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Truncated(format!("{} header", self.what)))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::Truncated(format!(
                "{}: need {n} payload bytes, found {}",
                self.what,
                self.bytes.len() - self.pos
            ))
        })?;
        self.pos = end;
        Ok(chunk)
    }
}

fn expect_magic(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

/// Parses IDX image bytes into `(count, rows * cols, pixels / 255)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array2<f64>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "image file",
    };
    expect_magic(r.u32()?, IMAGE_MAGIC)?;
    let n = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let dim = rows * cols;
    let pixels = r.take(n * dim)?;
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Ok(Array2::from_shape_vec((n, dim), data).expect("length checked"))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "label file",
    };
    expect_magic(r.u32()?, LABEL_MAGIC)?;
    let n = r.u32()? as usize;
    Ok(r.take(n)?.iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image/label pair; pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let features = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if features.nrows() != labels.len() {
        return Err(Error::CountMismatch {
            images: features.nrows(),
            labels: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(features, labels, classes)
}

/// Writes a dataset as IDX files with `rows x cols` images; features are
/// quantized to `round(255 v)`.
pub fn write_idx(
    data: &Dataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != data.dim() {
        return Err(Error::Shape(format!(
            "{rows}x{cols} images need {} features, dataset has {}",
            rows * cols,
            data.dim()
        )));
    }
    let n = u32::try_from(data.len()).map_err(|_| Error::invalid("too many samples for IDX"))?;
    let mut img = Vec::with_capacity(16 + data.len() * data.dim());
    img.extend(IMAGE_MAGIC.to_be_bytes());
    img.extend(n.to_be_bytes());
    img.extend((rows as u32).to_be_bytes());
    img.extend((cols as u32).to_be_bytes());
    img.extend(data.features.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lab = Vec::with_capacity(8 + data.len());
    lab.extend(LABEL_MAGIC.to_be_bytes());
    lab.extend(n.to_be_bytes());
    for &y in &data.labels {
        lab.push(u8::try_from(y).map_err(|_| Error::invalid("IDX labels must fit in a byte"))?);
    }
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

/// Standard MNIST file names inside `dir`.
pub fn mnist_paths(dir: impl AsRef<Path>, split: MnistSplit) -> (PathBuf, PathBuf) {
    let prefix = match split {
        MnistSplit::Train => "train",
        MnistSplit::Test => "t10k",
    };
    let dir = dir.as_ref();
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

pub fn load_mnist(dir: impl AsRef<Path>, split: MnistSplit) -> Result<Dataset> {
    let (images, labels) = mnist_paths(dir, split);
    load_idx(images, labels)
}

/// Data directory from [`DATA_DIR_ENV`], if set.
pub fn data_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

/// Distance of each blob center from the origin.
pub const BLOB_SEPARATION: f64 = 2.0;

/// Class-balanced Gaussian blobs centered at `BLOB_SEPARATION * e_c`.
///
/// Sample `i` belongs to class `i % classes`.
pub fn make_blobs(n: usize, dim: usize, classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 1 || dim < 1 {
        return Err(Error::invalid("blobs need at least one class and one dimension"));
    }
    if n < classes {
        return Err(Error::invalid(format!("n = {n} is smaller than classes = {classes}")));
    }
    if classes > dim {
        return Err(Error::invalid(format!(
            "{classes} simplex vertices do not fit in {dim} dimensions"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::invalid("spread must be finite and non-negative"));
    }
    let mut rng = Rng::named(seed, "blobs");
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut features = Array2::zeros((n, dim));
    for (mut row, &y) in features.rows_mut().into_iter().zip(&labels) {
        for (j, v) in row.iter_mut().enumerate() {
            let center = if j == y { BLOB_SEPARATION } else { 0.0 };
            *v = center + spread * rng.normal();
        }
    }
    Dataset::new(features, labels, classes)
}
