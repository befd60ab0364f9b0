//! MNIST IDX ingestion and deterministic mini-batching.
//!
//! IDX layout (all header words big-endian `u32`):
//!
//! ```text
//! images: 0x00000803 N rows cols | N*rows*cols unsigned bytes, row-major
//! labels: 0x00000801 N           | N unsigned bytes in 0..=9
//! ```
//!
//! Files whose name ends in `.gz` are decompressed transparently.
//!
//! Shuffling uses ChaCha8 (`rand_chacha`) seeded with `seed_from_u64(seed)`
//! and stream number `epoch`, followed by `rand` 0.8's Fisher-Yates
//! `SliceRandom::shuffle`. The permutation of an epoch is therefore a pure
//! function of `(seed, epoch)`.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::Scalar;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated header: need {needed} bytes, file has {found}")]
    TruncatedHeader { needed: usize, found: usize },
    #[error("wrong magic number: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },
    #[error("truncated payload: header declares {expected} bytes, file has {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("corrupt label {value} at index {index}")]
    CorruptLabel { index: usize, value: u8 },
    #[error("batch size {batch_size} is invalid for a dataset of {len} examples")]
    BadBatchSize { batch_size: usize, len: usize },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

/// Undecoded image tensor as stored in an IDX3 file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn image(&self, index: usize) -> &[u8] {
        let len = self.rows * self.cols;
        &self.pixels[index * len..(index + 1) * len]
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io_err)?;
    if path.extension().is_some_and(|ext| ext == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header_words<const N: usize>(bytes: &[u8]) -> Result<[u32; N]> {
    if bytes.len() < 4 * N {
        return Err(DataError::TruncatedHeader {
            needed: 4 * N,
            found: bytes.len(),
        });
    }
    let mut words = [0u32; N];
    for (i, word) in words.iter_mut().enumerate() {
        *word = u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    }
    Ok(words)
}

fn check_payload(declared: usize, payload: &[u8]) -> Result<()> {
    match payload.len().cmp(&declared) {
        std::cmp::Ordering::Less => Err(DataError::TruncatedPayload {
            expected: declared,
            found: payload.len(),
        }),
        std::cmp::Ordering::Greater => Err(DataError::DimensionMismatch(format!(
            "header declares {declared} payload bytes but {} are present",
            payload.len()
        ))),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImages> {
    // Check the magic before demanding the full 16-byte header so that a label
    // file handed to the image loader reports the real problem.
    let [magic] = header_words::<1>(bytes)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::WrongMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let [_, count, rows, cols] = header_words::<4>(bytes)?;
    let (count, rows, cols) = (count as usize, rows as usize, cols as usize);
    if rows == 0 || cols == 0 {
        return Err(DataError::DimensionMismatch(format!(
            "image dimensions {rows}x{cols} must be positive"
        )));
    }
    let declared = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| DataError::DimensionMismatch("declared size overflows".into()))?;
    let payload = &bytes[16..];
    check_payload(declared, payload)?;
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels: payload.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let [magic] = header_words::<1>(bytes)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::WrongMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let [_, count] = header_words::<2>(bytes)?;
    let payload = &bytes[8..];
    check_payload(count as usize, payload)?;
    if let Some((index, &value)) = payload
        .iter()
        .enumerate()
        .find(|(_, &v)| v as usize >= NUM_CLASSES)
    {
        return Err(DataError::CorruptLabel { index, value });
    }
    Ok(payload.to_vec())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<RawImages> {
    parse_idx_images(&read_file(path.as_ref())?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&read_file(path.as_ref())?)
}

/// Maps every pixel `p` to `p / 255` and flattens each image row-major.
pub fn normalize<T: Scalar>(raw: &RawImages) -> Array2<T> {
    let scale = T::of(255.0);
    let features = raw.rows * raw.cols;
    Array2::from_shape_fn((raw.count, features), |(i, j)| {
        T::of(f64::from(raw.pixels[i * features + j])) / scale
    })
}

/// Images and labels of one split. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    images: Array2<T>,
    labels: Vec<u8>,
    split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Array2<T>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(DataError::DimensionMismatch(format!(
                "{} images but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        if let Some((index, &value)) = labels
            .iter()
            .enumerate()
            .find(|(_, &v)| v as usize >= NUM_CLASSES)
        {
            return Err(DataError::CorruptLabel { index, value });
        }
        if images.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
            return Err(DataError::DimensionMismatch(
                "pixel intensities must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            images,
            labels,
            split,
        })
    }

    pub fn from_raw(raw: &RawImages, labels: Vec<u8>, split: Split) -> Result<Self> {
        Self::new(normalize(raw), labels, split)
    }

    /// Loads an image/label file pair (either may be gzip-compressed).
    pub fn load(images: impl AsRef<Path>, labels: impl AsRef<Path>, split: Split) -> Result<Self> {
        let raw = load_idx_images(images)?;
        let labels = load_idx_labels(labels)?;
        Self::from_raw(&raw, labels, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.images.ncols()
    }

    pub fn images(&self) -> ArrayView2<'_, T> {
        self.images.view()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Gathers the given rows into a batch, in the order given.
    pub fn gather(&self, indices: &[usize]) -> Batch<T> {
        Batch {
            x: self.images.select(Axis(0), indices),
            y: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub x: Array2<T>,
    pub y: Vec<u8>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Shuffled order of `0..n` for one epoch.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Lazily gathered batches of one epoch.
pub struct Batches<'a, T> {
    data: &'a Dataset<T>,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl<T: Scalar> Iterator for Batches<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let batch = self.data.gather(&self.order[self.next..end]);
        self.next = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.next).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl<T: Scalar> ExactSizeIterator for Batches<'_, T> {}

fn check_batch_size(batch_size: usize, len: usize) -> Result<()> {
    if batch_size == 0 || batch_size > len {
        return Err(DataError::BadBatchSize { batch_size, len });
    }
    Ok(())
}

/// Batches of one epoch. A trailing partial batch is kept.
pub fn batches<T: Scalar>(
    data: &Dataset<T>,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Batches<'_, T>> {
    check_batch_size(batch_size, data.len())?;
    Ok(Batches {
        data,
        order: epoch_permutation(data.len(), seed, epoch),
        batch_size,
        next: 0,
    })
}

/// Position in an endless stream of epochs. Plain data so it can be
/// checkpointed; the stream it describes is fully determined by its fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CursorState {
    pub seed: u64,
    pub epoch: u64,
    /// Index of the next example within the epoch's permutation.
    pub offset: usize,
}

/// Serves batches epoch after epoch, rolling over to a fresh permutation when
/// one is exhausted.
#[derive(Debug, Clone)]
pub struct BatchCursor {
    state: CursorState,
    batch_size: usize,
    order: Vec<usize>,
}

impl BatchCursor {
    pub fn new<T: Scalar>(data: &Dataset<T>, batch_size: usize, state: CursorState) -> Result<Self> {
        check_batch_size(batch_size, data.len())?;
        if state.offset > data.len() {
            return Err(DataError::DimensionMismatch(format!(
                "cursor offset {} beyond dataset of {}",
                state.offset,
                data.len()
            )));
        }
        Ok(Self {
            order: epoch_permutation(data.len(), state.seed, state.epoch),
            state,
            batch_size,
        })
    }

    pub fn state(&self) -> CursorState {
        self.state
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Next batch; `data` must be the dataset the cursor was built for.
    pub fn next_batch<T: Scalar>(&mut self, data: &Dataset<T>) -> Batch<T> {
        debug_assert_eq!(data.len(), self.order.len());
        if self.state.offset >= self.order.len() {
            self.state.epoch += 1;
            self.state.offset = 0;
            self.order = epoch_permutation(self.order.len(), self.state.seed, self.state.epoch);
        }
        let start = self.state.offset;
        let end = (start + self.batch_size).min(self.order.len());
        self.state.offset = end;
        data.gather(&self.order[start..end])
    }
}
