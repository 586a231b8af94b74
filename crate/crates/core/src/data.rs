//! Two-class datasets: CIFAR-10 binary records filtered to a class pair,
//! unlearnable uniform noise, and independently seeded batch streams.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::mix_seed;

pub const CIFAR_RECORD_LEN: usize = 1 + 3072;
pub const CIFAR_IMAGE_SHAPE: [usize; 3] = [3, 32, 32];
pub const CIFAR_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";
/// Fallback location of the CIFAR-10 binary files.
pub const DATA_DIR_ENV: &str = "EARLY_TRANSFER_DATA_DIR";

/// CIFAR-10 class id for a class name (`cat` -> 3) or a numeric id string.
pub fn cifar_class_id(name: &str) -> Result<u8> {
    let name = name.trim().to_ascii_lowercase();
    if let Some(i) = CIFAR_CLASSES.iter().position(|&c| c == name) {
        return Ok(i as u8);
    }
    match name.parse::<u8>() {
        Ok(id) if (id as usize) < CIFAR_CLASSES.len() => Ok(id),
        _ => Err(Error::Config(format!("unknown CIFAR-10 class '{name}'"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Binary-labelled samples, each a flat vector with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    samples: Vec<T>,
    dim: usize,
    labels: Vec<u8>,
    /// Source class ids behind labels 0 and 1.
    class_ids: [u8; 2],
    split: Split,
    /// Position of each sample within its source split.
    origin: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        samples: Vec<T>,
        dim: usize,
        labels: Vec<u8>,
        class_ids: [u8; 2],
        split: Split,
    ) -> Result<Self> {
        if dim == 0 || samples.len() != dim * labels.len() {
            return Err(Error::Input(format!(
                "{} values do not form {} samples of dimension {dim}",
                samples.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Input("labels must be 0 or 1".into()));
        }
        if samples.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::Input("sample values must lie in [0, 1]".into()));
        }
        let origin = (0..labels.len()).collect();
        Ok(Dataset {
            samples,
            dim,
            labels,
            class_ids,
            split,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn class_ids(&self) -> [u8; 2] {
        self.class_ids
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn sample(&self, i: usize) -> &[T] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    /// Contiguous samples `start..end`, flattened.
    pub fn samples_range(&self, start: usize, end: usize) -> &[T] {
        &self.samples[start * self.dim..end * self.dim]
    }

    /// Copy the given samples into one flat batch with their labels.
    pub fn gather(&self, indices: &[usize]) -> (Vec<T>, Vec<usize>) {
        let mut xs = Vec::with_capacity(indices.len() * self.dim);
        let mut ys = Vec::with_capacity(indices.len());
        for &i in indices {
            xs.extend_from_slice(self.sample(i));
            ys.push(self.labels[i] as usize);
        }
        (xs, ys)
    }

    /// New dataset holding the given samples in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset<T> {
        let (samples, _) = self.gather(indices);
        Dataset {
            samples,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_ids: self.class_ids,
            split: self.split,
            origin: indices.iter().map(|&i| self.origin[i]).collect(),
        }
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.len() - ones, ones]
    }
}

/// Parse CIFAR-10 binary records (1 label byte, then 1024 red, 1024 green and
/// 1024 blue row-major pixel bytes), keeping `class_a` as label 0 and
/// `class_b` as label 1. Pixels scale by 1/255. At most `max_per_class`
/// samples of each class are kept, in file order.
pub fn parse_cifar10_records<T: Scalar>(
    bytes: &[u8],
    class_a: u8,
    class_b: u8,
    split: Split,
    max_per_class: Option<usize>,
) -> Result<Dataset<T>> {
    check_class_pair(class_a, class_b)?;
    let whole = bytes.len() / CIFAR_RECORD_LEN * CIFAR_RECORD_LEN;
    if whole != bytes.len() {
        return Err(Error::Format {
            offset: whole as u64,
            message: format!("truncated record: {} trailing bytes", bytes.len() - whole),
        });
    }
    let scale = T::one() / T::of(255.0);
    let cap = max_per_class.unwrap_or(usize::MAX);
    let mut ds = Dataset {
        samples: Vec::new(),
        dim: CIFAR_RECORD_LEN - 1,
        labels: Vec::new(),
        class_ids: [class_a, class_b],
        split,
        origin: Vec::new(),
    };
    let mut counts = [0usize; 2];
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        let id = record[0];
        if id as usize >= CIFAR_CLASSES.len() {
            return Err(Error::Format {
                offset: (i * CIFAR_RECORD_LEN) as u64,
                message: format!("unknown class id {id}"),
            });
        }
        let label = if id == class_a {
            0
        } else if id == class_b {
            1
        } else {
            continue;
        };
        if counts[label] >= cap {
            continue;
        }
        counts[label] += 1;
        ds.samples
            .extend(record[1..].iter().map(|&b| T::of(b as f64) * scale));
        ds.labels.push(label as u8);
        ds.origin.push(i);
    }
    Ok(ds)
}

fn check_class_pair(a: u8, b: u8) -> Result<()> {
    if a as usize >= CIFAR_CLASSES.len() || b as usize >= CIFAR_CLASSES.len() || a == b {
        return Err(Error::Config(format!(
            "need two distinct CIFAR-10 class ids, got {a} and {b}"
        )));
    }
    Ok(())
}

/// Directory holding the CIFAR-10 `.bin` files: `dir` itself or its
/// `cifar-10-batches-bin` child.
pub fn locate_cifar_dir(dir: &Path) -> Result<PathBuf> {
    for candidate in [dir.to_path_buf(), dir.join("cifar-10-batches-bin")] {
        if candidate.join(CIFAR_TEST_FILE).is_file() {
            return Ok(candidate);
        }
    }
    Err(Error::Input(format!(
        "no CIFAR-10 binary files ({CIFAR_TEST_FILE}, data_batch_*.bin) under {}",
        dir.display()
    )))
}

/// Train and test splits for a class pair. `max_train_per_class` caps the
/// training split; the test split is always complete.
pub fn load_cifar10_binary<T: Scalar>(
    dir: &Path,
    class_a: u8,
    class_b: u8,
    max_train_per_class: Option<usize>,
) -> Result<(Dataset<T>, Dataset<T>)> {
    check_class_pair(class_a, class_b)?;
    let dir = locate_cifar_dir(dir)?;
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read(&path).map_err(|e| Error::io(path, e))
    };
    let mut train_bytes = Vec::new();
    for name in CIFAR_TRAIN_FILES {
        let bytes = read(name)?;
        // validate per file so offsets refer to that file
        parse_cifar10_records::<T>(&bytes, class_a, class_b, Split::Train, Some(0)).map_err(
            |e| match e {
                Error::Format { offset, message } => Error::Format {
                    offset,
                    message: format!("{name}: {message}"),
                },
                other => other,
            },
        )?;
        train_bytes.extend(bytes);
    }
    let train = parse_cifar10_records(
        &train_bytes,
        class_a,
        class_b,
        Split::Train,
        max_train_per_class,
    )?;
    let test = parse_cifar10_records(&read(CIFAR_TEST_FILE)?, class_a, class_b, Split::Test, None)
        .map_err(|e| match e {
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{CIFAR_TEST_FILE}: {message}"),
            },
            other => other,
        })?;
    Ok((train, test))
}

/// Uniform `[0, 1)` noise with exactly half the labels 0 and half 1, assigned
/// by a shuffle that never looks at the samples.
pub fn synthetic_noise_dataset<T: Scalar>(
    count: usize,
    dim: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset<T>> {
    if count == 0 || !count.is_multiple_of(2) {
        return Err(Error::Input(format!(
            "synthetic dataset needs a positive even count, got {count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..count * dim).map(|_| T::of(rng.gen::<f64>())).collect();
    let mut labels: Vec<u8> = (0..count).map(|i| u8::from(i >= count / 2)).collect();
    labels.shuffle(&mut rng);
    Dataset::new(samples, dim, labels, [0, 1], split)
}

/// Train/test pair of independent noise draws.
pub fn synthetic_noise_task<T: Scalar>(
    train: usize,
    test: usize,
    dim: usize,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    Ok((
        synthetic_noise_dataset(train, dim, mix_seed(seed, 0), Split::Train)?,
        synthetic_noise_dataset(test, dim, mix_seed(seed, 1), Split::Test)?,
    ))
}

/// Seeded per-epoch reshuffling of `0..len` into batches; the final short
/// batch of an epoch is kept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub seed: u64,
    pub batch_size: usize,
    pub len: usize,
}

/// `BatchPlan` for a dataset of `len` samples.
pub fn shuffled_batches(len: usize, batch_size: usize, seed: u64) -> Result<BatchPlan> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if batch_size > len {
        return Err(Error::Config(format!(
            "batch size {batch_size} exceeds dataset size {len}"
        )));
    }
    Ok(BatchPlan {
        seed,
        batch_size,
        len,
    })
}

impl BatchPlan {
    pub fn epoch_permutation(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, epoch));
        let mut perm: Vec<usize> = (0..self.len).collect();
        perm.shuffle(&mut rng);
        perm
    }

    pub fn epoch_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        self.epoch_permutation(epoch)
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }

    /// Endless stream of batches, epoch after epoch.
    pub fn stream(&self) -> BatchStream {
        BatchStream {
            plan: self.clone(),
            epoch: 0,
            pending: Vec::new(),
        }
    }
}

pub struct BatchStream {
    plan: BatchPlan,
    epoch: u64,
    pending: Vec<Vec<usize>>,
}

impl BatchStream {
    /// Epoch that the next batch belongs to.
    pub fn epoch(&self) -> u64 {
        if self.pending.is_empty() {
            self.epoch
        } else {
            self.epoch - 1
        }
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pending.is_empty() {
            self.pending = self.plan.epoch_batches(self.epoch);
            self.pending.reverse();
            self.epoch += 1;
        }
        self.pending.pop()
    }
}
