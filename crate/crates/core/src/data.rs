//! Dataset ingestion: bit-exact CIFAR-10 binary parsing, per-channel
//! standardization, deterministic subsampling, and synthetic datasets for
//! fast deterministic tests.
//!
//! The CIFAR-10 binary record is 3073 bytes: 1 label byte then 3072 pixel
//! bytes, channel-major (all R, all G, all B), row-major within a channel.
//! Pixels load as `byte / 255.0`. Writing a handle back to that format and
//! re-loading reproduces the bytes exactly.

use std::io::Read as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bytes per CIFAR-10 binary record: 1 label + 3·32·32 pixels.
pub const CIFAR_RECORD_BYTES: usize = 3073;
/// The five training batch files plus the test batch, in canonical order.
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

/// An in-memory dataset: train and test splits of images plus labels.
/// Images are `[N,3,32,32]` for CIFAR-style data or `[N,D]` for synthetic.
#[derive(Clone, Debug)]
pub struct DatasetHandle {
    pub name: String,
    pub num_classes: usize,
    pub train_images: Tensor,
    pub train_labels: Vec<usize>,
    pub test_images: Tensor,
    pub test_labels: Vec<usize>,
}

impl DatasetHandle {
    /// Validates label ranges and image/label count agreement.
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        train_images: Tensor,
        train_labels: Vec<usize>,
        test_images: Tensor,
        test_labels: Vec<usize>,
    ) -> Result<Self> {
        let check = |images: &Tensor, labels: &[usize]| -> Result<()> {
            let n = images.shape().first().copied().unwrap_or(0);
            if n != labels.len() {
                return Err(Error::InvalidArgument(format!(
                    "{n} images but {} labels",
                    labels.len()
                )));
            }
            for (i, &l) in labels.iter().enumerate() {
                if l >= num_classes {
                    return Err(Error::LabelOutOfRange {
                        label: l,
                        classes: num_classes,
                        sample: i,
                    });
                }
            }
            Ok(())
        };
        check(&train_images, &train_labels)?;
        check(&test_images, &test_labels)?;
        Ok(Self {
            name: name.into(),
            num_classes,
            train_images,
            train_labels,
            test_images,
            test_labels,
        })
    }

    pub fn train_len(&self) -> usize {
        self.train_labels.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_labels.len()
    }

    /// Feature shape of one sample (images shape minus the batch axis).
    pub fn sample_shape(&self) -> Vec<usize> {
        self.train_images.shape()[1..].to_vec()
    }

    /// Deterministic subsample: `n_train`/`n_test` samples drawn without
    /// replacement by a seeded shuffle of each split's indices. Stable
    /// across runs and platforms.
    pub fn subset(&self, n_train: usize, n_test: usize, seed: u64) -> Result<DatasetHandle> {
        if n_train > self.train_len() || n_test > self.test_len() {
            return Err(Error::InvalidArgument(format!(
                "subset {n_train}/{n_test} exceeds dataset {}/{}",
                self.train_len(),
                self.test_len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick = |rng: &mut ChaCha8Rng, total: usize, n: usize| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..total).collect();
            idx.shuffle(rng);
            idx.truncate(n);
            idx
        };
        let ti = pick(&mut rng, self.train_len(), n_train);
        let si = pick(&mut rng, self.test_len(), n_test);
        let gather = |images: &Tensor, labels: &[usize], idx: &[usize]| -> (Tensor, Vec<usize>) {
            let stride: usize = images.shape()[1..].iter().product();
            let mut data = Vec::with_capacity(idx.len() * stride);
            let mut out_labels = Vec::with_capacity(idx.len());
            for &i in idx {
                data.extend_from_slice(&images.data()[i * stride..(i + 1) * stride]);
                out_labels.push(labels[i]);
            }
            let mut shape = images.shape().to_vec();
            shape[0] = idx.len();
            (Tensor::new(shape, data).expect("gather preserves layout"), out_labels)
        };
        let (train_images, train_labels) = gather(&self.train_images, &self.train_labels, &ti);
        let (test_images, test_labels) = gather(&self.test_images, &self.test_labels, &si);
        DatasetHandle::new(
            format!("{}_subset{}", self.name, n_train),
            self.num_classes,
            train_images,
            train_labels,
            test_images,
            test_labels,
        )
    }
}

/// Per-class counts of a label list.
pub fn class_histogram(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut hist = vec![0usize; classes];
    for &l in labels {
        if l < classes {
            hist[l] += 1;
        }
    }
    hist
}

/// Parses one CIFAR-10 batch file into (labels, images `[N,3,32,32]`).
pub fn load_cifar10_batch(path: &Path) -> Result<(Vec<usize>, Tensor)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::TruncatedFile {
            path: path.display().to_string(),
            len: bytes.len() as u64,
            record: CIFAR_RECORD_BYTES,
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 3072);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::LabelOutOfRange {
                label,
                classes: 10,
                sample: i,
            });
        }
        labels.push(label);
        data.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok((labels, Tensor::new(vec![n, 3, 32, 32], data)?))
}

/// Loads the standard six-file CIFAR-10 binary layout from a directory and
/// validates the full 50,000/10,000 counts.
pub fn load_cifar10_binary(dir: &Path) -> Result<DatasetHandle> {
    let mut train_labels = Vec::with_capacity(50_000);
    let mut train_data = Vec::with_capacity(50_000 * 3072);
    for file in CIFAR_TRAIN_FILES {
        let (labels, images) = load_cifar10_batch(&dir.join(file))?;
        train_labels.extend(labels);
        train_data.extend_from_slice(images.data());
    }
    if train_labels.len() != 50_000 {
        return Err(Error::InvalidArgument(format!(
            "expected 50,000 training samples, found {}",
            train_labels.len()
        )));
    }
    let (test_labels, test_images) = load_cifar10_batch(&dir.join(CIFAR_TEST_FILE))?;
    if test_labels.len() != 10_000 {
        return Err(Error::InvalidArgument(format!(
            "expected 10,000 test samples, found {}",
            test_labels.len()
        )));
    }
    let train_images = Tensor::new(vec![train_labels.len(), 3, 32, 32], train_data)?;
    DatasetHandle::new(
        "cifar10",
        10,
        train_images,
        train_labels,
        test_images,
        test_labels,
    )
}

/// Writes records in the CIFAR-10 binary format; pixels must already be
/// `[0,1]` floats that came from bytes (the inverse of loading).
pub fn write_cifar10_batch<W: std::io::Write>(
    labels: &[usize],
    images: &Tensor,
    w: &mut W,
) -> Result<()> {
    let n = labels.len();
    if images.shape() != [n, 3, 32, 32] {
        return Err(Error::InvalidArgument(format!(
            "writer expects [{n},3,32,32] images, got {:?}",
            images.shape()
        )));
    }
    for (i, &label) in labels.iter().enumerate() {
        if label >= 10 {
            return Err(Error::LabelOutOfRange {
                label,
                classes: 10,
                sample: i,
            });
        }
        w.write_all(&[label as u8])?;
        let px: Vec<u8> = images.data()[i * 3072..(i + 1) * 3072]
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect();
        w.write_all(&px)?;
    }
    Ok(())
}

/// Standardizes both splits with per-channel mean/std computed on the
/// training split only. Channels are axis 1 for `[N,C,H,W]` images; for
/// `[N,D]` data every feature is its own channel.
pub fn standardize(d: &DatasetHandle) -> Result<DatasetHandle> {
    let shape = d.train_images.shape().to_vec();
    let (channels, inner) = match shape.as_slice() {
        [_, c, h, w] => (*c, h * w),
        [_, dim] => (*dim, 1),
        other => {
            return Err(Error::InvalidArgument(format!(
                "standardize expects [N,C,H,W] or [N,D] images, got {other:?}"
            )))
        }
    };
    let n = shape[0];
    if n == 0 {
        return Err(Error::EmptySplit);
    }
    let mut stats = Vec::with_capacity(channels);
    for c in 0..channels {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for s in 0..n {
            let base = (s * channels + c) * inner;
            for &v in &d.train_images.data()[base..base + inner] {
                sum += v;
                sum_sq += v * v;
            }
        }
        let count = (n * inner) as f64;
        let mean = sum / count;
        let var = (sum_sq / count - mean * mean).max(0.0);
        let std = var.sqrt();
        if std < 1e-8 {
            return Err(Error::ZeroVariance { channel: c, std });
        }
        stats.push((mean, std));
    }
    let apply = |images: &Tensor| -> Tensor {
        let mut out = images.clone();
        let total = out.len();
        let data = out.data_mut();
        for i in 0..total {
            let c = (i / inner) % channels;
            let (mean, std) = stats[c];
            data[i] = (data[i] - mean) / std;
        }
        out
    };
    DatasetHandle::new(
        d.name.clone(),
        d.num_classes,
        apply(&d.train_images),
        d.train_labels.clone(),
        apply(&d.test_images),
        d.test_labels.clone(),
    )
}

/// Synthetic dataset families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Two Gaussian clusters separated by 6σ — linearly separable.
    Blobs,
    /// 2-D XOR: four clusters where the label is the quadrant parity —
    /// not linearly separable.
    Xor,
}

/// Builds a deterministic 2-D synthetic dataset with `n` training samples
/// and `n/4` (min 2) test samples; labels are balanced within ±1.
pub fn make_synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Result<DatasetHandle> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "synthetic datasets need n >= 2".into(),
        ));
    }
    let n_test = (n / 4).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen_split = |count: usize| -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(count * 2);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let (cx, cy, label) = match kind {
                SyntheticKind::Blobs => {
                    // Centers at ±3/√2·(1,1): separation 6 with σ = 1.
                    let a = 3.0 / std::f64::consts::SQRT_2;
                    if i % 2 == 0 {
                        (-a, -a, 0)
                    } else {
                        (a, a, 1)
                    }
                }
                SyntheticKind::Xor => {
                    // Quadrant round-robin; label 1 on sign-mismatch quadrants.
                    let (sx, sy) = [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)][i % 4];
                    (sx, sy, if sx * sy < 0.0 { 1 } else { 0 })
                }
            };
            let sigma = match kind {
                SyntheticKind::Blobs => 1.0,
                SyntheticKind::Xor => 0.2,
            };
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            data.push(cx + sigma * dx);
            data.push(cy + sigma * dy);
            labels.push(label);
        }
        (
            Tensor::new(vec![count, 2], data).expect("consistent layout"),
            labels,
        )
    };
    let (train_images, train_labels) = gen_split(n);
    let (test_images, test_labels) = gen_split(n_test);
    let name = match kind {
        SyntheticKind::Blobs => "blobs",
        SyntheticKind::Xor => "xor",
    };
    DatasetHandle::new(
        name,
        2,
        train_images,
        train_labels,
        test_images,
        test_labels,
    )
}

/// Deterministic 10-class synthetic *image* dataset (`[N,3,H,W]`): each
/// class is an oriented sinusoidal grating plus Gaussian pixel noise.
/// Stand-in data for exercising the conv pipeline when no real images are
/// on disk.
pub fn make_synthetic_images(
    n_train: usize,
    n_test: usize,
    side: usize,
    noise: f64,
    seed: u64,
) -> Result<DatasetHandle> {
    if n_train < 10 || n_test < 10 || side < 4 {
        return Err(Error::InvalidArgument(
            "synthetic images need n_train,n_test >= 10 and side >= 4".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen_split = |count: usize| -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(count * 3 * side * side);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % 10;
            // Class-specific spatial frequency pair and phase.
            let fx = 1.0 + (class % 5) as f64;
            let fy = 1.0 + (class / 5) as f64 * 2.0;
            let phase = class as f64 * 0.7;
            let jitter: f64 = rng.random::<f64>() * 0.5;
            for c in 0..3 {
                let chan_gain = 0.6 + 0.2 * c as f64;
                for y in 0..side {
                    for x in 0..side {
                        let t = std::f64::consts::TAU
                            * (fx * x as f64 + fy * y as f64)
                            / side as f64;
                        let signal = 0.5 + 0.4 * chan_gain * (t + phase + jitter).sin();
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        data.push(signal + noise * eps);
                    }
                }
            }
            labels.push(class);
        }
        (
            Tensor::new(vec![count, 3, side, side], data).expect("consistent layout"),
            labels,
        )
    };
    let (train_images, train_labels) = gen_split(n_train);
    let (test_images, test_labels) = gen_split(n_test);
    DatasetHandle::new(
        "synth_images",
        10,
        train_images,
        train_labels,
        test_images,
        test_labels,
    )
}

/// Writes one split as CSV `label,f0,f1,...` (rank-2 feature data only).
pub fn write_features_csv<W: std::io::Write>(
    images: &Tensor,
    labels: &[usize],
    w: &mut W,
) -> Result<()> {
    let [n, d] = images.shape() else {
        return Err(Error::InvalidArgument(format!(
            "CSV export expects [N,D] features, got {:?}",
            images.shape()
        )));
    };
    let (n, d) = (*n, *d);
    write!(w, "label")?;
    for j in 0..d {
        write!(w, ",f{j}")?;
    }
    writeln!(w)?;
    for i in 0..n {
        write!(w, "{}", labels[i])?;
        for j in 0..d {
            write!(w, ",{}", images.data()[i * d + j])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Resolves the CIFAR-10 data directory: `$SORTNET_DATA_DIR` if set,
/// otherwise `./data`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os("SORTNET_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// True when all six CIFAR-10 binary files exist under `dir`.
pub fn cifar10_present(dir: &Path) -> bool {
    CIFAR_TRAIN_FILES
        .iter()
        .chain(std::iter::once(&CIFAR_TEST_FILE))
        .all(|f| dir.join(f).is_file())
}
