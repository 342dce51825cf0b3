//! Datasets: CIFAR-10 binary ingestion, synthetic desk-scale sets, balanced
//! subsets, shuffled batching and horizontal-flip augmentation.

use std::f32::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_PIXELS;
pub const CIFAR_CLASSES: usize = 10;
const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const CIFAR_TEST_FILE: &str = "test_batch.bin";
const CIFAR_RECORDS_PER_FILE: usize = 10_000;

/// Per-channel affine normalization `(x / 255 - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    /// Published CIFAR-10 training-set channel statistics.
    pub const CIFAR10: Normalization = Normalization {
        mean: [0.4914, 0.4822, 0.4465],
        std: [0.2470, 0.2435, 0.2616],
    };

    pub const IDENTITY: Normalization = Normalization {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    pub fn normalize(&self, byte: u8, channel: usize) -> f32 {
        (byte as f32 / 255.0 - self.mean[channel]) / self.std[channel]
    }

    pub fn denormalize(&self, value: f32, channel: usize) -> u8 {
        ((value * self.std[channel] + self.mean[channel]) * 255.0)
            .round()
            .clamp(0.0, 255.0) as u8
    }
}

/// One raw CIFAR-10 record: a label byte and 3072 channel-major pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    pub pixels: Vec<u8>,
}

pub fn parse_cifar10_records(bytes: &[u8]) -> Result<Vec<CifarRecord>> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::CorruptData(format!(
            "{} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(CIFAR_RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0];
            if label as usize >= CIFAR_CLASSES {
                return Err(Error::CorruptData(format!("record {i} has label {label}")));
            }
            Ok(CifarRecord {
                label,
                pixels: rec[1..].to_vec(),
            })
        })
        .collect()
}

pub fn encode_cifar10_records(records: &[CifarRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD_BYTES);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

/// A labelled image set, already normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub normalization: Normalization,
}

/// A materialized mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Single-sample view `i` as its own batch.
    pub fn sample(&self, i: usize) -> Batch {
        let per = self.images.numel() / self.len();
        let mut shape = self.images.shape().to_vec();
        shape[0] = 1;
        Batch {
            images: Tensor::new(shape, self.images.data()[i * per..(i + 1) * per].to_vec())
                .expect("sample shape"),
            labels: vec![self.labels[i]],
        }
    }

    /// Concatenation of `self` with itself, each sample appearing twice.
    pub fn repeated(&self) -> Batch {
        let mut shape = self.images.shape().to_vec();
        shape[0] *= 2;
        let mut data = self.images.data().to_vec();
        data.extend_from_slice(self.images.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&self.labels);
        Batch {
            images: Tensor::new(shape, data).expect("repeat shape"),
            labels,
        }
    }
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize, normalization: Normalization) -> Result<Self> {
        let (m, _, _, _) = images.dims4()?;
        if m != labels.len() || m == 0 {
            return Err(Error::CorruptData(format!(
                "{m} images but {} labels",
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidLabel {
                label,
                classes: class_count,
            });
        }
        Ok(Self {
            images,
            labels,
            class_count,
            normalization,
        })
    }

    pub fn from_records(records: &[CifarRecord], normalization: Normalization) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::CorruptData("no records".into()));
        }
        let plane = CIFAR_SIDE * CIFAR_SIDE;
        let mut data = Vec::with_capacity(records.len() * CIFAR_PIXELS);
        for r in records {
            if r.pixels.len() != CIFAR_PIXELS {
                return Err(Error::CorruptData(format!(
                    "record has {} pixel bytes",
                    r.pixels.len()
                )));
            }
            data.extend(
                r.pixels
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| normalization.normalize(b, i / plane)),
            );
        }
        let images = Tensor::new(vec![records.len(), 3, CIFAR_SIDE, CIFAR_SIDE], data)?;
        let labels = records.iter().map(|r| r.label as usize).collect();
        Self::new(images, labels, CIFAR_CLASSES, normalization)
    }

    /// Inverse of [`Dataset::from_records`] for 3-channel 32×32 sets.
    pub fn to_records(&self) -> Vec<CifarRecord> {
        let plane = CIFAR_SIDE * CIFAR_SIDE;
        self.images
            .data()
            .chunks(CIFAR_PIXELS)
            .zip(&self.labels)
            .map(|(px, &label)| CifarRecord {
                label: label as u8,
                pixels: px
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| self.normalization.denormalize(v, i / plane))
                    .collect(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let per: usize = self.image_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Batch {
            images: Tensor::new(shape, data).expect("batch shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Class-balanced subset with `per_class` samples of every class, chosen
    /// deterministically from `seed`. Samples keep their original order.
    pub fn subset(&self, per_class: usize, seed: u64) -> Result<Dataset> {
        let hist = self.class_histogram();
        let min = hist.iter().copied().min().unwrap_or(0);
        if per_class == 0 || per_class > min {
            return Err(Error::Config(format!(
                "per-class subset of {per_class} not available (smallest class has {min})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = Vec::with_capacity(per_class * self.class_count);
        for class in 0..self.class_count {
            let mut members: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..per_class]);
        }
        chosen.sort_unstable();
        let b = self.batch(&chosen);
        Dataset::new(b.images, b.labels, self.class_count, self.normalization)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn cifar_root(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join(CIFAR_TEST_FILE).exists() && nested.join(CIFAR_TEST_FILE).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn load_cifar_file(path: &Path) -> Result<Vec<CifarRecord>> {
    let records = parse_cifar10_records(&read_file(path)?)?;
    if records.len() != CIFAR_RECORDS_PER_FILE {
        return Err(Error::CorruptData(format!(
            "{}: {} records, expected {CIFAR_RECORDS_PER_FILE}",
            path.display(),
            records.len()
        )));
    }
    Ok(records)
}

/// Loads the standard binary distribution (`data_batch_{1..5}.bin`,
/// `test_batch.bin`) from `dir` or `dir/cifar-10-batches-bin`.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let root = cifar_root(dir.as_ref());
    let mut train = Vec::with_capacity(5 * CIFAR_RECORDS_PER_FILE);
    for name in CIFAR_TRAIN_FILES {
        train.extend(load_cifar_file(&root.join(name))?);
    }
    let test = load_cifar_file(&root.join(CIFAR_TEST_FILE))?;
    Ok((
        Dataset::from_records(&train, Normalization::CIFAR10)?,
        Dataset::from_records(&test, Normalization::CIFAR10)?,
    ))
}

/// Mirrors each image across its vertical axis with the given probability.
pub fn random_hflip<R: Rng + ?Sized>(images: &mut Tensor, probability: f32, rng: &mut R) -> Result<()> {
    let (n, c, h, w) = images.dims4()?;
    let per = c * h * w;
    let data = images.data_mut();
    for i in 0..n {
        if probability <= 0.0 || rng.gen::<f32>() >= probability {
            continue;
        }
        for row in data[i * per..(i + 1) * per].chunks_mut(w) {
            row.reverse();
        }
    }
    Ok(())
}

/// Shuffled visiting order for one epoch.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    pub order: Vec<usize>,
    pub batch_size: usize,
}

impl BatchPlan {
    pub fn new<R: Rng + ?Sized>(len: usize, batch_size: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        Self {
            order,
            batch_size: batch_size.max(1),
        }
    }

    /// Index chunks; the last one may be short.
    pub fn batches(&self) -> impl Iterator<Item = &[usize]> {
        self.order.chunks(self.batch_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Fixed per-class colour fields plus pixel noise; linearly separable.
    SeparableBlobs,
    /// Oriented sinusoidal gratings with random phase; class means vanish so
    /// no linear read-out of the pixels can separate them.
    StripedPatterns,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable-blobs" => Ok(Self::SeparableBlobs),
            "striped-patterns" => Ok(Self::StripedPatterns),
            other => Err(Error::Config(format!("unknown synthetic dataset '{other}'"))),
        }
    }
}

impl std::fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SeparableBlobs => "separable-blobs",
            Self::StripedPatterns => "striped-patterns",
        })
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f32 {
    let z: f64 = StandardNormal.sample(rng);
    z as f32
}

/// Deterministic 3×32×32 labelled images; labels are balanced within ±1.
pub fn synthetic_dataset(kind: SyntheticKind, size: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || size < classes {
        return Err(Error::Config(format!(
            "synthetic dataset needs size ≥ classes ≥ 1 (got {size}, {classes})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = CIFAR_SIDE;
    let plane = side * side;
    let mut labels: Vec<usize> = (0..size).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(size * CIFAR_PIXELS);
    match kind {
        SyntheticKind::SeparableBlobs => {
            // Smooth prototype per class: a few random low-frequency waves per channel.
            let prototypes: Vec<Vec<f32>> = (0..classes)
                .map(|_| {
                    let mut proto = vec![0.0f32; CIFAR_PIXELS];
                    for ch in 0..3 {
                        for _ in 0..3 {
                            let (fx, fy) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
                            let phase = rng.gen_range(0.0..2.0 * PI);
                            let amp = rng.gen_range(0.3..0.6);
                            for y in 0..side {
                                for x in 0..side {
                                    let t = 2.0 * PI * (fx * x as f32 + fy * y as f32) / side as f32;
                                    proto[ch * plane + y * side + x] += amp * (t + phase).sin();
                                }
                            }
                        }
                    }
                    proto
                })
                .collect();
            for &label in &labels {
                data.extend(prototypes[label].iter().map(|&p| p + 0.8 * normal(&mut rng)));
            }
        }
        SyntheticKind::StripedPatterns => {
            let orientations = classes.div_ceil(2);
            for &label in &labels {
                let angle = PI * (label % orientations) as f32 / orientations as f32;
                let cycles = if label < orientations { 3.0 } else { 6.0 };
                let (dx, dy) = (angle.cos(), angle.sin());
                let phase = rng.gen_range(0.0..2.0 * PI);
                let tint: [f32; 3] = [rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)];
                for &t in &tint {
                    for y in 0..side {
                        for x in 0..side {
                            let u = (dx * x as f32 + dy * y as f32) / side as f32;
                            let v = (2.0 * PI * cycles * u + phase).sin();
                            data.push(t * v + 0.3 * normal(&mut rng));
                        }
                    }
                }
            }
        }
    }
    let images = Tensor::new(vec![size, 3, side, side], data)?;
    Dataset::new(images, labels, classes, Normalization::IDENTITY)
}
