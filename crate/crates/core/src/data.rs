//! Dataset loaders (CIFAR-10 binary, MNIST IDX), synthetic blobs, and
//! train-time augmentation.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, StreamDomain, Tensor};

pub const CIFAR_RECORD: usize = 3073;
const CIFAR_SIDE: usize = 32;
const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
const STATS_FILE: &str = "saflab-channel-stats.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cifar10,
    Mnist,
    Synth,
}

impl DatasetKind {
    pub fn default_augment(self) -> bool {
        self == DatasetKind::Cifar10
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Mnist => "mnist",
            DatasetKind::Synth => "synth",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            "mnist" => Ok(DatasetKind::Mnist),
            "synth" => Ok(DatasetKind::Synth),
            "cifar100" | "cifar-100" | "imagenet" | "imagenet2012" => Err(Error::Config(format!(
                "dataset {s:?} is not supported; use cifar10, mnist or synth"
            ))),
            _ => Err(Error::Config(format!("unknown dataset {s:?} (expected cifar10|mnist|synth)"))),
        }
    }
}

/// Per-channel standardisation constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    /// Population mean/std per channel of `[N, C, H, W]` images, in f64.
    pub fn compute(images: &Tensor) -> Self {
        let shape = images.shape();
        let (n, c) = (shape[0], shape[1]);
        let plane: usize = shape[2..].iter().product();
        let mut mean = Vec::with_capacity(c);
        let mut std = Vec::with_capacity(c);
        for ch in 0..c {
            let (mut s, mut s2) = (0.0f64, 0.0f64);
            for i in 0..n {
                for &v in &images.data()[(i * c + ch) * plane..][..plane] {
                    s += v as f64;
                    s2 += (v as f64) * (v as f64);
                }
            }
            let count = (n * plane) as f64;
            let m = s / count;
            mean.push(m as f32);
            std.push(((s2 / count - m * m).max(0.0)).sqrt().max(1e-8) as f32);
        }
        ChannelStats { mean, std }
    }

    pub fn apply(&self, images: &mut Tensor) {
        let c = images.shape()[1];
        let plane: usize = images.shape()[2..].iter().product();
        for (i, v) in images.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            *v = (*v - self.mean[ch]) / self.std[ch];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: DatasetKind,
    pub split: Split,
    /// `[N, C, H, W]`
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Standardisation already applied to `images`, if any.
    pub normalization: Option<ChannelStats>,
}

impl Dataset {
    pub fn new(
        name: DatasetKind,
        split: Split,
        images: Tensor,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::dim(format!("images must be [N, C, H, W], got {:?}", images.shape())));
        }
        if labels.is_empty() || images.shape()[0] != labels.len() {
            return Err(Error::input(format!(
                "{} images vs {} labels (both must be positive and equal)",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::input(format!("label {bad} outside 0..{class_count}")));
        }
        Ok(Dataset {
            name,
            split,
            images,
            labels,
            class_count,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape `[C, H, W]`.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// First `n` samples (all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len()).max(1);
        Dataset {
            name: self.name,
            split: self.split,
            images: self.images.slice_outer(0, n).expect("in range"),
            labels: self.labels[..n].to_vec(),
            class_count: self.class_count,
            normalization: self.normalization.clone(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let images = self.images.gather_outer(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((images, labels))
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// Parsed CIFAR-10 binary records, bytes kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarBatch {
    pub labels: Vec<u8>,
    /// 3072 bytes per record: R, G, B planes of 32x32, row-major.
    pub pixels: Vec<u8>,
}

impl CifarBatch {
    pub fn parse(bytes: &[u8], context: &str) -> Result<Self> {
        if bytes.len() % CIFAR_RECORD != 0 {
            let offset = (bytes.len() / CIFAR_RECORD * CIFAR_RECORD) as u64;
            return Err(Error::format(
                context,
                offset,
                format!("truncated record ({} trailing bytes)", bytes.len() % CIFAR_RECORD),
            ));
        }
        let n = bytes.len() / CIFAR_RECORD;
        let mut labels = Vec::with_capacity(n);
        let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
        for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            if rec[0] > 9 {
                return Err(Error::format(context, (i * CIFAR_RECORD) as u64, format!("label byte {}", rec[0])));
            }
            labels.push(rec[0]);
            pixels.extend_from_slice(&rec[1..]);
        }
        Ok(CifarBatch { labels, pixels })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.labels.len() * CIFAR_RECORD);
        for (label, px) in self.labels.iter().zip(self.pixels.chunks_exact(CIFAR_PIXELS)) {
            out.push(*label);
            out.extend_from_slice(px);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Unstandardised dataset with pixels scaled to `[0, 1]`.
    pub fn to_dataset(&self, split: Split) -> Result<Dataset> {
        let images = Tensor::new(
            vec![self.len(), 3, CIFAR_SIDE, CIFAR_SIDE],
            self.pixels.iter().map(|&b| b as f32 / 255.0).collect(),
        )?;
        Dataset::new(
            DatasetKind::Cifar10,
            split,
            images,
            self.labels.iter().map(|&l| l as usize).collect(),
            10,
        )
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn cifar_files(dir: &Path, split: Split) -> Vec<PathBuf> {
    match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    }
}

/// Raw CIFAR-10 split in `[0, 1]`, no standardisation.
pub fn load_cifar10_raw(dir: &Path, split: Split) -> Result<Dataset> {
    let mut all = CifarBatch {
        labels: Vec::new(),
        pixels: Vec::new(),
    };
    for path in cifar_files(dir, split) {
        let bytes = read_file(&path)?;
        let batch = CifarBatch::parse(&bytes, &path.display().to_string())?;
        all.labels.extend(batch.labels);
        all.pixels.extend(batch.pixels);
    }
    all.to_dataset(split)
}

/// Training-split channel statistics, cached next to the data when the
/// directory is writable.
pub fn cifar10_channel_stats(dir: &Path) -> Result<ChannelStats> {
    let cache = dir.join(STATS_FILE);
    if let Ok(text) = fs::read_to_string(&cache) {
        if let Ok(stats) = serde_json::from_str::<ChannelStats>(&text) {
            return Ok(stats);
        }
    }
    let stats = ChannelStats::compute(&load_cifar10_raw(dir, Split::Train)?.images);
    // a read-only data directory just means recomputing next time
    let _ = fs::write(&cache, serde_json::to_string_pretty(&stats).unwrap_or_default());
    Ok(stats)
}

/// CIFAR-10 split, scaled to `[0, 1]` and standardised with training-split
/// channel statistics (recorded in `Dataset::normalization`).
pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    let mut ds = load_cifar10_raw(dir, split)?;
    let stats = cifar10_channel_stats(dir)?;
    stats.apply(&mut ds.images);
    ds.normalization = Some(stats);
    Ok(ds)
}

fn be_u32(bytes: &[u8], offset: usize, context: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(context, offset as u64, "truncated header"))
}

/// `[N, 1, rows, cols]` in `[0, 1]` from an IDX3 image file.
pub fn parse_idx_images(bytes: &[u8], context: &str) -> Result<Tensor> {
    let magic = be_u32(bytes, 0, context)?;
    if magic != 0x0000_0803 {
        return Err(Error::format(context, 0, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, context)? as usize;
    let rows = be_u32(bytes, 8, context)? as usize;
    let cols = be_u32(bytes, 12, context)? as usize;
    let need = n * rows * cols;
    let body = bytes
        .get(16..16 + need)
        .ok_or_else(|| Error::format(context, 16, format!("expected {need} pixel bytes, found {}", bytes.len() - 16)))?;
    Tensor::new(vec![n, 1, rows, cols], body.iter().map(|&b| b as f32 / 255.0).collect())
}

pub fn parse_idx_labels(bytes: &[u8], context: &str) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, context)?;
    if magic != 0x0000_0801 {
        return Err(Error::format(context, 0, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, context)? as usize;
    let body = bytes
        .get(8..8 + n)
        .ok_or_else(|| Error::format(context, 8, format!("expected {n} label bytes")))?;
    Ok(body.iter().map(|&b| b as usize).collect())
}

fn find_idx(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        plain
    } else {
        dir.join(format!("{stem}.gz"))
    }
}

/// MNIST from `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`; pixels in `[0, 1]`.
pub fn load_mnist_idx(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let img_path = find_idx(dir, &format!("{prefix}-images-idx3-ubyte"));
    let lbl_path = find_idx(dir, &format!("{prefix}-labels-idx1-ubyte"));
    let images = parse_idx_images(&read_file(&img_path)?, &img_path.display().to_string())?;
    let labels = parse_idx_labels(&read_file(&lbl_path)?, &lbl_path.display().to_string())?;
    let class_count = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(DatasetKind::Mnist, split, images, labels, class_count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    /// Distance between class centres in units of the per-axis noise sigma
    /// (exact for two classes, typical for more).
    pub separation: f32,
    pub seed: u64,
}

/// Gaussian blobs, shape `[N, 1, 1, dim]`, sample `i` belongs to class `i % classes`.
///
/// Centres are `+-separation/2` along one random direction for two classes,
/// otherwise random directions at radius `separation / sqrt(2)`. The train
/// and test splits share centres and differ in noise.
pub fn synth_blobs(spec: &SynthSpec, split: Split) -> Result<Dataset> {
    if spec.classes < 2 || spec.dim == 0 || spec.n_per_class == 0 {
        return Err(Error::Config("synth needs classes >= 2, dim >= 1, n_per_class >= 1".into()));
    }
    let mut center_rng = Rng::stream(spec.seed, StreamDomain::Synth, 0);
    let unit = |rng: &mut Rng| {
        let v: Vec<f32> = (0..spec.dim).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / norm).collect::<Vec<f32>>()
    };
    let centers: Vec<Vec<f32>> = if spec.classes == 2 {
        let u = unit(&mut center_rng);
        let half = spec.separation / 2.0;
        vec![u.iter().map(|x| -x * half).collect(), u.iter().map(|x| x * half).collect()]
    } else {
        let radius = spec.separation / std::f32::consts::SQRT_2;
        (0..spec.classes)
            .map(|_| unit(&mut center_rng).into_iter().map(|x| x * radius).collect())
            .collect()
    };
    let stream = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut noise = Rng::stream(spec.seed, StreamDomain::Synth, stream);
    let n = spec.classes * spec.n_per_class;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.classes;
        labels.push(class);
        data.extend(centers[class].iter().map(|&c| c + noise.normal()));
    }
    Dataset::new(
        DatasetKind::Synth,
        split,
        Tensor::new(vec![n, 1, 1, spec.dim], data)?,
        labels,
        spec.classes,
    )
}

/// Per-sample augmentation decisions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentPlan {
    pub flips: Vec<bool>,
    /// Crop origin inside the zero-padded image, each in `[0, 2 * pad]`.
    pub offsets: Vec<(usize, usize)>,
    pub pad: usize,
}

impl AugmentPlan {
    pub const PAD: usize = 4;

    /// Horizontal flip with probability 0.5 and a uniform 4-pixel pad-and-crop offset.
    pub fn sample(batch: usize, rng: &mut Rng) -> Self {
        let mut flips = Vec::with_capacity(batch);
        let mut offsets = Vec::with_capacity(batch);
        for _ in 0..batch {
            flips.push(rng.bernoulli(0.5));
            offsets.push((rng.below(2 * Self::PAD + 1), rng.below(2 * Self::PAD + 1)));
        }
        AugmentPlan { flips, offsets, pad: Self::PAD }
    }

    pub fn flips_only(flips: Vec<bool>) -> Self {
        let offsets = vec![(0, 0); flips.len()];
        AugmentPlan { flips, offsets, pad: 0 }
    }

    pub fn apply(&self, batch: &Tensor) -> Result<Tensor> {
        let &[n, c, h, w] = batch.shape() else {
            return Err(Error::dim(format!("augmentation needs [N, C, H, W], got {:?}", batch.shape())));
        };
        if self.flips.len() != n || self.offsets.len() != n {
            return Err(Error::dim(format!("plan for {} samples, batch of {n}", self.flips.len())));
        }
        let mut out = Tensor::zeros(batch.shape());
        let pad = self.pad as isize;
        for s in 0..n {
            let (oy, ox) = self.offsets[s];
            for ch in 0..c {
                let base = (s * c + ch) * h * w;
                for y in 0..h {
                    let sy = y as isize + oy as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + ox as isize - pad;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let sx = if self.flips[s] { w - 1 - sx as usize } else { sx as usize };
                        out.data_mut()[base + y * w + x] = batch.data()[base + sy as usize * w + sx];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Random flip plus pad-and-crop per sample; identity when `enabled` is false.
pub fn augment_train(batch: &Tensor, rng: &mut Rng, enabled: bool) -> Result<Tensor> {
    if !enabled {
        return Ok(batch.clone());
    }
    AugmentPlan::sample(batch.shape()[0], rng).apply(batch)
}

/// Serializable description of where a dataset comes from, enough to reload
/// it for a replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    /// Blob parameters; required for `synth`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    /// Keep only the first `n` samples of each split; always serialized so
    /// manifests show whether a run used the full split.
    #[serde(default)]
    pub subset: Option<usize>,
}

impl DatasetSource {
    pub fn directory(kind: DatasetKind, dir: impl Into<PathBuf>) -> Self {
        DatasetSource { kind, data_dir: Some(dir.into()), synth: None, subset: None }
    }

    pub fn synthetic(spec: SynthSpec) -> Self {
        DatasetSource { kind: DatasetKind::Synth, data_dir: None, synth: Some(spec), subset: None }
    }

    pub fn with_subset(mut self, subset: Option<usize>) -> Self {
        self.subset = subset;
        self
    }

    pub fn load(&self, split: Split) -> Result<Dataset> {
        let dir = || {
            self.data_dir
                .as_deref()
                .ok_or_else(|| Error::Config(format!("dataset {} needs a data directory", self.kind)))
        };
        let ds = match self.kind {
            DatasetKind::Cifar10 => load_cifar10(dir()?, split)?,
            DatasetKind::Mnist => load_mnist_idx(dir()?, split)?,
            DatasetKind::Synth => {
                let spec = self.synth.as_ref().ok_or_else(|| Error::Config("synth dataset needs blob parameters".into()))?;
                synth_blobs(spec, split)?
            }
        };
        Ok(match self.subset {
            Some(n) => ds.take(n),
            None => ds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_cifar(n: usize, seed: u64) -> Vec<u8> {
        let mut rng = Rng::new(seed);
        let mut out = Vec::new();
        for i in 0..n {
            out.push((i % 10) as u8);
            out.extend((0..CIFAR_PIXELS).map(|_| rng.below(256) as u8));
        }
        out
    }

    #[test]
    fn cifar_records_parse_and_reserialize() {
        let mut bytes = fake_cifar(12, 1);
        bytes[0] = 6;
        bytes[1] = 255;
        let batch = CifarBatch::parse(&bytes, "mem").unwrap();
        assert_eq!(batch.labels[0], 6);
        assert_eq!(batch.to_bytes(), bytes);
        let ds = batch.to_dataset(Split::Test).unwrap();
        assert_eq!(ds.images.shape(), &[12, 3, 32, 32]);
        assert_eq!(ds.labels[0], 6);
        assert_eq!(ds.images.data()[0], 1.0);
    }

    #[test]
    fn truncated_cifar_reports_offset() {
        let bytes = fake_cifar(2, 2);
        match CifarBatch::parse(&bytes[..CIFAR_RECORD + 100], "t").unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, CIFAR_RECORD as u64),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn cifar_directory_load_and_standardization() {
        let dir = tempfile::tempdir().unwrap();
        for i in 1..=5 {
            fs::write(dir.path().join(format!("data_batch_{i}.bin")), fake_cifar(20, i)).unwrap();
        }
        fs::write(dir.path().join("test_batch.bin"), fake_cifar(10, 9)).unwrap();
        let train = load_cifar10(dir.path(), Split::Train).unwrap();
        assert_eq!(train.len(), 100);
        let stats = ChannelStats::compute(&train.images);
        for ch in 0..3 {
            assert!(stats.mean[ch].abs() < 1e-3, "{:?}", stats);
            assert!((stats.std[ch] - 1.0).abs() < 1e-2, "{:?}", stats);
        }
        assert!(dir.path().join(STATS_FILE).exists());
        let test = load_cifar10(dir.path(), Split::Test).unwrap();
        assert_eq!(test.normalization, train.normalization);
        assert_eq!(test.label_histogram(), vec![1; 10]);
        let err = load_cifar10(&dir.path().join("missing"), Split::Test).unwrap_err();
        assert_eq!(err.category(), "io");
    }

    fn idx_images(n: usize, fill: u8) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [0x803u32, n as u32, 28, 28] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend(std::iter::repeat_n(fill, n * 784));
        out
    }

    #[test]
    fn idx_parsing() {
        let t = parse_idx_images(&idx_images(3, 0), "img").unwrap();
        assert_eq!(t.shape(), &[3, 1, 28, 28]);
        assert!(t.data().iter().all(|&v| v == 0.0));
        let mut labels = Vec::new();
        labels.extend_from_slice(&0x801u32.to_be_bytes());
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[7, 0, 9]);
        assert_eq!(parse_idx_labels(&labels, "lbl").unwrap(), vec![7, 0, 9]);
        labels[3] = 0x03;
        assert_eq!(parse_idx_labels(&labels, "lbl").unwrap_err().category(), "format");
        assert!(parse_idx_images(&labels, "img").is_err());
        let mut short = idx_images(3, 1);
        short.truncate(100);
        assert!(parse_idx_images(&short, "img").is_err());
    }

    #[test]
    fn dataset_name_parsing() {
        assert_eq!("CIFAR10".parse::<DatasetKind>().unwrap(), DatasetKind::Cifar10);
        let err = "cifar100".parse::<DatasetKind>().unwrap_err();
        assert!(err.to_string().contains("not supported"));
        assert!("imagenet".parse::<DatasetKind>().is_err());
    }

    #[test]
    fn synth_blobs_are_deterministic_and_balanced() {
        let spec = SynthSpec { classes: 3, n_per_class: 40, dim: 5, separation: 8.0, seed: 3 };
        let a = synth_blobs(&spec, Split::Train).unwrap();
        assert_eq!(a, synth_blobs(&spec, Split::Train).unwrap());
        assert_eq!(a.label_histogram(), vec![40; 3]);
        assert_ne!(a.images, synth_blobs(&spec, Split::Test).unwrap().images);
        assert!(synth_blobs(&SynthSpec { classes: 1, ..spec }, Split::Train).is_err());
    }

    #[test]
    fn two_blobs_at_ten_sigma_are_linearly_separable() {
        let spec = SynthSpec { classes: 2, n_per_class: 500, dim: 8, separation: 10.0, seed: 12 };
        let ds = synth_blobs(&spec, Split::Train).unwrap();
        // the centre difference direction separates the classes with margin
        let rows: Vec<&[f32]> = ds.images.data().chunks(8).collect();
        let mean = |c: usize| -> Vec<f32> {
            let mut m = vec![0.0; 8];
            for (r, &l) in rows.iter().zip(&ds.labels) {
                if l == c {
                    m.iter_mut().zip(r.iter()).for_each(|(a, b)| *a += b / 500.0);
                }
            }
            m
        };
        let (m0, m1) = (mean(0), mean(1));
        let dir: Vec<f32> = m1.iter().zip(&m0).map(|(a, b)| a - b).collect();
        let mid: f32 = m1.iter().zip(&m0).zip(&dir).map(|((a, b), d)| 0.5 * (a + b) * d).sum();
        let norm = dir.iter().map(|d| d * d).sum::<f32>().sqrt();
        let mut worst = f32::INFINITY;
        for (r, &l) in rows.iter().zip(&ds.labels) {
            let s = (r.iter().zip(&dir).map(|(x, d)| x * d).sum::<f32>() - mid) / norm;
            let signed = if l == 1 { s } else { -s };
            worst = worst.min(signed);
        }
        assert!(worst > 0.5, "margin {worst}");
    }

    #[test]
    fn augmentation_properties() {
        let mut rng = Rng::new(4);
        let batch = Tensor::new(vec![3, 2, 5, 6], rng.uniform(180).into_data()).unwrap();
        let plan = AugmentPlan::flips_only(vec![true, false, true]);
        let twice = plan.apply(&plan.apply(&batch).unwrap()).unwrap();
        assert_eq!(twice, batch);
        assert_eq!(augment_train(&batch, &mut rng, false).unwrap(), batch);
        for _ in 0..50 {
            let plan = AugmentPlan::sample(3, &mut rng);
            assert!(plan.offsets.iter().all(|&(y, x)| y <= 8 && x <= 8));
        }
        // centred crop without flip is the identity
        let centred = AugmentPlan { flips: vec![false; 3], offsets: vec![(4, 4); 3], pad: 4 };
        assert_eq!(centred.apply(&batch).unwrap(), batch);
        // shifting by the full pad moves content and zero-fills
        let shifted = AugmentPlan { flips: vec![false; 3], offsets: vec![(4, 5); 3], pad: 4 };
        let out = shifted.apply(&batch).unwrap();
        assert_eq!(out.data()[0], batch.data()[1]);
        assert_eq!(out.data()[5], 0.0);
    }
}
