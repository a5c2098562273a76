//! Datasets: Two Moons, label noise, IDX image files, subsetting, and a
//! synthetic digit-glyph generator.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Batch;
use crate::rng::{seeded, seeded_at, Stream};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad IDX magic 0x{found:08x} (expected 0x{expected:08x})")]
    BadMagic { found: u32, expected: u32 },
    #[error("IDX payload length {found} does not match dims (expected {expected})")]
    Length { expected: usize, found: usize },
    #[error("class {0} not present")]
    ClassAbsent(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Feature rows with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self, DataError> {
        if inputs.nrows() != labels.len() {
            return Err(DataError::Config(format!("{} rows but {} labels", inputs.nrows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(DataError::Config(format!("label {bad} >= num_classes {num_classes}")));
        }
        Ok(Self { inputs, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn to_batch(&self) -> Batch {
        Batch { inputs: self.inputs.clone(), labels: self.labels.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoonsConfig {
    pub n_samples: usize,
    pub noise_sigma: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for MoonsConfig {
    fn default() -> Self {
        Self { n_samples: 400, noise_sigma: 0.2, label_noise: 0.0, seed: 0 }
    }
}

impl MoonsConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_samples < 2 || self.n_samples % 2 != 0 {
            return Err(DataError::Config(format!("n_samples must be even and >= 2, got {}", self.n_samples)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DataError::Config(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        check_fraction(self.label_noise)
    }
}

fn check_fraction(p: f64) -> Result<(), DataError> {
    if !(0.0..1.0).contains(&p) {
        return Err(DataError::Config(format!("label noise {p} outside [0, 1)")));
    }
    Ok(())
}

/// Upper moon `(cos t, sin t)` with label 0 followed by lower moon
/// `(1 - cos t, 0.5 - sin t)` with label 1, `t` on a uniform grid over
/// `[0, pi]`, plus isotropic Gaussian noise and optional label noise.
pub fn gen_two_moons(cfg: &MoonsConfig) -> Result<Dataset, DataError> {
    moons_split(cfg, 0)
}

/// Independent train and test draws from the same configuration. The train
/// half equals `gen_two_moons(cfg)`; the test set has `n_test` samples.
pub fn gen_two_moons_split(cfg: &MoonsConfig, n_test: usize) -> Result<(Dataset, Dataset), DataError> {
    let train = moons_split(cfg, 0)?;
    let test = moons_split(&MoonsConfig { n_samples: n_test, ..*cfg }, 1)?;
    Ok((train, test))
}

fn moons_split(cfg: &MoonsConfig, split: u64) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let half = cfg.n_samples / 2;
    let mut inputs = Array2::zeros((cfg.n_samples, 2));
    let mut labels = Vec::with_capacity(cfg.n_samples);
    let mut geo = seeded_at(cfg.seed, Stream::DataGeometry, split);
    for moon in 0..2 {
        for i in 0..half {
            let t = if half > 1 { PI * i as f64 / (half - 1) as f64 } else { 0.0 };
            let (x, y) = if moon == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
            let r = moon * half + i;
            let nx: f64 = geo.sample(StandardNormal);
            let ny: f64 = geo.sample(StandardNormal);
            inputs[[r, 0]] = x + cfg.noise_sigma * nx;
            inputs[[r, 1]] = y + cfg.noise_sigma * ny;
            labels.push(moon);
        }
    }
    let clean = Dataset { inputs, labels, num_classes: 2 };
    let mut rng = seeded_at(cfg.seed, Stream::LabelNoise, split);
    Ok(flip_labels(&clean, cfg.label_noise, &mut rng).0)
}

/// Flips exactly `round(p * N)` labels, chosen without replacement, each to
/// a uniformly drawn different class. Returns the noisy copy and the sorted
/// flipped indices.
pub fn apply_label_noise(dataset: &Dataset, p: f64, seed: u64) -> Result<(Dataset, Vec<usize>), DataError> {
    check_fraction(p)?;
    Ok(flip_labels(dataset, p, &mut seeded(seed, Stream::LabelNoise)))
}

fn flip_labels(dataset: &Dataset, p: f64, rng: &mut ChaCha8Rng) -> (Dataset, Vec<usize>) {
    let n = dataset.len();
    let k = ((p * n as f64).round() as usize).min(n);
    let mut out = dataset.clone();
    if k == 0 || dataset.num_classes < 2 {
        return (out, Vec::new());
    }
    let mut flips = index::sample(rng, n, k).into_vec();
    flips.sort_unstable();
    let c = dataset.num_classes;
    for &i in &flips {
        let y = out.labels[i];
        let r = rng.random_range(0..c - 1);
        out.labels[i] = if r >= y { r + 1 } else { r };
    }
    (out, flips)
}

pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdxKind {
    Images,
    Labels,
}

impl IdxKind {
    pub fn magic(self) -> u32 {
        match self {
            IdxKind::Images => IDX_IMAGES_MAGIC,
            IdxKind::Labels => IDX_LABELS_MAGIC,
        }
    }

    fn rank(self) -> usize {
        match self {
            IdxKind::Images => 3,
            IdxKind::Labels => 1,
        }
    }
}

/// Raw IDX contents: unsigned-byte payload with big-endian dims.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub kind: IdxKind,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

impl IdxFile {
    pub fn images(count: usize, rows: usize, cols: usize, payload: Vec<u8>) -> Result<Self, DataError> {
        let f = Self { kind: IdxKind::Images, dims: vec![count, rows, cols], payload };
        f.check_len()?;
        Ok(f)
    }

    pub fn labels(payload: Vec<u8>) -> Self {
        Self { kind: IdxKind::Labels, dims: vec![payload.len()], payload }
    }

    fn check_len(&self) -> Result<(), DataError> {
        let expected: usize = self.dims.iter().product();
        if expected != self.payload.len() {
            return Err(DataError::Length { expected, found: self.payload.len() });
        }
        Ok(())
    }

    pub fn parse(bytes: &[u8], expected: IdxKind) -> Result<Self, DataError> {
        let word = |i: usize| -> Result<u32, DataError> {
            let b = bytes.get(4 * i..4 * i + 4).ok_or(DataError::Length { expected: 4 * i + 4, found: bytes.len() })?;
            Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        };
        let magic = word(0)?;
        if magic != expected.magic() {
            return Err(DataError::BadMagic { found: magic, expected: expected.magic() });
        }
        let rank = expected.rank();
        let dims: Vec<usize> = (1..=rank).map(|i| word(i).map(|d| d as usize)).collect::<Result<_, _>>()?;
        let header = 4 * (rank + 1);
        let expected_len: usize = dims.iter().product();
        let payload = &bytes[header..];
        if payload.len() != expected_len {
            return Err(DataError::Length { expected: expected_len, found: payload.len() });
        }
        Ok(Self { kind: expected, dims, payload: payload.to_vec() })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, DataError> {
        self.check_len()?;
        if self.dims.len() != self.kind.rank() {
            return Err(DataError::Config(format!("{:?} file needs {} dims", self.kind, self.kind.rank())));
        }
        let mut out = Vec::with_capacity(4 * (self.dims.len() + 1) + self.payload.len());
        out.extend_from_slice(&self.kind.magic().to_be_bytes());
        for &d in &self.dims {
            let d = u32::try_from(d).map_err(|_| DataError::Config(format!("dim {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R, expected: IdxKind) -> Result<Self, DataError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::parse(&bytes, expected)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DataError> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        self.write_to(std::io::BufWriter::new(fs::File::create(path)?))
    }
}

/// Decoded IDX contents.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxArray {
    /// One flattened image per row, pixels scaled to `[0, 1]`.
    Images { data: Array2<f64>, rows: usize, cols: usize },
    Labels(Vec<usize>),
}

/// Reads an IDX file, gunzipping it first when it carries the gzip magic.
pub fn read_idx(path: &Path, expected: IdxKind) -> Result<IdxFile, DataError> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut bytes = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut bytes)?;
        return IdxFile::parse(&bytes, expected);
    }
    IdxFile::parse(&raw, expected)
}

pub fn load_idx(path: &Path, expected: IdxKind) -> Result<IdxArray, DataError> {
    Ok(decode_idx(&read_idx(path, expected)?))
}

pub fn decode_idx(file: &IdxFile) -> IdxArray {
    match file.kind {
        IdxKind::Labels => IdxArray::Labels(file.payload.iter().map(|&b| b as usize).collect()),
        IdxKind::Images => {
            let (n, rows, cols) = (file.dims[0], file.dims[1], file.dims[2]);
            let data = Array2::from_shape_fn((n, rows * cols), |(i, j)| file.payload[i * rows * cols + j] as f64 / 255.0);
            IdxArray::Images { data, rows, cols }
        }
    }
}

/// Pairs an images file with a labels file. The class count is the largest
/// label plus one (at least 2).
pub fn load_idx_dataset(images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    let IdxArray::Images { data, .. } = load_idx(images, IdxKind::Images)? else { unreachable!("images kind") };
    let IdxArray::Labels(y) = load_idx(labels, IdxKind::Labels)? else { unreachable!("labels kind") };
    if data.nrows() != y.len() {
        return Err(DataError::Config(format!("{} images but {} labels", data.nrows(), y.len())));
    }
    let c = y.iter().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(data, y, c)
}

/// Seeded stratified subsample, optionally restricted to a class pair that is
/// relabelled to `{0, 1}` (`a -> 0`, `b -> 1`). `subset_n = None` keeps every
/// eligible sample (in shuffled order).
pub fn shape_dataset(
    dataset: &Dataset,
    subset_n: Option<usize>,
    class_pair: Option<(usize, usize)>,
    seed: u64,
) -> Result<Dataset, DataError> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let classes: Vec<usize> = match class_pair {
        Some((a, b)) => {
            if a == b {
                return Err(DataError::Config(format!("class pair ({a}, {b}) repeats a class")));
            }
            for c in [a, b] {
                if by_class.get(c).is_none_or(|v| v.is_empty()) {
                    return Err(DataError::ClassAbsent(c));
                }
            }
            vec![a, b]
        }
        None => (0..dataset.num_classes).filter(|&c| !by_class[c].is_empty()).collect(),
    };
    let available: usize = classes.iter().map(|&c| by_class[c].len()).sum();
    let m = subset_n.unwrap_or(available);
    if m == 0 || m > available {
        return Err(DataError::Config(format!("subset of {m} requested from {available} samples")));
    }
    // Largest-remainder quotas keep each class within one sample of its share.
    let mut quota: Vec<usize> = Vec::with_capacity(classes.len());
    let mut rema: Vec<(u128, usize)> = Vec::with_capacity(classes.len());
    for (k, &c) in classes.iter().enumerate() {
        let num = by_class[c].len() as u128 * m as u128;
        quota.push((num / available as u128) as usize);
        rema.push((num % available as u128, k));
    }
    let short = m - quota.iter().sum::<usize>();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, k) in rema.iter().take(short) {
        quota[k] += 1;
    }
    let mut rng = seeded(seed, Stream::Subset);
    let mut picked = Vec::with_capacity(m);
    for (k, &c) in classes.iter().enumerate() {
        let mut idx = by_class[c].clone();
        idx.shuffle(&mut rng);
        picked.extend(idx.into_iter().take(quota[k]));
    }
    picked.shuffle(&mut rng);
    let mut out = dataset.select(&picked);
    if let Some((a, _)) = class_pair {
        for y in out.labels.iter_mut() {
            *y = usize::from(*y != a);
        }
        out.num_classes = 2;
    }
    Ok(out)
}

pub const GLYPH_SIDE: usize = 28;

/// Stroke skeletons of the digits 0-9 in a unit box (x right, y down).
fn glyph_strokes(digit: usize) -> Vec<Vec<(f64, f64)>> {
    let ellipse = |cx: f64, cy: f64, rx: f64, ry: f64, n: usize| -> Vec<(f64, f64)> {
        (0..=n).map(|i| 2.0 * PI * i as f64 / n as f64).map(|t| (cx + rx * t.cos(), cy + ry * t.sin())).collect()
    };
    match digit {
        0 => vec![ellipse(0.5, 0.5, 0.45, 0.5, 16)],
        1 => vec![vec![(0.25, 0.2), (0.55, 0.0), (0.55, 1.0)]],
        2 => vec![vec![(0.0, 0.25), (0.3, 0.0), (0.7, 0.0), (1.0, 0.25), (0.9, 0.5), (0.0, 1.0), (1.0, 1.0)]],
        3 => vec![vec![(0.0, 0.05), (1.0, 0.0), (0.45, 0.45), (1.0, 0.7), (0.7, 1.0), (0.0, 0.9)]],
        4 => vec![vec![(0.7, 1.0), (0.7, 0.0), (0.0, 0.65), (1.0, 0.65)]],
        5 => vec![vec![(1.0, 0.0), (0.1, 0.0), (0.0, 0.45), (0.7, 0.4), (1.0, 0.7), (0.7, 1.0), (0.0, 0.9)]],
        6 => vec![vec![
            (0.9, 0.0),
            (0.3, 0.3),
            (0.0, 0.7),
            (0.3, 1.0),
            (0.8, 1.0),
            (1.0, 0.75),
            (0.7, 0.5),
            (0.2, 0.6),
        ]],
        7 => vec![vec![(0.0, 0.0), (1.0, 0.0), (0.4, 1.0)]],
        8 => vec![ellipse(0.5, 0.24, 0.35, 0.24, 12), ellipse(0.5, 0.73, 0.42, 0.27, 12)],
        _ => vec![ellipse(0.5, 0.3, 0.42, 0.3, 12), vec![(0.92, 0.3), (0.8, 1.0)]],
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders one jittered glyph into a 28x28 byte image.
fn render_glyph(digit: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n01 = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let scale = rng.random_range(0.8..1.15);
    let (w, h) = (12.0 * scale * rng.random_range(0.85..1.15), 18.0 * scale);
    let angle: f64 = rng.random_range(-0.25..0.25);
    let shear = rng.random_range(-0.25..0.25);
    let (tx, ty) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let width = rng.random_range(1.0..2.4);
    let (ca, sa) = (angle.cos(), angle.sin());
    let strokes: Vec<Vec<(f64, f64)>> = glyph_strokes(digit)
        .into_iter()
        .map(|s| {
            s.into_iter()
                .map(|(x, y)| {
                    let (x, y) = (x + 0.08 * n01(rng) - 0.5, y + 0.08 * n01(rng) - 0.5);
                    let (x, y) = ((x + shear * y) * w, y * h);
                    (14.0 + tx + ca * x - sa * y, 14.0 + ty + sa * x + ca * y)
                })
                .collect()
        })
        .collect();
    let mut img = vec![0u8; GLYPH_SIDE * GLYPH_SIDE];
    for r in 0..GLYPH_SIDE {
        for c in 0..GLYPH_SIDE {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let mut d = f64::INFINITY;
            for s in &strokes {
                for seg in s.windows(2) {
                    d = d.min(segment_distance(p, seg[0], seg[1]));
                }
            }
            let ink = 1.0 / (1.0 + ((d - 0.5 * width) / 0.3).exp());
            let v = (ink + 0.06 * n01(rng)).clamp(0.0, 1.0);
            img[r * GLYPH_SIDE + c] = (255.0 * v).round() as u8;
        }
    }
    img
}

/// Deterministic 10-class digit-like images (28x28, balanced, shuffled),
/// returned as an IDX images/labels pair.
pub fn gen_glyphs(n: usize, seed: u64) -> (IdxFile, IdxFile) {
    let mut rng = seeded(seed, Stream::Glyphs);
    let mut labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    labels.shuffle(&mut rng);
    let mut payload = Vec::with_capacity(n * GLYPH_SIDE * GLYPH_SIDE);
    for &y in &labels {
        payload.extend(render_glyph(y, &mut rng));
    }
    let images = IdxFile::images(n, GLYPH_SIDE, GLYPH_SIDE, payload).expect("consistent dims");
    (images, IdxFile::labels(labels.iter().map(|&y| y as u8).collect()))
}

/// [`gen_glyphs`] decoded into a dataset.
pub fn glyph_dataset(n: usize, seed: u64) -> Dataset {
    let (images, labels) = gen_glyphs(n, seed);
    let IdxArray::Images { data, .. } = decode_idx(&images) else { unreachable!("images kind") };
    let IdxArray::Labels(y) = decode_idx(&labels) else { unreachable!("labels kind") };
    Dataset { inputs: data, labels: y, num_classes: 10 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_endpoints_without_noise() {
        let cfg = MoonsConfig { n_samples: 10, noise_sigma: 0.0, label_noise: 0.0, seed: 3 };
        let d = gen_two_moons(&cfg).unwrap();
        assert_eq!((d.inputs[[0, 0]], d.inputs[[0, 1]]), (1.0, 0.0));
        assert_eq!(d.labels[0], 0);
        assert_eq!((d.inputs[[5, 0]], d.inputs[[5, 1]]), (0.0, 0.5));
        assert_eq!(d.labels[5], 1);
        assert!(gen_two_moons(&MoonsConfig { n_samples: 7, ..cfg }).is_err());
    }

    #[test]
    fn split_train_equals_plain_generation() {
        let cfg = MoonsConfig { n_samples: 20, noise_sigma: 0.1, label_noise: 0.2, seed: 5 };
        let (train, test) = gen_two_moons_split(&cfg, 30).unwrap();
        assert_eq!(train, gen_two_moons(&cfg).unwrap());
        assert_eq!(test.len(), 30);
        assert_ne!(train.inputs.row(0), test.inputs.row(0));
    }

    #[test]
    fn multiclass_flips_change_class() {
        let d = Dataset::new(Array2::zeros((50, 1)), (0..50).map(|i| i % 5).collect(), 5).unwrap();
        let (noisy, flips) = apply_label_noise(&d, 0.4, 1).unwrap();
        assert_eq!(flips.len(), 20);
        for i in 0..50 {
            assert_eq!(flips.binary_search(&i).is_ok(), noisy.labels[i] != d.labels[i]);
        }
    }

    #[test]
    fn idx_header_errors() {
        assert!(matches!(IdxFile::parse(&[0, 0], IdxKind::Labels), Err(DataError::Length { .. })));
        let f = IdxFile::labels(vec![1, 2, 3]);
        let bytes = f.to_bytes().unwrap();
        assert!(matches!(IdxFile::parse(&bytes, IdxKind::Images), Err(DataError::BadMagic { .. })));
        let mut long = bytes.clone();
        long.push(9);
        assert!(matches!(IdxFile::parse(&long, IdxKind::Labels), Err(DataError::Length { .. })));
    }

    #[test]
    fn glyphs_are_balanced_and_deterministic() {
        let a = glyph_dataset(50, 2);
        assert_eq!(a, glyph_dataset(50, 2));
        assert_eq!(a.class_counts(), vec![5; 10]);
        assert_eq!(a.dim(), 784);
        let ink: f64 = a.inputs.row(0).sum();
        assert!(ink > 20.0 && ink < 400.0, "ink {ink}");
    }
}
