//! Datasets, labeled/unlabeled splits and cycling batch cursors.
//!
//! Images are stored channels-first as `f32` in `[0, 1]`. Label `-1` marks a
//! sample whose class is unknown.

use crate::error::{Error, Result};
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const UNLABELED: i32 = -1;

/// A set of equally sized images with (possibly unknown) class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    images: Vec<f32>,
    labels: Vec<i32>,
}

/// Per-channel mean and standard deviation of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    /// Normalizes one channels-first image in place.
    pub fn apply(&self, image: &mut [f32]) {
        let plane = image.len() / self.mean.len();
        for (c, chunk) in image.chunks_mut(plane).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        shape: [usize; 3],
        classes: usize,
        images: Vec<f32>,
        labels: Vec<i32>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            channels: shape[0],
            height: shape[1],
            width: shape[2],
            classes,
            images,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::Data {
            path: self.name.clone(),
            message: m,
        };
        if self.labels.is_empty() {
            return Err(bad("dataset is empty".into()));
        }
        if self.images.len() != self.labels.len() * self.image_len() {
            return Err(bad(format!(
                "{} pixel values for {} images of {} values",
                self.images.len(),
                self.labels.len(),
                self.image_len()
            )));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l < UNLABELED || l >= self.classes as i32) {
            return Err(bad(format!("label {l} outside [-1, {})", self.classes)));
        }
        if self.images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(bad("pixel values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    /// Known class of sample `i`.
    pub fn label(&self, i: usize) -> Option<usize> {
        let l = self.labels[i];
        (l >= 0).then_some(l as usize)
    }

    /// Subset in the given index order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Dataset> {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(name, self.shape(), self.classes, images, labels)
    }

    pub fn channel_stats(&self) -> ChannelStats {
        let plane = self.height * self.width;
        let mut mean = vec![0f64; self.channels];
        let mut sq = vec![0f64; self.channels];
        for img in self.images.chunks(self.image_len()) {
            for (c, p) in img.chunks(plane).enumerate() {
                for &v in p {
                    mean[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
        }
        let count = (self.len() * plane) as f64;
        let mut out = ChannelStats {
            mean: Vec::new(),
            std: Vec::new(),
        };
        for c in 0..self.channels {
            let m = mean[c] / count;
            let var = (sq[c] / count - m * m).max(0.0);
            out.mean.push(m as f32);
            out.std.push((var.sqrt() as f32).max(1e-6));
        }
        out
    }

    /// Writes the raw export: `FFDS`, then u32 LE n, classes, height, width,
    /// channels, then n i32 labels and the f32 pixels, all little-endian.
    pub fn write_raw<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"FFDS")?;
        for v in [self.len(), self.classes, self.height, self.width, self.channels] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * (self.labels.len() + self.images.len()));
        for l in &self.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        for v in &self.images {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_raw<R: Read>(mut input: R, name: &str) -> Result<Dataset> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let bad = |m: &str| Error::Data {
            path: name.to_string(),
            message: m.to_string(),
        };
        if bytes.len() < 24 || &bytes[..4] != b"FFDS" {
            return Err(bad("missing FFDS header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (n, classes, h, w, c) = (word(0), word(1), word(2), word(3), word(4));
        let body = &bytes[24..];
        let expected = 4 * n + 4 * n * c * h * w;
        if body.len() != expected {
            return Err(bad(&format!("expected {expected} payload bytes, found {}", body.len())));
        }
        let labels = body[..4 * n]
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let images = body[4 * n..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Dataset::new(name, [c, h, w], classes, images, labels)
    }
}

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_RECORDS_PER_FILE: usize = 10_000;

/// Parses one CIFAR-10 binary batch holding exactly `records` records.
pub fn read_cifar10_batch(path: &Path, records: usize) -> Result<(Vec<f32>, Vec<i32>)> {
    let expected = records * CIFAR_RECORD;
    let bytes = std::fs::read(path).map_err(|e| Error::Data {
        path: path.display().to_string(),
        message: format!("cannot read ({e}); expected a {expected}-byte CIFAR-10 batch"),
    })?;
    if bytes.len() != expected {
        return Err(Error::Data {
            path: path.display().to_string(),
            message: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let mut images = Vec::with_capacity(records * 3072);
    let mut labels = Vec::with_capacity(records);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(Error::Data {
                path: path.display().to_string(),
                message: format!("label byte {} outside [0, 10)", rec[0]),
            });
        }
        labels.push(rec[0] as i32);
        images.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((images, labels))
}

/// Loads the five training batches (`train = true`) or the test batch.
pub fn load_cifar10_binary(dir: &Path, train: bool) -> Result<Dataset> {
    let files: Vec<String> = if train {
        (1..=5).map(|i| format!("data_batch_{i}.bin")).collect()
    } else {
        vec!["test_batch.bin".to_string()]
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let (im, lb) = read_cifar10_batch(&dir.join(f), CIFAR_RECORDS_PER_FILE)?;
        images.extend(im);
        labels.extend(lb);
    }
    let name = if train { "cifar10-train" } else { "cifar10-test" };
    Dataset::new(name, [3, 32, 32], 10, images, labels)
}

/// Parameters of the class-conditional synthetic image generator.
///
/// Each class owns a smooth random prototype per channel. A sample is its
/// class prototype, shifted by up to `max_shift` pixels, contrast/brightness
/// jittered, blended with a random other-class prototype and corrupted with
/// Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub seed: u64,
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f32,
    pub max_shift: usize,
    pub max_blend: f32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: 10,
            channels: 3,
            height: 8,
            width: 8,
            noise: 0.2,
            max_shift: 1,
            max_blend: 0.45,
        }
    }
}

impl SynthSpec {
    fn prototypes(&self) -> Vec<Vec<f32>> {
        let (h, w) = (self.height, self.width);
        (0..self.classes)
            .map(|k| {
                let mut rng = rng::stream(self.seed, "synth-prototype", 0, k as u64);
                let mut img = vec![0f32; self.channels * h * w];
                for plane in img.chunks_mut(h * w) {
                    let mut waves = Vec::new();
                    for _ in 0..3 {
                        let fy: f32 = rng.gen_range(0.5..2.0) * std::f32::consts::TAU / h as f32;
                        let fx: f32 = rng.gen_range(0.5..2.0) * std::f32::consts::TAU / w as f32;
                        let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
                        let amp: f32 = rng.gen_range(0.5..1.0);
                        waves.push((fy, fx, phase, amp));
                    }
                    for y in 0..h {
                        for x in 0..w {
                            let s: f32 = waves
                                .iter()
                                .map(|&(fy, fx, p, a)| a * (fy * y as f32 + fx * x as f32 + p).sin())
                                .sum();
                            plane[y * w + x] = 0.5 + 0.22 * s;
                        }
                    }
                }
                img
            })
            .collect()
    }

    /// Samples `[start, start + count)` of the infinite sample sequence.
    /// Sample `i` belongs to class `i mod classes`.
    pub fn generate_range(&self, start: usize, count: usize, name: &str) -> Result<Dataset> {
        let protos = self.prototypes();
        let (c, h, w) = (self.channels, self.height, self.width);
        let mut images = Vec::with_capacity(count * c * h * w);
        let mut labels = Vec::with_capacity(count);
        let shift = self.max_shift as i64;
        for i in start..start + count {
            let class = i % self.classes;
            let mut rng = rng::stream(self.seed, "synth-sample", 0, i as u64);
            let dy = rng.gen_range(-shift..=shift);
            let dx = rng.gen_range(-shift..=shift);
            let contrast: f32 = rng.gen_range(0.7..1.2);
            let brightness: f32 = rng.gen_range(-0.1..0.1);
            let other = (class + rng.gen_range(1..self.classes.max(2))) % self.classes;
            let blend: f32 = rng.gen_range(0.0..=self.max_blend);
            let (p, q) = (&protos[class], &protos[other]);
            for ch in 0..c {
                for y in 0..h as i64 {
                    for x in 0..w as i64 {
                        let sy = (y - dy).clamp(0, h as i64 - 1) as usize;
                        let sx = (x - dx).clamp(0, w as i64 - 1) as usize;
                        let k = ch * h * w + sy * w + sx;
                        let base = (1.0 - blend) * p[k] + blend * q[k];
                        let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
                        let u2: f32 = rng.gen();
                        let gauss = (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos();
                        let v = 0.5 + contrast * (base - 0.5) + brightness + self.noise * gauss;
                        images.push(v.clamp(0.0, 1.0));
                    }
                }
            }
            labels.push(class as i32);
        }
        Dataset::new(name, [c, h, w], self.classes, images, labels)
    }

    /// Disjoint train and test sets sharing class prototypes.
    pub fn train_test(&self, n_train: usize, n_test: usize) -> Result<(Dataset, Dataset)> {
        Ok((
            self.generate_range(0, n_train, "synth-train")?,
            self.generate_range(n_train, n_test, "synth-test")?,
        ))
    }
}

/// Balanced synthetic dataset with default generator settings.
pub fn synth_generate(seed: u64, n: usize, classes: usize, height: usize, width: usize) -> Result<Dataset> {
    if n < classes {
        return Err(Error::Data {
            path: "synth".into(),
            message: format!("n = {n} smaller than class count {classes}"),
        });
    }
    let spec = SynthSpec {
        seed,
        classes,
        height,
        width,
        max_shift: (height / 8).max(1),
        ..SynthSpec::default()
    };
    spec.generate_range(0, n, "synth")
}

/// Labeled and unlabeled index sets of one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SslSplit {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub seed: u64,
}

impl SslSplit {
    /// Distinct samples in labeled ∪ unlabeled, the pass-to-epoch denominator.
    pub fn distinct_samples(&self) -> usize {
        let mut all: Vec<usize> = self.labeled.iter().chain(&self.unlabeled).copied().collect();
        all.sort_unstable();
        all.dedup();
        all.len()
    }
}

/// Picks `n_labeled / classes` samples of every class by seeded shuffle.
///
/// With `labeled_also_unlabeled` the unlabeled pool is the whole dataset,
/// otherwise it is the complement of the labeled set.
pub fn make_ssl_split(dataset: &Dataset, n_labeled: usize, seed: u64, labeled_also_unlabeled: bool) -> Result<SslSplit> {
    let c = dataset.classes;
    if c == 0 || n_labeled % c != 0 {
        return Err(Error::Split(format!("{n_labeled} labels not divisible by {c} classes")));
    }
    if n_labeled > dataset.len() {
        return Err(Error::Split(format!("{n_labeled} labels requested from {} samples", dataset.len())));
    }
    let per_class = n_labeled / c;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for i in 0..dataset.len() {
        if let Some(l) = dataset.label(i) {
            by_class[l].push(i);
        }
    }
    let mut labeled = Vec::with_capacity(n_labeled);
    for (k, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(Error::Split(format!(
                "class {k} has {} samples, {per_class} needed",
                members.len()
            )));
        }
        let mut rng = rng::stream(seed, "split", 0, k as u64);
        members.shuffle(&mut rng);
        labeled.extend_from_slice(&members[..per_class]);
    }
    labeled.sort_unstable();
    let unlabeled = if labeled_also_unlabeled {
        (0..dataset.len()).collect()
    } else {
        let mut is_labeled = vec![false; dataset.len()];
        labeled.iter().for_each(|&i| is_labeled[i] = true);
        (0..dataset.len()).filter(|&i| !is_labeled[i]).collect()
    };
    Ok(SslSplit { labeled, unlabeled, seed })
}

/// Endless shuffled walk over a pool of indices, reshuffled after each pass.
#[derive(Debug, Clone)]
pub struct BatchCursor {
    pool: Vec<usize>,
    permutation: Vec<usize>,
    position: usize,
    epoch_counter: u64,
    rng_seed: u64,
}

impl BatchCursor {
    pub fn new(pool: Vec<usize>, rng_seed: u64) -> Self {
        let mut c = Self {
            pool,
            permutation: Vec::new(),
            position: 0,
            epoch_counter: 0,
            rng_seed,
        };
        c.reshuffle();
        c
    }

    fn reshuffle(&mut self) {
        self.permutation = self.pool.clone();
        let mut rng = rng::stream(self.rng_seed, "cursor", self.epoch_counter, 0);
        self.permutation.shuffle(&mut rng);
        self.position = 0;
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn epoch_counter(&self) -> u64 {
        self.epoch_counter
    }

    pub fn position(&self) -> usize {
        self.position
    }

    /// Next `k` indices; crossing the end of a pass reshuffles with a fresh
    /// derived seed.
    pub fn next_batch(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        if self.pool.is_empty() {
            return out;
        }
        while out.len() < k {
            let take = (k - out.len()).min(self.permutation.len() - self.position);
            out.extend_from_slice(&self.permutation[self.position..self.position + take]);
            self.position += take;
            if self.position == self.permutation.len() {
                self.epoch_counter += 1;
                self.reshuffle();
            }
        }
        out
    }

    /// Adds indices to the pool and starts a fresh pass over the enlarged pool.
    pub fn extend_pool(&mut self, more: &[usize]) {
        self.pool.extend_from_slice(more);
        self.epoch_counter += 1;
        self.reshuffle();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn synth_is_deterministic_balanced_and_seeded() {
        let a = synth_generate(3, 1000, 10, 8, 8).unwrap();
        let b = synth_generate(3, 1000, 10, 8, 8).unwrap();
        assert_eq!(a, b);
        for k in 0..10 {
            assert_eq!(a.labels().iter().filter(|&&l| l == k).count(), 100);
        }
        let c = synth_generate(4, 1000, 10, 8, 8).unwrap();
        assert_ne!(a.images(), c.images());
        assert!(a.images().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn synth_requires_one_sample_per_class() {
        assert!(synth_generate(0, 5, 10, 8, 8).is_err());
    }

    #[test]
    fn split_sizes_per_class() {
        let ds = synth_generate(1, 1000, 10, 8, 8).unwrap();
        for (n, per) in [(250, 25), (40, 4)] {
            let s = make_ssl_split(&ds, n, 9, true).unwrap();
            assert_eq!(s.labeled.len(), n);
            for k in 0..10 {
                assert_eq!(s.labeled.iter().filter(|&&i| ds.label(i) == Some(k)).count(), per);
            }
            assert_eq!(s.unlabeled.len(), 1000);
        }
        assert_eq!(make_ssl_split(&ds, 40, 9, true).unwrap(), make_ssl_split(&ds, 40, 9, true).unwrap());
        assert_ne!(make_ssl_split(&ds, 40, 9, true).unwrap(), make_ssl_split(&ds, 40, 10, true).unwrap());
    }

    #[test]
    fn split_without_overlap() {
        let ds = synth_generate(1, 200, 10, 8, 8).unwrap();
        let s = make_ssl_split(&ds, 40, 2, false).unwrap();
        let lab: HashSet<_> = s.labeled.iter().collect();
        assert_eq!(s.unlabeled.len(), 160);
        assert!(s.unlabeled.iter().all(|i| !lab.contains(i)));
        assert_eq!(s.distinct_samples(), 200);
    }

    #[test]
    fn split_errors() {
        let ds = synth_generate(1, 100, 10, 8, 8).unwrap();
        assert!(matches!(make_ssl_split(&ds, 45, 0, true), Err(Error::Split(_))));
        assert!(matches!(make_ssl_split(&ds, 110, 0, true), Err(Error::Split(_))));
        assert!(matches!(make_ssl_split(&ds, 100, 0, true), Ok(_)));
        let small = synth_generate(1, 15, 10, 8, 8).unwrap();
        assert!(matches!(make_ssl_split(&small, 20, 0, true), Err(Error::Split(_))));
    }

    #[test]
    fn cursor_wraps_with_reshuffle() {
        let mut c = BatchCursor::new((0..5).collect(), 1);
        let a = c.next_batch(3);
        let b = c.next_batch(3);
        let all: Vec<usize> = a.iter().chain(&b).copied().collect();
        assert_eq!(all.len(), 6);
        let first5: HashSet<_> = all[..5].iter().collect();
        assert_eq!(first5.len(), 5);
        assert_eq!(c.epoch_counter(), 1);
        assert!(c.next_batch(0).is_empty());
    }

    #[test]
    fn cursor_full_pass_visits_each_index_once() {
        let n = 37;
        let mut c = BatchCursor::new((100..100 + n).collect(), 5);
        let mut seen = Vec::new();
        while seen.len() < n {
            seen.extend(c.next_batch(4.min(n - seen.len())));
        }
        let mut brute = seen.clone();
        brute.sort_unstable();
        assert_eq!(brute, (100..100 + n).collect::<Vec<_>>());
    }

    #[test]
    fn raw_export_round_trip() {
        let ds = synth_generate(2, 30, 10, 8, 8).unwrap();
        let mut buf = Vec::new();
        ds.write_raw(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FFDS");
        let back = Dataset::read_raw(buf.as_slice(), "synth").unwrap();
        assert_eq!(ds, back);
        assert!(Dataset::read_raw(&buf[..buf.len() - 1], "x").is_err());
    }

    #[test]
    fn channel_stats_normalize_to_zero_mean() {
        let ds = synth_generate(2, 100, 10, 8, 8).unwrap();
        let st = ds.channel_stats();
        let mut sum = [0f64; 3];
        for i in 0..ds.len() {
            let mut img = ds.image(i).to_vec();
            st.apply(&mut img);
            for (c, p) in img.chunks(64).enumerate() {
                sum[c] += p.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        for s in sum {
            assert!((s / 6400.0).abs() < 1e-4);
        }
    }

    #[test]
    fn cifar_batch_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bin");
        let mut bytes = Vec::new();
        for r in 0..3u8 {
            bytes.push(r);
            bytes.extend(std::iter::repeat(255u8).take(3072));
        }
        std::fs::write(&path, &bytes).unwrap();
        let (images, labels) = read_cifar10_batch(&path, 3).unwrap();
        assert_eq!(labels, vec![0, 1, 2]);
        assert!(images.iter().all(|&v| v == 1.0));
        let err = read_cifar10_batch(&path, 4).unwrap_err().to_string();
        assert!(err.contains("b.bin") && err.contains(&(4 * 3073).to_string()), "{err}");
    }

    #[test]
    fn missing_cifar_file_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cifar10_binary(dir.path(), false).unwrap_err().to_string();
        assert!(err.contains("test_batch.bin") && err.contains("30730000"), "{err}");
    }
}
