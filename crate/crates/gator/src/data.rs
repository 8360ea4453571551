//! Dataset loading: IDX file pairs and a seeded synthetic generator.
//!
//! Both paths produce a normalized train/eval pair: per-channel mean and
//! standard deviation are computed on the train split once and applied to
//! both splits. Training batches go through pad-4 random crop and random
//! horizontal flip; evaluation uses the images untouched.

use std::path::Path;

use ndarray::{Array1, Array4, Axis, s};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::stream;
use crate::{GatorError, Result};

/// One split: images `[n, c, h, w]` and integer labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Array4<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Train and eval splits plus the normalization statistics applied to them.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub train: Dataset,
    pub eval: Dataset,
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

/// Parse a dataset argument: either `synthetic:key=value,...` or a path
/// prefix `P` expecting `P-train-images.idx`, `P-train-labels.idx`,
/// `P-eval-images.idx`, `P-eval-labels.idx`.
pub fn load_dataset(spec: &str, default_seed: u64) -> Result<DataBundle> {
    if let Some(body) = spec.strip_prefix("synthetic:") {
        synthetic_dataset(body, default_seed)
    } else {
        idx_bundle(spec)
    }
}

/// Seeded class-conditional Gaussian blobs: each class gets a fixed random
/// template image; samples are the template plus pixel noise. Linearly
/// separable enough for small networks to exceed 90% accuracy.
pub fn synthetic_dataset(body: &str, default_seed: u64) -> Result<DataBundle> {
    let mut classes = 10usize;
    let mut n = 2048usize;
    let mut hw = 16usize;
    let mut channels = 3usize;
    let mut seed = default_seed;
    let mut noise = 0.35f64;
    let mut eval_n = 0usize;
    for field in body.split(',').filter(|f| !f.is_empty()) {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| GatorError::Dataset(format!("bad synthetic field `{field}`")))?;
        let bad = || GatorError::Dataset(format!("bad value in `{field}`"));
        match key {
            "classes" => classes = value.parse().map_err(|_| bad())?,
            "n" => n = value.parse().map_err(|_| bad())?,
            "hw" => hw = value.parse().map_err(|_| bad())?,
            "channels" => channels = value.parse().map_err(|_| bad())?,
            "seed" => seed = value.parse().map_err(|_| bad())?,
            "noise" => noise = value.parse().map_err(|_| bad())?,
            "eval_n" => eval_n = value.parse().map_err(|_| bad())?,
            _ => {
                return Err(GatorError::Dataset(format!(
                    "unknown synthetic field `{key}`"
                )));
            }
        }
    }
    if classes < 2 || n < classes {
        return Err(GatorError::Dataset(format!(
            "need at least 2 classes and n >= classes (got classes={classes}, n={n})"
        )));
    }
    if eval_n == 0 {
        eval_n = (n / 4).max(classes);
    }
    let mut rng = stream(seed, "synthetic-data");
    let mut templates = Array4::<f64>::zeros((classes, channels, hw, hw));
    for v in templates.iter_mut() {
        *v = gaussian(&mut rng);
    }

    let generate = |count: usize, rng: &mut ChaCha8Rng| {
        let mut images = Array4::<f64>::zeros((count, channels, hw, hw));
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % classes;
            labels.push(class);
            let template = templates.index_axis(Axis(0), class);
            let mut img = images.index_axis_mut(Axis(0), i);
            for (dst, &src) in img.iter_mut().zip(template.iter()) {
                *dst = src + noise * gaussian(rng);
            }
        }
        (images, labels)
    };
    let (train_images, train_labels) = generate(n, &mut rng);
    let (eval_images, eval_labels) = generate(eval_n, &mut rng);
    normalize_bundle(
        Dataset {
            images: train_images,
            labels: train_labels,
            classes,
        },
        Dataset {
            images: eval_images,
            labels: eval_labels,
            classes,
        },
    )
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one value per call keeps the stream layout simple.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn idx_bundle(prefix: &str) -> Result<DataBundle> {
    let part = |split: &str, what: &str| format!("{prefix}-{split}-{what}.idx");
    let train_images = read_idx_images(Path::new(&part("train", "images")))?;
    let train_labels = read_idx_labels(Path::new(&part("train", "labels")))?;
    let eval_images = read_idx_images(Path::new(&part("eval", "images")))?;
    let eval_labels = read_idx_labels(Path::new(&part("eval", "labels")))?;
    let classes = train_labels
        .iter()
        .chain(&eval_labels)
        .max()
        .map_or(0, |&m| m + 1);
    let make = |images: Array4<f64>, labels: Vec<usize>| -> Result<Dataset> {
        if images.dim().0 != labels.len() {
            return Err(GatorError::Dataset(format!(
                "{} images but {} labels",
                images.dim().0,
                labels.len()
            )));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    };
    normalize_bundle(
        make(train_images, train_labels)?,
        make(eval_images, eval_labels)?,
    )
}

/// Read an IDX image file: magic 0x00000803 (unsigned byte, 3 dims) for
/// `[n, h, w]` grayscale or 0x00000804 for `[n, c, h, w]`.
pub fn read_idx_images(path: &Path) -> Result<Array4<f64>> {
    let bytes = std::fs::read(path)?;
    let magic = be32(&bytes, 0, path)?;
    let (dims, channels_in_file) = match magic {
        0x0000_0803 => (3, false),
        0x0000_0804 => (4, true),
        other => {
            return Err(GatorError::Dataset(format!(
                "{}: bad magic number 0x{other:08x} at offset 0",
                path.display()
            )));
        }
    };
    let mut shape = [0usize; 4];
    for d in 0..dims {
        shape[d] = be32(&bytes, 4 + 4 * d, path)? as usize;
    }
    let (n, c, h, w) = if channels_in_file {
        (shape[0], shape[1], shape[2], shape[3])
    } else {
        (shape[0], 1, shape[1], shape[2])
    };
    let header = 4 + 4 * dims;
    let expected = n * c * h * w;
    if bytes.len() != header + expected {
        return Err(GatorError::Dataset(format!(
            "{}: expected {} payload bytes, found {}",
            path.display(),
            expected,
            bytes.len().saturating_sub(header)
        )));
    }
    let mut images = Array4::zeros((n, c, h, w));
    for (v, &b) in images.iter_mut().zip(&bytes[header..]) {
        *v = b as f64 / 255.0;
    }
    Ok(images)
}

/// Read an IDX label file: magic 0x00000801, one unsigned byte per label.
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path)?;
    let magic = be32(&bytes, 0, path)?;
    if magic != 0x0000_0801 {
        return Err(GatorError::Dataset(format!(
            "{}: bad magic number 0x{magic:08x} at offset 0",
            path.display()
        )));
    }
    let n = be32(&bytes, 4, path)? as usize;
    if bytes.len() != 8 + n {
        return Err(GatorError::Dataset(format!(
            "{}: expected {} labels, found {} bytes",
            path.display(),
            n,
            bytes.len().saturating_sub(8)
        )));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

fn be32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| {
            GatorError::Dataset(format!(
                "{}: truncated file at offset {offset}",
                path.display()
            ))
        })
}

/// Compute per-channel statistics on the train split and normalize both
/// splits in place.
fn normalize_bundle(mut train: Dataset, mut eval: Dataset) -> Result<DataBundle> {
    for (split, name) in [(&train, "train"), (&eval, "eval")] {
        for &l in &split.labels {
            if l >= split.classes {
                return Err(GatorError::Dataset(format!(
                    "{name} label {l} outside [0, {})",
                    split.classes
                )));
            }
        }
    }
    let c = train.images.dim().1;
    let mut mean = Array1::zeros(c);
    let mut std = Array1::zeros(c);
    for ch in 0..c {
        let view = train.images.slice(s![.., ch, .., ..]);
        let m = view.mean().unwrap_or(0.0);
        let var = view.mapv(|v| (v - m) * (v - m)).mean().unwrap_or(0.0);
        mean[ch] = m;
        std[ch] = var.sqrt().max(1e-8);
    }
    for split in [&mut train, &mut eval] {
        for ch in 0..c {
            let mut view = split.images.slice_mut(s![.., ch, .., ..]);
            view.mapv_inplace(|v| (v - mean[ch]) / std[ch]);
        }
    }
    Ok(DataBundle {
        train,
        eval,
        mean,
        std,
    })
}

/// Pad-4 random crop plus random horizontal flip of one image batch.
pub fn augment_batch(batch: &Array4<f64>, rng: &mut ChaCha8Rng) -> Array4<f64> {
    let (n, c, h, w) = batch.dim();
    let pad = 4usize;
    let mut out = Array4::zeros((n, c, h, w));
    for i in 0..n {
        let dy = rng.random_range(0..=2 * pad);
        let dx = rng.random_range(0..=2 * pad);
        let flip = rng.random::<bool>();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sy = (y + dy) as isize - pad as isize;
                    let sx = (x + dx) as isize - pad as isize;
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        continue;
                    }
                    let sx = if flip { w - 1 - sx as usize } else { sx as usize };
                    out[(i, ch, y, x)] = batch[(i, ch, sy as usize, sx)];
                }
            }
        }
    }
    out
}

/// Deterministic shuffled index order for one epoch.
pub fn epoch_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthetic_dataset("classes=10,n=100,hw=8,seed=7", 0).unwrap();
        let b = synthetic_dataset("classes=10,n=100,hw=8,seed=7", 0).unwrap();
        assert_eq!(a.train.images, b.train.images);
        assert_eq!(a.eval.images, b.eval.images);
        assert_eq!(a.train.labels, b.train.labels);
        let c = synthetic_dataset("classes=10,n=100,hw=8,seed=8", 0).unwrap();
        assert_ne!(a.train.images, c.train.images);
    }

    #[test]
    fn normalization_gives_zero_mean_unit_std() {
        let b = synthetic_dataset("classes=4,n=400,hw=8", 3).unwrap();
        let (_, c, _, _) = b.train.images.dim();
        for ch in 0..c {
            let view = b.train.images.slice(s![.., ch, .., ..]);
            let m = view.mean().unwrap();
            let var = view.mapv(|v| (v - m) * (v - m)).mean().unwrap();
            assert!(m.abs() < 1e-6, "channel {ch} mean {m}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "channel {ch} std");
        }
    }

    #[test]
    fn idx_round_trip_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("t-images.idx");
        let lbl_path = dir.path().join("t-labels.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&3u32.to_be_bytes());
        img.extend_from_slice(&3u32.to_be_bytes());
        img.extend((0..18).map(|v| v as u8));
        std::fs::write(&img_path, &img).unwrap();
        let arr = read_idx_images(&img_path).unwrap();
        assert_eq!(arr.dim(), (2, 1, 3, 3));
        assert_eq!(arr[(1, 0, 2, 2)], 17.0 / 255.0);

        let mut lbl = Vec::new();
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&2u32.to_be_bytes());
        lbl.extend_from_slice(&[1, 0]);
        std::fs::write(&lbl_path, &lbl).unwrap();
        assert_eq!(read_idx_labels(&lbl_path).unwrap(), vec![1, 0]);

        img[0..4].copy_from_slice(&0xdead_beefu32.to_be_bytes());
        std::fs::write(&img_path, &img).unwrap();
        let err = read_idx_images(&img_path).unwrap_err().to_string();
        assert!(err.contains("magic") && err.contains("offset 0"), "{err}");
    }

    #[test]
    fn truncated_idx_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.idx");
        std::fs::write(&p, [0, 0]).unwrap();
        assert!(read_idx_images(&p).is_err());
    }

    #[test]
    fn augmentation_preserves_shape_and_is_seeded() {
        let b = synthetic_dataset("classes=2,n=8,hw=8", 1).unwrap();
        let mut r1 = stream(5, "aug");
        let mut r2 = stream(5, "aug");
        let a1 = augment_batch(&b.train.images, &mut r1);
        let a2 = augment_batch(&b.train.images, &mut r2);
        assert_eq!(a1.dim(), b.train.images.dim());
        assert_eq!(a1, a2);
    }

    #[test]
    fn epoch_order_is_a_permutation() {
        let mut rng = stream(2, "order");
        let order = epoch_order(100, &mut rng);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }
}
