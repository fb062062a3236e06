use std::f64::consts::PI;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Side length of generated images.
pub const IMAGE_SIDE: usize = 28;

/// Fixed stream for class means that do not fit an axis arrangement.
const MEAN_SEED: u64 = 0x05EE_D0F3_EA25;

/// Class means: axis vectors `e_c` while `C <= dim`, then `±e_c` while
/// `C <= 2 dim`, otherwise fixed pseudo-random unit vectors.
fn class_means(classes: usize, dim: usize) -> Vec<Vec<f64>> {
    if classes <= 2 * dim {
        return (0..classes)
            .map(|c| {
                let mut m = vec![0.0; dim];
                m[c % dim] = if c < dim { 1.0 } else { -1.0 };
                m
            })
            .collect();
    }
    let mut rng = SeededRng::new(MEAN_SEED);
    (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
            let norm = v
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Gaussian blobs around fixed class means. Samples are interleaved by
/// class (`label = i % classes`), so every prefix is near-balanced.
pub fn gen_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || dim == 0 || per_class == 0 {
        return Err(Error::Config(format!(
            "blobs need classes >= 2, dim >= 1 and samples per class >= 1 (got {classes}, {dim}, {per_class})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!(
            "spread must be finite and non-negative, got {spread}"
        )));
    }
    let means = class_means(classes, dim);
    let n = classes * per_class;
    let mut rng = SeededRng::new(seed);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        data.extend(means[c].iter().map(|&m| m + spread * rng.next_normal()));
    }
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, classes, "blobs")
}

/// Oriented soft bars: class `c` draws a bar at angle `c·π/C` through the
/// image centre, tinted per channel. `noise` scales the pixel noise and
/// the angle / position jitter alike, so `noise = 0` makes every sample of
/// a class identical.
pub fn gen_synth_images(
    classes: usize,
    channels: usize,
    per_class: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || per_class == 0 {
        return Err(Error::Config(format!(
            "images need classes >= 2 and samples per class >= 1 (got {classes}, {per_class})"
        )));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::Config(format!(
            "image channels must be 1 or 3, got {channels}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!(
            "noise must be finite and non-negative, got {noise}"
        )));
    }
    let side = IMAGE_SIDE;
    let plane = side * side;
    let n = classes * per_class;
    let centre = (side as f64 - 1.0) / 2.0;
    let (half_len, width) = (9.0, 1.5);
    let mut rng = SeededRng::new(seed);
    let mut data = Vec::with_capacity(n * channels * plane);
    let mut labels = Vec::with_capacity(n);
    let mut bar = vec![0.0; plane];
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        let theta = c as f64 * PI / classes as f64 + noise * 0.15 * rng.next_normal();
        let cx = centre + noise * 2.0 * rng.next_normal();
        let cy = centre + noise * 2.0 * rng.next_normal();
        let (s, co) = theta.sin_cos();
        for (p, v) in bar.iter_mut().enumerate() {
            let (dx, dy) = ((p % side) as f64 - cx, (p / side) as f64 - cy);
            let along = dx * co + dy * s;
            let across = -dx * s + dy * co;
            let overhang = (along.abs() - half_len).max(0.0);
            *v = (-(across * across + overhang * overhang) / (2.0 * width * width)).exp();
        }
        for ch in 0..channels {
            let tint = if channels == 1 {
                1.0
            } else {
                0.6 + 0.4 * (2.0 * PI * (c as f64 / classes as f64 + ch as f64 / 3.0)).cos()
            };
            for &b in &bar {
                let eps = if noise > 0.0 {
                    noise * rng.next_normal()
                } else {
                    0.0
                };
                data.push(tint * b + eps);
            }
        }
    }
    Dataset::new(
        Tensor::new(vec![n, channels, side, side], data)?,
        labels,
        classes,
        "synth-images",
    )
}
