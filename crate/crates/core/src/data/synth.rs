//! Procedural stand-in for FLAIR-like slices with bright lesions.
//!
//! Each image is a smooth sinusoidal background texture, one to three bright
//! ellipses whose radius is perturbed by low-order angular harmonics, and
//! additive Gaussian noise. The mask is the union of the ellipse supports.
//! Sample `i` draws only from a ChaCha8 stream `(seed, i)`, so any subset can
//! be regenerated independently.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Sample;

pub const MIN_FOREGROUND: f64 = 0.02;
pub const MAX_FOREGROUND: f64 = 0.30;

const NOISE_STD: f64 = 0.05;

struct Blob {
    cy: f64,
    cx: f64,
    semi_u: f64,
    semi_v: f64,
    cos_t: f64,
    sin_t: f64,
    harmonics: [(f64, f64); 3],
    level: f64,
}

impl Blob {
    fn draw(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Self {
        let side = height.min(width) as f64;
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let mut harmonics = [(0.0, 0.0); 3];
        for h in &mut harmonics {
            *h = (rng.random_range(0.0..0.12), rng.random_range(0.0..TAU));
        }
        Self {
            cy: rng.random_range(0.15..0.85) * height as f64,
            cx: rng.random_range(0.15..0.85) * width as f64,
            semi_u: rng.random_range(0.06..0.16) * side,
            semi_v: rng.random_range(0.06..0.16) * side,
            cos_t: theta.cos(),
            sin_t: theta.sin(),
            harmonics,
            level: rng.random_range(0.62..0.85),
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = (dx * self.cos_t + dy * self.sin_t) / self.semi_u;
        let v = (-dx * self.sin_t + dy * self.cos_t) / self.semi_v;
        let rho = (u * u + v * v).sqrt();
        let phi = v.atan2(u);
        let radius = 1.0
            + self
                .harmonics
                .iter()
                .enumerate()
                .map(|(k, &(amp, phase))| amp * ((k as f64 + 2.0) * phi + phase).cos())
                .sum::<f64>();
        rho <= radius
    }
}

struct Texture {
    base: f64,
    waves: [(f64, f64, f64, f64); 3],
}

impl Texture {
    fn draw(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Self {
        let mut waves = [(0.0, 0.0, 0.0, 0.0); 3];
        for w in &mut waves {
            let dir = rng.random_range(0.0..TAU);
            let cycles = rng.random_range(0.5..2.0);
            w.0 = rng.random_range(0.02..0.06);
            w.1 = cycles * dir.cos() / width as f64;
            w.2 = cycles * dir.sin() / height as f64;
            w.3 = rng.random_range(0.0..TAU);
        }
        Self {
            base: rng.random_range(0.15..0.30),
            waves,
        }
    }

    fn at(&self, y: f64, x: f64) -> f64 {
        self.waves
            .iter()
            .map(|&(amp, fx, fy, phase)| amp * (TAU * (fx * x + fy * y) + phase).sin())
            .sum()
    }
}

fn generate_one(seed: u64, index: usize, height: usize, width: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let n = height * width;

    let (blobs, mask) = loop {
        let count = rng.random_range(1..=3);
        let blobs: Vec<Blob> = (0..count).map(|_| Blob::draw(&mut rng, height, width)).collect();
        let mut mask = vec![0u8; n];
        for y in 0..height {
            for x in 0..width {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                if blobs.iter().any(|b| b.contains(py, px)) {
                    mask[y * width + x] = 1;
                }
            }
        }
        let fraction = mask.iter().map(|&m| m as f64).sum::<f64>() / n as f64;
        if (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&fraction) {
            break (blobs, mask);
        }
    };

    let texture = Texture::draw(&mut rng, height, width);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let mut image = Vec::with_capacity(n);
    for y in 0..height {
        for x in 0..width {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let tex = texture.at(py, px);
            let mut value = texture.base + tex;
            if mask[y * width + x] == 1 {
                let level = blobs
                    .iter()
                    .filter(|b| b.contains(py, px))
                    .map(|b| b.level)
                    .fold(0.0, f64::max);
                value = level + 0.5 * tex;
            }
            value += noise.sample(&mut rng);
            image.push(value.clamp(0.0, 1.0) as f32);
        }
    }

    Sample {
        id: format!("syn-{seed}-{index:05}"),
        height,
        width,
        image,
        mask: Some(mask),
    }
}

/// Generates `count` labeled samples; deterministic in `seed`.
pub fn generate_synthetic(count: usize, height: usize, width: usize, seed: u64) -> Vec<Sample> {
    (0..count).map(|i| generate_one(seed, i, height, width)).collect()
}
