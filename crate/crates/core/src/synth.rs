//! Seeded synthetic patch generators used by tests, benchmarks and the
//! `synth` command.
//!
//! Every generator draws from its own `ChaCha8Rng`, so a `(kind, seed)` pair
//! always yields the same pixels.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::patch::PATCH_SIDE;
use crate::patchio::{Dataset, Density, Label, PatchRecord};
use crate::{ImagePatch, Result};

pub const NOISE_SIGMA: f64 = 0.05;
/// Grating wavelength in pixels.
pub const GRATING_PERIOD: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Texture {
    /// Slowly varying intensity with no dominant orientation.
    Smooth,
    /// Sinusoidal grating at the given angle in degrees.
    Grating { degrees: u32 },
    /// Bright disc with a soft edge.
    Blob,
    /// Bright core with thin radial spikes.
    Star,
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn smooth_field(rng: &mut ChaCha8Rng, side: usize) -> Array2<f64> {
    let base = rng.random_range(0.3..0.5);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.04..0.08),
                rng.random_range(0.5..1.5) / side as f64,
                rng.random_range(0.5..1.5) / side as f64,
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    Array2::from_shape_fn((side, side), |(y, x)| {
        base + waves
            .iter()
            .map(|&(amp, fy, fx, ph)| amp * (2.0 * PI * (fy * y as f64 + fx * x as f64) + ph).sin())
            .sum::<f64>()
    })
}

fn add_noise(img: &mut Array2<f64>, rng: &mut ChaCha8Rng, sigma: f64) {
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in img.iter_mut() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
}

/// One `side`×`side` patch of `texture` with additive Gaussian noise.
pub fn generate_sized(texture: Texture, seed: u64, side: usize) -> ImagePatch {
    let mut rng = rng_for(seed, 0x5EED);
    let mut img = smooth_field(&mut rng, side);
    let c = (side as f64 - 1.0) / 2.0;
    match texture {
        Texture::Smooth => {}
        Texture::Grating { degrees } => {
            let theta = (degrees as f64).to_radians();
            // Period and phase stay near fixed values so that signed
            // transform coefficients keep a consistent sign across patches.
            let period = GRATING_PERIOD;
            let phase = rng.random_range(-PI / 6.0..PI / 6.0);
            let amp = rng.random_range(0.15..0.22);
            for ((y, x), v) in img.indexed_iter_mut() {
                let along = x as f64 * theta.cos() + y as f64 * theta.sin();
                *v += amp * (2.0 * PI * along / period + phase).sin();
            }
        }
        Texture::Blob => {
            let (cy, cx) = (c + rng.random_range(-6.0..6.0), c + rng.random_range(-6.0..6.0));
            let radius = rng.random_range(0.16..0.24) * side as f64;
            let amp = rng.random_range(0.3..0.4);
            for ((y, x), v) in img.indexed_iter_mut() {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                *v += amp / (1.0 + ((d - radius) / 2.0).exp());
            }
        }
        Texture::Star => {
            let (cy, cx) = (c + rng.random_range(-6.0..6.0), c + rng.random_range(-6.0..6.0));
            let core = rng.random_range(0.06..0.09) * side as f64;
            let spikes = rng.random_range(10..16);
            let spin = rng.random_range(0.0..2.0 * PI);
            let reach = rng.random_range(0.38..0.46) * side as f64;
            let amp = rng.random_range(0.3..0.4);
            for ((y, x), v) in img.indexed_iter_mut() {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let d = (dy * dy + dx * dx).sqrt();
                let mut val = amp / (1.0 + ((d - core) / 1.5).exp());
                if d > 0.0 && d < reach {
                    let a = (dy.atan2(dx) - spin).rem_euclid(2.0 * PI / spikes as f64);
                    let off = a.min(2.0 * PI / spikes as f64 - a) * d;
                    let width = 1.2 * (1.0 - d / reach);
                    val = val.max(amp * (-(off * off) / (2.0 * width * width + 1e-9)).exp() * (1.0 - d / reach));
                }
                *v += val;
            }
        }
    }
    add_noise(&mut img, &mut rng, NOISE_SIGMA);
    ImagePatch::new(img).expect("generated patch is finite and large enough")
}

pub fn generate(texture: Texture, seed: u64) -> ImagePatch {
    generate_sized(texture, seed, PATCH_SIDE)
}

fn record(id: String, texture: Texture, seed: u64, density: Density, label: Label) -> PatchRecord {
    PatchRecord {
        id,
        patch: generate(texture, seed),
        density,
        label,
    }
}

/// `n` smooth normals and `n` grating abnormals, alternating 0° and 45°.
pub fn normal_abnormal_set(n: usize, seed: u64) -> Result<Dataset> {
    let mut records = Vec::with_capacity(2 * n);
    for i in 0..n {
        let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        records.push(record(format!("smooth_{i:04}.png"), Texture::Smooth, s, Density::D, Label::Normal));
        let degrees = if i % 2 == 0 { 0 } else { 45 };
        records.push(record(
            format!("grating_{i:04}.png"),
            Texture::Grating { degrees },
            s ^ 0xABCD,
            Density::D,
            Label::Benign,
        ));
    }
    Dataset::new(records)
}

/// `n` round blobs (benign) and `n` spiculated stars (malignant).
pub fn benign_malignant_set(n: usize, seed: u64) -> Result<Dataset> {
    let mut records = Vec::with_capacity(2 * n);
    for i in 0..n {
        let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        records.push(record(format!("blob_{i:04}.png"), Texture::Blob, s, Density::D, Label::Benign));
        records.push(record(format!("star_{i:04}.png"), Texture::Star, s ^ 0x5747, Density::D, Label::Malignant));
    }
    Dataset::new(records)
}

/// `n` patches of mixed textures whose labels are fair coin flips,
/// independent of the pixels.
pub fn noise_label_set(n: usize, seed: u64) -> Result<Dataset> {
    let mut label_rng = rng_for(seed, 0x1AB3);
    let kinds = [Texture::Smooth, Texture::Grating { degrees: 0 }, Texture::Blob, Texture::Star];
    let records = (0..n)
        .map(|i| {
            let label = if label_rng.random_bool(0.5) { Label::Benign } else { Label::Normal };
            record(
                format!("noise_{i:04}.png"),
                kinds[i % kinds.len()],
                seed.wrapping_mul(7_919).wrapping_add(i as u64),
                Density::D,
                label,
            )
        })
        .collect();
    Dataset::new(records)
}

/// Per-density `(normal, benign, malignant)` counts shaped like a small
/// mammographic collection. Density `e` has a single benign record.
pub const SUITE_COUNTS: [(Density, usize, usize, usize); 4] = [
    (Density::D, 12, 14, 11),
    (Density::E, 28, 1, 5),
    (Density::F, 24, 8, 6),
    (Density::G, 26, 9, 6),
];

/// Smooth normals, blob benigns and star malignants across four densities.
pub fn suite(seed: u64) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut k = 0u64;
    for (density, normal, benign, malignant) in SUITE_COUNTS {
        for (label, texture, count) in [
            (Label::Normal, Texture::Smooth, normal),
            (Label::Benign, Texture::Blob, benign),
            (Label::Malignant, Texture::Star, malignant),
        ] {
            for i in 0..count {
                let id = format!("{}_{}_{i:03}.png", density, label);
                records.push(record(id, texture, seed.wrapping_mul(1_000_003).wrapping_add(k), density, label));
                k += 1;
            }
        }
    }
    Dataset::new(records)
}
