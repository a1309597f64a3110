//! Gabor filter bank and the per-pixel magnitude/orientation fields that feed
//! the histogram descriptors.
//!
//! The bank samples the real part of
//! `G(x,y) = 1/(2πσ²) · exp(-(x²+y²)/(2σ²)) · exp(2πi·μ(x cosθ + y sinθ))`
//! at eight orientations `θ_t = π(t-1)/8`, with `μ = 1/√(2σ)`.
//! `x` runs along columns and `y` along rows.

use std::f64::consts::PI;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, ImagePatch, Result};

pub const ORIENTATIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    pub sigma: f64,
    /// Sinusoid frequency in cycles per pixel.
    pub mu: f64,
    pub orientations: usize,
    pub kernel_radius: usize,
}

impl GaborParams {
    /// Parameters derived from `σ` alone: `μ = 1/√(2σ)`, radius `round(3σ)` (at least 2).
    pub fn from_sigma(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("Gabor sigma must be positive, got {sigma}")));
        }
        Ok(Self {
            sigma,
            mu: 1.0 / (2.0 * sigma).sqrt(),
            orientations: ORIENTATIONS,
            kernel_radius: ((3.0 * sigma).round() as usize).max(2),
        })
    }

    /// `θ_t` for zero-based `t`.
    pub fn theta(&self, t: usize) -> f64 {
        PI * t as f64 / self.orientations as f64
    }
}

/// How the eight per-orientation responses collapse into one magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseRule {
    /// Minimum signed real response and its arg-min orientation.
    #[default]
    MinReal,
    /// Maximum absolute response (ablation).
    MaxAbs,
}

/// Per-pixel magnitude and orientation in `[0, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseField {
    pub magnitude: Array2<f64>,
    pub orientation: Array2<f64>,
}

impl ResponseField {
    pub fn dim(&self) -> (usize, usize) {
        self.magnitude.dim()
    }
}

#[derive(Debug, Clone)]
pub struct GaborBank {
    params: GaborParams,
    kernels: Vec<Array2<f64>>,
}

impl GaborBank {
    pub fn params(&self) -> &GaborParams {
        &self.params
    }

    pub fn kernels(&self) -> &[Array2<f64>] {
        &self.kernels
    }
}

/// Evaluates the real Gabor kernel at offset `(x, y)`.
pub fn gabor_real(x: f64, y: f64, theta: f64, mu: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let envelope = (-(x * x + y * y) / (2.0 * s2)).exp() / (2.0 * PI * s2);
    envelope * (2.0 * PI * mu * (x * theta.cos() + y * theta.sin())).cos()
}

pub fn build_bank(sigma: f64) -> Result<GaborBank> {
    let params = GaborParams::from_sigma(sigma)?;
    Ok(bank_from_params(params))
}

pub fn bank_from_params(params: GaborParams) -> GaborBank {
    let r = params.kernel_radius as isize;
    let side = params.kernel_radius * 2 + 1;
    let kernels = (0..params.orientations)
        .map(|t| {
            let theta = params.theta(t);
            Array2::from_shape_fn((side, side), |(i, j)| {
                let y = i as isize - r;
                let x = j as isize - r;
                gabor_real(x as f64, y as f64, theta, params.mu, params.sigma)
            })
        })
        .collect();
    GaborBank { params, kernels }
}

/// Same-size convolution with replicate padding:
/// `out(y,x) = Σ_{ky,kx} I(y-ky, x-kx) · K(ky,kx)`, summed with `ky` outermost.
pub fn convolve_replicate(p: &ImagePatch, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = p.dim();
    let side = kernel.nrows();
    let r = side / 2;
    let pw = w + 2 * r;
    let ph = h + 2 * r;
    let mut padded = vec![0.0; ph * pw];
    for py in 0..ph {
        for px in 0..pw {
            padded[py * pw + px] = p.get_clamped(py as isize - r as isize, px as isize - r as isize);
        }
    }
    let k = kernel.as_standard_layout();
    let k = k.as_slice().expect("standard layout");
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..side {
                // image row y - (ky - r), shifted by the padding r
                let row = (y + 2 * r - ky) * pw;
                let krow = &k[ky * side..(ky + 1) * side];
                for (kx, &kv) in krow.iter().enumerate() {
                    acc += padded[row + x + 2 * r - kx] * kv;
                }
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Magnitude/orientation field of the bank under `rule`.
pub fn bank_response(p: &ImagePatch, bank: &GaborBank, rule: ResponseRule) -> ResponseField {
    let responses: Vec<Array2<f64>> = bank
        .kernels
        .par_iter()
        .map(|k| convolve_replicate(p, k))
        .collect();
    let dim = p.dim();
    let mut magnitude = Array2::zeros(dim);
    let mut orientation = Array2::zeros(dim);
    for ((y, x), m) in magnitude.indexed_iter_mut() {
        let mut best_t = 0;
        let mut best = score(responses[0][[y, x]], rule);
        for (t, resp) in responses.iter().enumerate().skip(1) {
            let v = score(resp[[y, x]], rule);
            if v < best {
                best = v;
                best_t = t;
            }
        }
        *m = match rule {
            ResponseRule::MinReal => best,
            ResponseRule::MaxAbs => -best,
        };
        orientation[[y, x]] = bank.params.theta(best_t);
    }
    ResponseField {
        magnitude,
        orientation,
    }
}

#[inline]
fn score(v: f64, rule: ResponseRule) -> f64 {
    match rule {
        ResponseRule::MinReal => v,
        ResponseRule::MaxAbs => -v.abs(),
    }
}

/// Min-real Gabor response at scale `σ`.
pub fn gabor_response(p: &ImagePatch, sigma: f64) -> Result<ResponseField> {
    let bank = build_bank(sigma)?;
    Ok(bank_response(p, &bank, ResponseRule::MinReal))
}

/// Folds an angle onto `[0, π)`.
#[inline]
pub fn fold_orientation(theta: f64) -> f64 {
    let mut t = theta;
    if t < 0.0 {
        t += PI;
    }
    if t >= PI {
        t -= PI;
    }
    if !(0.0..PI).contains(&t) {
        0.0
    } else {
        t
    }
}

/// Central-difference gradient field with replicate borders.
pub fn gradient_response(p: &ImagePatch) -> ResponseField {
    let dim = p.dim();
    let mut magnitude = Array2::zeros(dim);
    let mut orientation = Array2::zeros(dim);
    for ((y, x), m) in magnitude.indexed_iter_mut() {
        let (yi, xi) = (y as isize, x as isize);
        let dx = p.get_clamped(yi, xi + 1) - p.get_clamped(yi, xi - 1);
        let dy = p.get_clamped(yi + 1, xi) - p.get_clamped(yi - 1, xi);
        *m = (dx * dx + dy * dy).sqrt();
        orientation[[y, x]] = gradient_orientation(dx, dy);
    }
    ResponseField {
        magnitude,
        orientation,
    }
}

/// `arctan(dy/dx)` on `[0, π)`; a vertical gradient maps to π/2, a null one to 0.
#[inline]
pub fn gradient_orientation(dx: f64, dy: f64) -> f64 {
    if dx == 0.0 {
        return if dy == 0.0 { 0.0 } else { PI / 2.0 };
    }
    fold_orientation((dy / dx).atan())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_value_sigma_one() {
        let bank = build_bank(1.0).unwrap();
        let r = bank.params().kernel_radius;
        let v = bank.kernels()[0][[r, r]];
        assert!((v - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((v - 0.15915).abs() < 1e-5);
    }

    #[test]
    fn mu_follows_sigma_rule() {
        let p = GaborParams::from_sigma(3.0).unwrap();
        assert!((p.mu - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((p.mu - 0.40825).abs() < 1e-5);
        assert_eq!(p.kernel_radius, 9);
        assert_eq!(GaborParams::from_sigma(0.3).unwrap().kernel_radius, 2);
    }

    #[test]
    fn thetas_cover_half_turn() {
        let p = GaborParams::from_sigma(2.0).unwrap();
        let thetas: Vec<f64> = (0..8).map(|t| p.theta(t)).collect();
        assert_eq!(thetas[0], 0.0);
        assert!((thetas[4] - PI / 2.0).abs() < 1e-15);
        assert!(thetas.iter().all(|&t| (0.0..PI).contains(&t)));
    }

    #[test]
    fn horizontal_and_vertical_kernels_are_transposes() {
        let bank = build_bank(2.0).unwrap();
        let k0 = &bank.kernels()[0];
        let k4 = &bank.kernels()[4];
        for ((i, j), &v) in k0.indexed_iter() {
            assert!((v - k4[[j, i]]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_positive_sigma_rejected() {
        assert!(matches!(build_bank(0.0), Err(Error::Domain(_))));
        assert!(matches!(build_bank(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_patch_ties_to_first_orientation() {
        let p = ImagePatch::from_vec(16, 16, vec![0.0; 256]).unwrap();
        let field = gabor_response(&p, 2.0).unwrap();
        assert!(field.orientation.iter().all(|&t| t == 0.0));
        assert!(field.magnitude.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn constant_patch_follows_kernel_sums() {
        // Diagonal kernels sum differently on a square grid, so a nonzero
        // constant picks the orientation with the smallest scaled sum.
        let c = 0.4;
        let p = ImagePatch::from_vec(16, 16, vec![c; 256]).unwrap();
        for sigma in [1.0, 2.0, 3.0] {
            let field = gabor_response(&p, sigma).unwrap();
            let bank = build_bank(sigma).unwrap();
            let sums: Vec<f64> = bank.kernels().iter().map(|k| c * k.sum()).collect();
            let min = sums.iter().copied().fold(f64::INFINITY, f64::min);
            let theta = field.orientation[[0, 0]];
            assert!(field.orientation.iter().all(|&t| t == theta), "sigma {sigma}");
            let t = (0..8).find(|&t| bank.params().theta(t) == theta).unwrap();
            assert!((sums[t] - min).abs() < 1e-12, "sigma {sigma}");
            for &m in field.magnitude.iter() {
                assert!((m - min).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ramps_give_axis_orientations() {
        let n = 16;
        let px = ImagePatch::from_fn(n, n, |(_, c)| c as f64 / n as f64).unwrap();
        let g = gradient_response(&px);
        for y in 1..n - 1 {
            for x in 1..n - 1 {
                assert!((g.magnitude[[y, x]] - 2.0 / n as f64).abs() < 1e-12);
                assert_eq!(g.orientation[[y, x]], 0.0);
            }
        }
        let py = ImagePatch::from_fn(n, n, |(r, _)| r as f64 / n as f64).unwrap();
        let g = gradient_response(&py);
        for y in 1..n - 1 {
            for x in 1..n - 1 {
                assert_eq!(g.orientation[[y, x]], PI / 2.0);
            }
        }
    }

    #[test]
    fn orientation_fold_edge_cases() {
        assert_eq!(gradient_orientation(0.0, 0.0), 0.0);
        assert_eq!(gradient_orientation(0.0, -3.0), PI / 2.0);
        assert!((gradient_orientation(-1.0, 1.0) - 3.0 * PI / 4.0).abs() < 1e-15);
        assert!(fold_orientation(-1e-18) < PI);
    }
}
