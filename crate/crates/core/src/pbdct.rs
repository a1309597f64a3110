//! 2-D DCT-II and the pass-band (low + middle frequency) coefficient pool.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::features::{digest_of, DescriptorTag, FeatureVector};
use crate::{Error, ImagePatch, Result};

/// Default share of the spectrum kept in the pool.
pub const DEFAULT_KEEP_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct DctCoefficients {
    /// `F(u, v)` with `u` along rows and `v` along columns.
    pub coeffs: Array2<f64>,
    pub source_shape: (usize, usize),
}

/// Orthonormal DCT-II basis: `A[u][x] = √(2/n)·α(u)·cos((2x+1)uπ/2n)`.
fn basis(n: usize) -> Array2<f64> {
    let scale = (2.0 / n as f64).sqrt();
    Array2::from_shape_fn((n, n), |(u, x)| {
        let alpha = if u == 0 { FRAC_1_SQRT_2 } else { 1.0 };
        scale * alpha * (((2 * x + 1) * u) as f64 * PI / (2 * n) as f64).cos()
    })
}

/// Orthonormal 2-D DCT-II, so that `Σ F² = Σ I²` and [`idct2`] inverts it.
pub fn dct2(p: &ImagePatch) -> DctCoefficients {
    let (m, n) = p.dim();
    let am = basis(m);
    let an = basis(n);
    let coeffs = am.dot(p.pixels()).dot(&an.t());
    DctCoefficients {
        coeffs,
        source_shape: (m, n),
    }
}

/// The variant with a bare `1/√(MN)·α(u)α(v)` prefactor, which is
/// exactly half of [`dct2`].
pub fn dct2_half_scale(p: &ImagePatch) -> DctCoefficients {
    let mut d = dct2(p);
    d.coeffs.mapv_inplace(|v| 0.5 * v);
    d
}

pub fn idct2(d: &DctCoefficients) -> Array2<f64> {
    let (m, n) = d.source_shape;
    basis(m).t().dot(&d.coeffs).dot(&basis(n))
}

/// Retained `(u, v)` indices in ascending zigzag rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMask {
    pub shape: (usize, usize),
    pub kept_indices: Vec<(usize, usize)>,
}

impl BandMask {
    pub fn pool_size(&self) -> usize {
        self.kept_indices.len()
    }
}

/// Zigzag rank key: anti-diagonal `u + v` first, then `u`.
#[inline]
pub fn zigzag_key(u: usize, v: usize) -> (usize, usize) {
    (u + v, u)
}

/// Keeps the first `ceil(keep_fraction · M · N)` coefficients in zigzag order.
pub fn band_mask(shape: (usize, usize), keep_fraction: f64) -> Result<BandMask> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Domain(format!(
            "keep fraction {keep_fraction} outside (0,1]"
        )));
    }
    let (m, n) = shape;
    let total = m * n;
    let pool = ((keep_fraction * total as f64).ceil() as usize).clamp(1, total);
    let mut idx: Vec<(usize, usize)> = (0..m).flat_map(|u| (0..n).map(move |v| (u, v))).collect();
    idx.sort_by_key(|&(u, v)| zigzag_key(u, v));
    idx.truncate(pool);
    Ok(BandMask {
        shape,
        kept_indices: idx,
    })
}

pub fn extract_pbdct(p: &ImagePatch, mask: &BandMask) -> Result<FeatureVector> {
    if p.dim() != mask.shape {
        return Err(Error::Config(format!(
            "band mask shape {:?} does not match patch {:?}",
            mask.shape,
            p.dim()
        )));
    }
    let d = dct2(p);
    let values = mask
        .kept_indices
        .iter()
        .map(|&(u, v)| d.coeffs[[u, v]])
        .collect();
    let digest = digest_of(&(DescriptorTag::Pbdct, mask.shape, mask.pool_size()));
    Ok(FeatureVector::new(values, DescriptorTag::Pbdct, digest))
}
