//! Cell/block orientation histograms shared by HOG (gradient field) and HOT
//! (Gabor field).

use std::f64::consts::PI;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::features::{digest_of, DescriptorTag, FeatureVector};
use crate::gabor::{bank_from_params, bank_response, gradient_response, GaborParams, ResponseField, ResponseRule};
use crate::{Error, ImagePatch, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    /// Cells along each side of the patch (`c`).
    pub cells_per_side: usize,
    /// Block side in cells (`l`).
    pub block_side: usize,
    /// Orientation bins over `[0, π)` (`B`).
    pub bins: usize,
    /// Guard term in the block L2 normalization.
    pub epsilon: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            cells_per_side: 16,
            block_side: 2,
            bins: 8,
            epsilon: 1e-5,
        }
    }
}

impl HistogramConfig {
    /// `(c - l + 1)²` overlapping blocks.
    pub fn block_count(&self) -> usize {
        let per_side = self.cells_per_side - self.block_side + 1;
        per_side * per_side
    }

    /// `l² · (c - l + 1)² · B`.
    pub fn descriptor_len(&self) -> usize {
        self.block_side * self.block_side * self.block_count() * self.bins
    }

    fn validate(&self) -> Result<()> {
        if self.cells_per_side == 0 || self.block_side == 0 || self.bins == 0 {
            return Err(Error::Config("histogram sizes must be positive".into()));
        }
        if self.block_side > self.cells_per_side {
            return Err(Error::Config(format!(
                "block side {} exceeds cells per side {}",
                self.block_side, self.cells_per_side
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Pixel size `(rows, cols)` of one cell for a field of shape `dim`.
    pub fn cell_shape(&self, dim: (usize, usize)) -> Result<(usize, usize)> {
        self.validate()?;
        let c = self.cells_per_side;
        let (h, w) = dim;
        if h % c != 0 || w % c != 0 || h < c || w < c {
            return Err(Error::Config(format!(
                "patch {h}x{w} is not divisible into {c}x{c} cells"
            )));
        }
        Ok((h / c, w / c))
    }
}

/// Bin index of an orientation in `[0, π)` under half-open intervals.
#[inline]
pub fn orientation_bin(theta: f64, bins: usize) -> usize {
    let b = (theta / (PI / bins as f64)).floor();
    if b < 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

/// Unnormalized per-cell histograms, indexed `[cell_row, cell_col, bin]`.
pub fn cell_histograms(r: &ResponseField, cfg: &HistogramConfig) -> Result<Array3<f64>> {
    let (ch, cw) = cfg.cell_shape(r.dim())?;
    let c = cfg.cells_per_side;
    let mut hist = Array3::zeros((c, c, cfg.bins));
    for ((y, x), &m) in r.magnitude.indexed_iter() {
        let b = orientation_bin(r.orientation[[y, x]], cfg.bins);
        hist[[y / ch, x / cw, b]] += m;
    }
    Ok(hist)
}

/// Overlapping `l x l` blocks in row-major order, each L2-normalized as
/// `HB / sqrt(|HB|² + e²)` and concatenated.
pub fn block_descriptor(hc: &Array3<f64>, cfg: &HistogramConfig) -> Vec<f64> {
    let (c, _, bins) = hc.dim();
    let l = cfg.block_side;
    let per_side = c + 1 - l;
    let block_len = l * l * bins;
    let mut out = Vec::with_capacity(per_side * per_side * block_len);
    let mut block = Vec::with_capacity(block_len);
    for by in 0..per_side {
        for bx in 0..per_side {
            block.clear();
            for cy in by..by + l {
                for cx in bx..bx + l {
                    block.extend((0..bins).map(|b| hc[[cy, cx, b]]));
                }
            }
            let norm2: f64 = block.iter().map(|v| v * v).sum();
            let denom = (norm2 + cfg.epsilon * cfg.epsilon).sqrt();
            out.extend(block.iter().map(|v| v / denom));
        }
    }
    out
}

/// Histogram descriptor of an arbitrary response field.
pub fn histogram_descriptor(r: &ResponseField, cfg: &HistogramConfig) -> Result<Vec<f64>> {
    let hc = cell_histograms(r, cfg)?;
    Ok(block_descriptor(&hc, cfg))
}

#[derive(Serialize)]
struct HotDigest<'a> {
    tag: DescriptorTag,
    sigma: f64,
    rule: ResponseRule,
    hist: &'a HistogramConfig,
}

pub fn extract_hog(p: &ImagePatch, cfg: &HistogramConfig) -> Result<FeatureVector> {
    let values = histogram_descriptor(&gradient_response(p), cfg)?;
    Ok(FeatureVector::new(
        values,
        DescriptorTag::Hog,
        digest_of(&(DescriptorTag::Hog, cfg)),
    ))
}

pub fn extract_hot(p: &ImagePatch, sigma: f64, cfg: &HistogramConfig) -> Result<FeatureVector> {
    extract_hot_with_rule(p, sigma, ResponseRule::MinReal, cfg)
}

pub fn extract_hot_with_rule(
    p: &ImagePatch,
    sigma: f64,
    rule: ResponseRule,
    cfg: &HistogramConfig,
) -> Result<FeatureVector> {
    cfg.cell_shape(p.dim())?;
    let bank = bank_from_params(GaborParams::from_sigma(sigma)?);
    let values = histogram_descriptor(&bank_response(p, &bank, rule), cfg)?;
    let digest = digest_of(&HotDigest {
        tag: DescriptorTag::Hot,
        sigma,
        rule,
        hist: cfg,
    });
    Ok(FeatureVector::new(values, DescriptorTag::Hot, digest))
}
