//! Intensity normalization and two-stage contrast-limited adaptive histogram
//! equalization (TS-CLAHE).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, ImagePatch, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaheConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Per-bin clip level as a fraction of the tile's pixel count.
    pub clip_limit: f64,
    pub bins: usize,
}

impl ClaheConfig {
    pub const DEFAULT_CLIP_LIMIT: f64 = 0.01;
    pub const DEFAULT_BINS: usize = 256;

    pub fn grid(rows: usize, cols: usize) -> Self {
        Self {
            grid_rows: rows,
            grid_cols: cols,
            clip_limit: Self::DEFAULT_CLIP_LIMIT,
            bins: Self::DEFAULT_BINS,
        }
    }

    fn validate(&self, height: usize, width: usize) -> Result<()> {
        let side = height.min(width);
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::Config("CLAHE grid must be non-empty".into()));
        }
        if self.grid_rows > side || self.grid_cols > side {
            return Err(Error::Config(format!(
                "CLAHE grid {}x{} larger than image {height}x{width}",
                self.grid_rows, self.grid_cols
            )));
        }
        if !(self.clip_limit > 0.0 && self.clip_limit <= 1.0) {
            return Err(Error::Config(format!(
                "clip limit {} outside (0,1]",
                self.clip_limit
            )));
        }
        if self.bins < 2 {
            return Err(Error::Config("CLAHE needs at least 2 bins".into()));
        }
        Ok(())
    }
}

/// Stage grids used by [`ts_clahe`]: coarse 8x8 tiles, then 4x4.
pub const TS_CLAHE_GRIDS: [usize; 2] = [8, 4];

/// Maps intensities affinely onto [0,1]; a constant image becomes all zeros.
pub fn minmax_normalize(p: &ImagePatch) -> ImagePatch {
    let (lo, hi) = p.min_max();
    let range = hi - lo;
    let pixels = if range > 0.0 {
        p.pixels().mapv(|v| (v - lo) / range)
    } else {
        Array2::zeros(p.dim())
    };
    ImagePatch::new(pixels).expect("normalized intensities are finite")
}

/// Tile boundaries `[start, end)` splitting `len` into `parts` nearly equal runs.
fn tile_edges(len: usize, parts: usize) -> Vec<(usize, usize)> {
    (0..parts)
        .map(|i| (i * len / parts, (i + 1) * len / parts))
        .collect()
}

#[inline]
fn bin_of(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

/// Clipped-histogram equalization mapping for one tile, values in [0,1].
pub(crate) fn tile_mapping(values: impl Iterator<Item = f64>, bins: usize, clip_limit: f64) -> Vec<f64> {
    let mut hist = vec![0.0f64; bins];
    let mut count = 0usize;
    for v in values {
        hist[bin_of(v, bins)] += 1.0;
        count += 1;
    }
    let total = count as f64;
    let clip = clip_limit * total;
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > clip {
            excess += *h - clip;
            *h = clip;
        }
    }
    let share = excess / bins as f64;
    let mut cdf = 0.0;
    hist.iter()
        .map(|h| {
            cdf += h + share;
            (cdf / total).min(1.0)
        })
        .collect()
}

/// Contrast-limited adaptive histogram equalization with bilinear blending
/// of the four surrounding tile mappings.
pub fn clahe(p: &ImagePatch, cfg: &ClaheConfig) -> Result<ImagePatch> {
    let (h, w) = p.dim();
    cfg.validate(h, w)?;
    let rows = tile_edges(h, cfg.grid_rows);
    let cols = tile_edges(w, cfg.grid_cols);

    let mut maps = Vec::with_capacity(rows.len() * cols.len());
    for &(r0, r1) in &rows {
        for &(c0, c1) in &cols {
            let px = p.pixels();
            let values = (r0..r1).flat_map(move |r| (c0..c1).map(move |c| px[[r, c]]));
            maps.push(tile_mapping(values, cfg.bins, cfg.clip_limit));
        }
    }
    let map_at = |tr: usize, tc: usize, b: usize| maps[tr * cols.len() + tc][b];

    let centers = |edges: &[(usize, usize)]| -> Vec<f64> {
        edges
            .iter()
            .map(|&(a, b)| (a + b) as f64 / 2.0 - 0.5)
            .collect()
    };
    let row_centers = centers(&rows);
    let col_centers = centers(&cols);
    let row_weights: Vec<_> = (0..h).map(|y| interp_pair(y as f64, &row_centers)).collect();
    let col_weights: Vec<_> = (0..w).map(|x| interp_pair(x as f64, &col_centers)).collect();

    let out = Array2::from_shape_fn((h, w), |(y, x)| {
        let b = bin_of(p.get(y, x), cfg.bins);
        let (r0, r1, wy) = row_weights[y];
        let (c0, c1, wx) = col_weights[x];
        let top = lerp(map_at(r0, c0, b), map_at(r0, c1, b), wx);
        let bottom = lerp(map_at(r1, c0, b), map_at(r1, c1, b), wx);
        lerp(top, bottom, wy).clamp(0.0, 1.0)
    });
    ImagePatch::new(out)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Neighbouring tile indices and blend weight for coordinate `pos`.
fn interp_pair(pos: f64, centers: &[f64]) -> (usize, usize, f64) {
    let last = centers.len() - 1;
    if pos <= centers[0] {
        return (0, 0, 0.0);
    }
    if pos >= centers[last] {
        return (last, last, 0.0);
    }
    let i = centers.iter().rposition(|&c| c <= pos).unwrap_or(0).min(last - 1);
    let t = (pos - centers[i]) / (centers[i + 1] - centers[i]);
    (i, i + 1, t)
}

/// Two cascaded CLAHE passes: an 8x8 tile grid, then a 4x4 tile grid.
pub fn ts_clahe(p: &ImagePatch) -> Result<ImagePatch> {
    let stage1 = clahe(p, &ClaheConfig::grid(TS_CLAHE_GRIDS[0], TS_CLAHE_GRIDS[0]))?;
    clahe(&stage1, &ClaheConfig::grid(TS_CLAHE_GRIDS[1], TS_CLAHE_GRIDS[1]))
}

/// Normalization followed by TS-CLAHE when `enhance` is set.
pub fn preprocess(p: &ImagePatch, enhance: bool) -> Result<ImagePatch> {
    let normalized = minmax_normalize(p);
    if enhance {
        ts_clahe(&normalized)
    } else {
        Ok(normalized)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(h: usize, w: usize, v: &[f64]) -> ImagePatch {
        ImagePatch::from_vec(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_affine() {
        let p = patch(3, 3, &[0.2, 0.4, 0.6, 0.2, 0.4, 0.6, 0.2, 0.4, 0.6]);
        let n = minmax_normalize(&p);
        let row: Vec<f64> = n.pixels().row(0).to_vec();
        assert!((row[0] - 0.0).abs() < 1e-15);
        assert!((row[1] - 0.5).abs() < 1e-15);
        assert!((row[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_constant_is_zero() {
        let n = minmax_normalize(&patch(3, 3, &[0.7; 9]));
        assert!(n.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_keeps_unit_extremes() {
        let v = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        assert_eq!(minmax_normalize(&patch(3, 3, &v)), patch(3, 3, &v));
    }

    #[test]
    fn grid_larger_than_image_rejected() {
        let p = patch(3, 3, &[0.1; 9]);
        assert!(matches!(clahe(&p, &ClaheConfig::grid(4, 1)), Err(Error::Config(_))));
        assert!(matches!(ts_clahe(&p), Err(Error::Config(_))));
    }

    #[test]
    fn interpolation_weights_at_borders() {
        let centers = [7.5, 23.5];
        assert_eq!(interp_pair(0.0, &centers), (0, 0, 0.0));
        assert_eq!(interp_pair(31.0, &centers), (1, 1, 0.0));
        let (a, b, t) = interp_pair(15.5, &centers);
        assert_eq!((a, b), (0, 1));
        assert!((t - 0.5).abs() < 1e-12);
    }
}
