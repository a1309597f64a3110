//! The grayscale patch type shared by every stage of the pipeline.

use ndarray::Array2;

use crate::{Error, Result};

/// Working side length of a patch after ingestion.
pub const PATCH_SIDE: usize = 128;

/// A 2-D grid of finite intensities, indexed `[[row, col]]`.
///
/// Rows run along the image height (`M`) and columns along the width (`N`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    pixels: Array2<f64>,
}

impl ImagePatch {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        let (m, n) = pixels.dim();
        if m < 3 || n < 3 {
            return Err(Error::Domain(format!(
                "patch must be at least 3x3, got {m}x{n}"
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite intensity {v}")));
        }
        Ok(Self { pixels })
    }

    /// Builds a patch from a row-major buffer.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let pixels = Array2::from_shape_vec((height, width), data)
            .map_err(|e| Error::Domain(format!("bad patch buffer: {e}")))?;
        Self::new(pixels)
    }

    /// Builds a patch by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, f: impl FnMut((usize, usize)) -> f64) -> Result<Self> {
        Self::new(Array2::from_shape_fn((height, width), f))
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[[row, col]]
    }

    /// Pixel value with replicate (clamp-to-edge) borders.
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height() as isize - 1) as usize;
        let c = col.clamp(0, self.width() as isize - 1) as usize;
        self.pixels[[r, c]]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_and_non_finite() {
        assert!(ImagePatch::from_vec(2, 3, vec![0.0; 6]).is_err());
        let mut v = vec![0.0; 9];
        v[4] = f64::NAN;
        assert!(ImagePatch::from_vec(3, 3, v).is_err());
        assert!(ImagePatch::from_vec(3, 3, vec![0.5; 9]).is_ok());
    }

    #[test]
    fn clamped_access_replicates_edges() {
        let p = ImagePatch::from_fn(3, 4, |(r, c)| (r * 10 + c) as f64).unwrap();
        assert_eq!(p.get_clamped(-1, -5), 0.0);
        assert_eq!(p.get_clamped(7, 2), 22.0);
        assert_eq!(p.get_clamped(1, 9), 13.0);
    }
}
