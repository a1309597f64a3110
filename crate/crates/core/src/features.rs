//! Descriptor configuration, feature vectors and feature-matrix files.
//!
//! Two on-disk matrix formats are supported:
//!
//! * CSV with header `id,f0,...,f{L-1}`, one row per patch;
//! * a compact binary container: magic `TXD1`, little-endian `u32` rows,
//!   `u32` cols, then the `f64` payload in row-major order.

use std::fmt;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::enhance::preprocess;
use crate::gabor::ResponseRule;
use crate::hox::{extract_hog, extract_hot_with_rule, HistogramConfig};
use crate::patchio::Dataset;
use crate::pbdct::{band_mask, extract_pbdct};
use crate::{Error, ImagePatch, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DescriptorTag {
    Hog,
    Hot,
    Pbdct,
}

impl fmt::Display for DescriptorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DescriptorTag::Hog => "HOG",
            DescriptorTag::Hot => "HOT",
            DescriptorTag::Pbdct => "PBDCT",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub tag: DescriptorTag,
    pub params_digest: String,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, tag: DescriptorTag, params_digest: String) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self {
            values,
            tag,
            params_digest,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Hex SHA-256 prefix of the JSON encoding of `value`.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("digest input serializes");
    let hash = Sha256::digest(&json);
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Which descriptor to compute and with what parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DescriptorKind {
    Hog {
        hist: HistogramConfig,
    },
    Hot {
        sigma: f64,
        #[serde(default)]
        rule: ResponseRule,
        hist: HistogramConfig,
    },
    Pbdct {
        keep_fraction: f64,
    },
}

impl DescriptorKind {
    pub fn tag(&self) -> DescriptorTag {
        match self {
            DescriptorKind::Hog { .. } => DescriptorTag::Hog,
            DescriptorKind::Hot { .. } => DescriptorTag::Hot,
            DescriptorKind::Pbdct { .. } => DescriptorTag::Pbdct,
        }
    }
}

/// Full generating configuration: enhancement plus descriptor parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    pub descriptor: DescriptorKind,
    /// Apply TS-CLAHE after min-max normalization.
    pub enhance: bool,
}

impl DescriptorConfig {
    pub fn hog() -> Self {
        Self {
            descriptor: DescriptorKind::Hog {
                hist: HistogramConfig::default(),
            },
            enhance: true,
        }
    }

    pub fn hot(sigma: f64) -> Self {
        Self {
            descriptor: DescriptorKind::Hot {
                sigma,
                rule: ResponseRule::MinReal,
                hist: HistogramConfig::default(),
            },
            enhance: true,
        }
    }

    pub fn pbdct(keep_fraction: f64) -> Self {
        Self {
            descriptor: DescriptorKind::Pbdct { keep_fraction },
            enhance: true,
        }
    }

    pub fn with_enhance(mut self, enhance: bool) -> Self {
        self.enhance = enhance;
        self
    }

    pub fn digest(&self) -> String {
        digest_of(self)
    }

    /// Preprocesses `p` and computes the configured descriptor.
    pub fn extract(&self, p: &ImagePatch) -> Result<FeatureVector> {
        let q = preprocess(p, self.enhance)?;
        let mut fv = match self.descriptor {
            DescriptorKind::Hog { hist } => extract_hog(&q, &hist)?,
            DescriptorKind::Hot { sigma, rule, hist } => extract_hot_with_rule(&q, sigma, rule, &hist)?,
            DescriptorKind::Pbdct { keep_fraction } => {
                let mask = band_mask(q.dim(), keep_fraction)?;
                extract_pbdct(&q, &mask)?
            }
        };
        fv.params_digest = self.digest();
        Ok(fv)
    }
}

/// Row-per-patch feature matrix with ids and the generating digest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub values: Array2<f64>,
    pub params_digest: String,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }
}

/// Extracts `cfg` for every record of `ds`, in record order.
pub fn extract_dataset(ds: &Dataset, cfg: &DescriptorConfig) -> Result<FeatureMatrix> {
    let vectors = ds
        .records()
        .par_iter()
        .map(|r| cfg.extract(&r.patch))
        .collect::<Result<Vec<_>>>()?;
    let cols = vectors.first().map_or(0, FeatureVector::len);
    if vectors.iter().any(|v| v.len() != cols) {
        return Err(Error::Config("descriptor lengths differ across patches".into()));
    }
    let mut values = Array2::zeros((vectors.len(), cols));
    for (mut row, v) in values.rows_mut().into_iter().zip(&vectors) {
        row.assign(&ndarray::ArrayView1::from(&v.values[..]));
    }
    Ok(FeatureMatrix {
        ids: ds.records().iter().map(|r| r.id.clone()).collect(),
        values,
        params_digest: cfg.digest(),
    })
}

pub fn write_csv(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::Manifest(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..m.cols()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(io)?;
    for (id, row) in m.ids.iter().zip(m.values.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::Manifest(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let cols = r.headers().map_err(io)?.len().saturating_sub(1);
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(io)?;
        ids.push(rec.get(0).unwrap_or_default().to_string());
        for field in rec.iter().skip(1) {
            data.push(field.parse::<f64>().map_err(|_| {
                Error::Manifest(format!("{}: bad number {field:?}", path.display()))
            })?);
        }
    }
    let values = Array2::from_shape_vec((ids.len(), cols), data)
        .map_err(|e| Error::Manifest(format!("{}: ragged rows: {e}", path.display())))?;
    Ok(FeatureMatrix {
        ids,
        values,
        params_digest: String::new(),
    })
}

pub const TXD_MAGIC: &[u8; 4] = b"TXD1";

pub fn encode_binary(values: &Array2<f64>) -> Result<Vec<u8>> {
    let (rows, cols) = values.dim();
    let rows32 = u32::try_from(rows).map_err(|_| Error::Config("too many rows".into()))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::Config("too many columns".into()))?;
    let mut buf = Vec::with_capacity(12 + rows * cols * 8);
    buf.extend_from_slice(TXD_MAGIC);
    buf.extend_from_slice(&rows32.to_le_bytes());
    buf.extend_from_slice(&cols32.to_le_bytes());
    for v in values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_binary(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 12 {
        return Err(Error::Format {
            offset: bytes.len(),
            message: "truncated TXD1 header".into(),
        });
    }
    if &bytes[..4] != TXD_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected TXD1".into(),
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| Error::Format {
            offset: 4,
            message: "matrix size overflows".into(),
        })?;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected),
            message: format!("payload length {} but header implies {expected}", bytes.len()),
        });
    }
    let data = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

pub fn write_binary(values: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_binary(values)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_binary(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_binary(&bytes)
}
