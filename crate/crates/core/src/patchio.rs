//! Dataset ingestion: labeled manifests, 8-bit grayscale decoding and
//! density-wise slicing.
//!
//! A manifest is a UTF-8 CSV file with header `path,density,label`. Paths are
//! resolved against the manifest's directory and double as record ids.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ImageBuffer, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::patch::PATCH_SIDE;
use crate::{Error, ImagePatch, Result};

/// BIRADS breast density class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    D,
    E,
    F,
    G,
}

impl Density {
    pub const ALL: [Density; 4] = [Density::D, Density::E, Density::F, Density::G];

    pub fn as_str(self) -> &'static str {
        match self {
            Density::D => "d",
            Density::E => "e",
            Density::F => "f",
            Density::G => "g",
        }
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Density {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "d" => Ok(Density::D),
            "e" => Ok(Density::E),
            "f" => Ok(Density::F),
            "g" => Ok(Density::G),
            _ => Err(s.to_string()),
        }
    }
}

/// Ground-truth class of a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Benign,
    Malignant,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }

    pub fn is_abnormal(self) -> bool {
        self != Label::Normal
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Label::Normal),
            "benign" => Ok(Label::Benign),
            "malignant" => Ok(Label::Malignant),
            _ => Err(s.to_string()),
        }
    }
}

/// A density selector: one BIRADS class or the whole dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensitySel {
    D,
    E,
    F,
    G,
    All,
}

impl DensitySel {
    pub const GRID: [DensitySel; 5] = [
        DensitySel::D,
        DensitySel::E,
        DensitySel::F,
        DensitySel::G,
        DensitySel::All,
    ];

    pub fn matches(self, d: Density) -> bool {
        match self {
            DensitySel::All => true,
            DensitySel::D => d == Density::D,
            DensitySel::E => d == Density::E,
            DensitySel::F => d == Density::F,
            DensitySel::G => d == Density::G,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DensitySel::D => "d",
            DensitySel::E => "e",
            DensitySel::F => "f",
            DensitySel::G => "g",
            DensitySel::All => "all",
        }
    }
}

impl From<Density> for DensitySel {
    fn from(d: Density) -> Self {
        match d {
            Density::D => DensitySel::D,
            Density::E => DensitySel::E,
            Density::F => DensitySel::F,
            Density::G => DensitySel::G,
        }
    }
}

impl fmt::Display for DensitySel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DensitySel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(DensitySel::All);
        }
        s.parse::<Density>().map(Into::into)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub id: String,
    pub patch: ImagePatch,
    pub density: Density,
    pub label: Label,
}

/// Ordered collection of records with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<PatchRecord>,
}

impl Dataset {
    pub fn new(records: Vec<PatchRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate record id {:?}", r.id)));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PatchRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PatchRecord> {
        self.records.iter()
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a PatchRecord;
    type IntoIter = std::slice::Iter<'a, PatchRecord>;
    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

/// Records whose density matches `sel`, in their original order.
pub fn density_slice(ds: &Dataset, sel: DensitySel) -> Dataset {
    if sel == DensitySel::All {
        return ds.clone();
    }
    Dataset {
        records: ds
            .records
            .iter()
            .filter(|r| sel.matches(r.density))
            .cloned()
            .collect(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    path: String,
    density: String,
    label: String,
}

/// Loads every row of a manifest, decoding images concurrently.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, None, e))?;

    let headers = reader
        .headers()
        .map_err(|e| csv_error(path, None, e))?
        .clone();
    for required in ["path", "density", "label"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Manifest(format!(
                "{}: missing column {required:?}",
                path.display()
            )));
        }
    }

    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| csv_error(path, Some(row_no), e))?;
        let density = row.density.parse::<Density>().map_err(|token| Error::Parse {
            row: row_no,
            field: "density",
            token,
        })?;
        let label = row.label.parse::<Label>().map_err(|token| Error::Parse {
            row: row_no,
            field: "label",
            token,
        })?;
        rows.push((row_no, row.path, density, label));
    }

    let records = rows
        .into_par_iter()
        .map(|(row_no, id, density, label)| {
            let file = base.join(&id);
            let patch = decode_patch(&file).map_err(|e| match e {
                Error::Io { path, source, .. } => Error::Io {
                    path,
                    row: Some(row_no),
                    source,
                },
                other => other,
            })?;
            Ok(PatchRecord {
                id,
                patch,
                density,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records)
}

fn csv_error(path: &Path, row: Option<usize>, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            row,
            source,
        },
        other => Error::Manifest(format!(
            "{}{}: {other:?}",
            path.display(),
            row.map(|r| format!(" row {r}")).unwrap_or_default()
        )),
    }
}

/// Decodes an 8-bit grayscale PNG/PGM into a 128x128 patch scaled to [0,1].
pub fn decode_patch(path: &Path) -> Result<ImagePatch> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                message: format!("expected 8-bit grayscale, found {:?}", other.color()),
            })
        }
    };
    Ok(gray_to_patch(&gray))
}

fn gray_to_patch(gray: &ImageBuffer<Luma<u8>, Vec<u8>>) -> ImagePatch {
    let (w, h) = gray.dimensions();
    let side = PATCH_SIDE as u32;
    let data: Vec<f64> = if (w, h) == (side, side) {
        gray.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect()
    } else {
        let scaled: ImageBuffer<Luma<f32>, Vec<f32>> =
            ImageBuffer::from_fn(w, h, |x, y| Luma([f32::from(gray.get_pixel(x, y)[0]) / 255.0]));
        let resized =
            image::imageops::resize(&scaled, side, side, image::imageops::FilterType::Triangle);
        resized
            .as_raw()
            .iter()
            .map(|&v| f64::from(v).clamp(0.0, 1.0))
            .collect()
    };
    ImagePatch::from_vec(PATCH_SIDE, PATCH_SIDE, data).expect("decoded intensities are finite")
}

/// Quantizes a [0,1] patch to 8 bits.
pub fn patch_to_gray(p: &ImagePatch) -> ImageBuffer<Luma<u8>, Vec<u8>> {
    let (h, w) = p.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = p.get(y as usize, x as usize).clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    })
}

/// Writes every record's image under `dir` (at its id) plus `dir/manifest.csv`.
pub fn write_manifest(ds: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest).map_err(|e| csv_error(&manifest, None, e))?;
    for rec in ds {
        let file = dir.join(&rec.id);
        if let Some(parent) = file.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        patch_to_gray(&rec.patch).save(&file).map_err(|e| Error::Decode {
            path: file.clone(),
            message: e.to_string(),
        })?;
        writer
            .serialize(ManifestRow {
                path: rec.id.clone(),
                density: rec.density.to_string(),
                label: rec.label.to_string(),
            })
            .map_err(|e| csv_error(&manifest, None, e))?;
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, density: Density, label: Label) -> PatchRecord {
        PatchRecord {
            id: id.to_string(),
            patch: ImagePatch::from_vec(3, 3, vec![0.5; 9]).unwrap(),
            density,
            label,
        }
    }

    #[test]
    fn tokens_parse_case_insensitively() {
        assert_eq!("E".parse::<Density>(), Ok(Density::E));
        assert_eq!("x".parse::<Density>(), Err("x".to_string()));
        assert_eq!("Malignant".parse::<Label>(), Ok(Label::Malignant));
        assert_eq!("all".parse::<DensitySel>(), Ok(DensitySel::All));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let recs = vec![
            record("a", Density::D, Label::Normal),
            record("a", Density::E, Label::Benign),
        ];
        assert!(matches!(Dataset::new(recs), Err(Error::Manifest(_))));
    }

    #[test]
    fn slice_with_no_matches_is_empty() {
        let ds = Dataset::new(vec![record("a", Density::D, Label::Normal)]).unwrap();
        assert!(density_slice(&ds, DensitySel::G).is_empty());
        assert_eq!(density_slice(&ds, DensitySel::All), ds);
    }
}
