//! Density-wise two-stage classification: normal vs abnormal, then benign vs
//! malignant on abnormal predictions.
//!
//! Each stage chains DP ranking, the incremental prefix search and a final
//! SVM fitted on the chosen prefix. Trained bundles persist in a versioned
//! `TXPB` container: magic, `u16` version, a `u32`-length JSON header and a
//! little-endian `f64` weight payload.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dpselect::{default_cap, dp_scores_with, incremental_select, DpFormula, InnerCvEvaluator, SubsetSearchResult};
use crate::features::{extract_dataset, DescriptorConfig, FeatureVector};
use crate::patchio::{density_slice, Dataset, DensitySel, Label};
use crate::svm::{train_svm, Kernel, Standardizer, SvmModel, SvmParams};
use crate::{Error, ImagePatch, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    NormalAbnormal,
    BenignMalignant,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::NormalAbnormal => 1,
            Stage::BenignMalignant => 2,
        }
    }

    /// Positive-class membership of a ground-truth label, or `None` when the
    /// label does not take part in this stage.
    pub fn target(self, label: Label) -> Option<bool> {
        match self {
            Stage::NormalAbnormal => Some(label.is_abnormal()),
            Stage::BenignMalignant => match label {
                Label::Normal => None,
                Label::Benign => Some(false),
                Label::Malignant => Some(true),
            },
        }
    }

    pub fn class_names(self) -> [&'static str; 2] {
        match self {
            Stage::NormalAbnormal => ["normal", "abnormal"],
            Stage::BenignMalignant => ["benign", "malignant"],
        }
    }
}

/// Knobs shared by every stage fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub svm: SvmParams,
    /// Largest prefix tried by the search; `None` means `min(features, 5200)`.
    pub cap: Option<usize>,
    pub dp_formula: DpFormula,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            svm: SvmParams::default(),
            cap: None,
            dp_formula: DpFormula::Welch,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageFit {
    pub search: SubsetSearchResult,
    pub svm: SvmModel,
}

impl StageFit {
    pub fn selected(&self) -> &[usize] {
        &self.search.selected_indices
    }

    pub fn score_row(&self, row: &[f64]) -> Result<f64> {
        let picked: Vec<f64> = self.selected().iter().map(|&j| row[j]).collect();
        Ok(self.svm.decision(&picked)?.raw)
    }
}

/// DP ranking, prefix search and final SVM on one training set.
pub fn fit_stage(x: ArrayView2<f64>, labels: &[bool], opts: &TrainOptions, seed: u64) -> Result<StageFit> {
    let ranking = dp_scores_with(x, labels, opts.dp_formula)?;
    let cap = opts
        .cap
        .map_or_else(|| default_cap(x.ncols()), |c| c.min(x.ncols()));
    let mut evaluator = InnerCvEvaluator::new(x, labels, opts.svm, seed)?;
    let search = incremental_select(&ranking, &mut evaluator, cap)?;
    let xs = x.select(Axis(1), &search.selected_indices);
    let svm = train_svm(xs.view(), labels, &opts.svm)?;
    Ok(StageFit { search, svm })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageModel {
    pub stage: Stage,
    pub descriptor_config: DescriptorConfig,
    pub config_digest: String,
    pub selected_indices: Vec<usize>,
    pub svm: SvmModel,
}

impl StageModel {
    pub fn score(&self, fv: &FeatureVector) -> Result<f64> {
        if fv.params_digest != self.config_digest {
            return Err(Error::Config(format!(
                "feature digest {} does not match model digest {}",
                fv.params_digest, self.config_digest
            )));
        }
        if let Some(&j) = self.selected_indices.iter().find(|&&j| j >= fv.len()) {
            return Err(Error::Config(format!(
                "selected feature {j} outside descriptor of length {}",
                fv.len()
            )));
        }
        let picked: Vec<f64> = self.selected_indices.iter().map(|&j| fv.values[j]).collect();
        Ok(self.svm.decision(&picked)?.raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineBundle {
    pub density: DensitySel,
    pub stage1: StageModel,
    pub stage2: Option<StageModel>,
    pub warnings: Vec<String>,
}

/// Mixes two seeds into a new one (splitmix64 finalizer).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stage_rows(ds: &Dataset, stage: Stage) -> (Vec<usize>, Vec<bool>) {
    ds.records()
        .iter()
        .enumerate()
        .filter_map(|(i, r)| stage.target(r.label).map(|t| (i, t)))
        .unzip()
}

pub fn train_pipeline(
    ds: &Dataset,
    density: DensitySel,
    cfg: &DescriptorConfig,
    opts: &TrainOptions,
    seed: u64,
) -> Result<PipelineBundle> {
    let slice = density_slice(ds, density);
    if slice.is_empty() {
        return Err(Error::Training(format!("density slice {density} is empty")));
    }
    let features = extract_dataset(&slice, cfg)?;
    let digest = cfg.digest();
    let mut warnings = Vec::new();

    let (rows1, y1) = stage_rows(&slice, Stage::NormalAbnormal);
    if y1.iter().all(|&t| t) || y1.iter().all(|&t| !t) {
        return Err(Error::Training(format!(
            "stage 1 on slice {density} needs both normal and abnormal records"
        )));
    }
    let x1 = features.values.select(Axis(0), &rows1);
    let fit1 = fit_stage(x1.view(), &y1, opts, mix_seed(seed, 1))?;
    let stage1 = StageModel {
        stage: Stage::NormalAbnormal,
        descriptor_config: *cfg,
        config_digest: digest.clone(),
        selected_indices: fit1.search.selected_indices,
        svm: fit1.svm,
    };

    let (rows2, y2) = stage_rows(&slice, Stage::BenignMalignant);
    let malignant = y2.iter().filter(|&&t| t).count();
    let benign = y2.len() - malignant;
    let stage2 = if benign < 2 || malignant < 2 {
        warnings.push(format!(
            "stage 2 not trained on slice {density}: {benign} benign, {malignant} malignant (need 2 each)"
        ));
        None
    } else {
        let x2 = features.values.select(Axis(0), &rows2);
        let fit2 = fit_stage(x2.view(), &y2, opts, mix_seed(seed, 2))?;
        Some(StageModel {
            stage: Stage::BenignMalignant,
            descriptor_config: *cfg,
            config_digest: digest,
            selected_indices: fit2.search.selected_indices,
            svm: fit2.svm,
        })
    };

    Ok(PipelineBundle {
        density,
        stage1,
        stage2,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictedLabel {
    Normal,
    Benign,
    Malignant,
    /// Stage 1 fired but no stage-2 model exists.
    Abnormal,
}

impl PredictedLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictedLabel::Normal => "normal",
            PredictedLabel::Benign => "benign",
            PredictedLabel::Malignant => "malignant",
            PredictedLabel::Abnormal => "abnormal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub label: PredictedLabel,
    pub stage1_score: f64,
    pub stage2_score: Option<f64>,
}

pub fn classify(bundle: &PipelineBundle, p: &ImagePatch) -> Result<Classification> {
    let fv = bundle.stage1.descriptor_config.extract(p)?;
    classify_features(bundle, &fv)
}

/// Classifies a precomputed descriptor; its digest must match the bundle.
pub fn classify_features(bundle: &PipelineBundle, fv: &FeatureVector) -> Result<Classification> {
    let s1 = bundle.stage1.score(fv)?;
    if s1 < 0.0 {
        return Ok(Classification {
            label: PredictedLabel::Normal,
            stage1_score: s1,
            stage2_score: None,
        });
    }
    match &bundle.stage2 {
        None => Ok(Classification {
            label: PredictedLabel::Abnormal,
            stage1_score: s1,
            stage2_score: None,
        }),
        Some(m) => {
            let s2 = m.score(fv)?;
            Ok(Classification {
                label: if s2 >= 0.0 {
                    PredictedLabel::Malignant
                } else {
                    PredictedLabel::Benign
                },
                stage1_score: s1,
                stage2_score: Some(s2),
            })
        }
    }
}

pub const BUNDLE_MAGIC: &[u8; 4] = b"TXPB";
pub const BUNDLE_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    density: DensitySel,
    warnings: Vec<String>,
    stages: Vec<StageHeader>,
}

#[derive(Serialize, Deserialize)]
struct StageHeader {
    stage: Stage,
    descriptor_config: DescriptorConfig,
    config_digest: String,
    selected_indices: Vec<usize>,
    kernel: Kernel,
    c: f64,
    tol: f64,
    bias: f64,
    iterations: usize,
    converged: bool,
    kkt_gap: f64,
    dim: usize,
    support_vectors: usize,
}

impl StageHeader {
    /// `f64` count of this stage's payload: means, stds, dual coefficients, vectors.
    fn payload_len(&self) -> Option<usize> {
        let sv = self.support_vectors.checked_mul(self.dim)?;
        self.dim.checked_mul(2)?.checked_add(self.support_vectors)?.checked_add(sv)
    }
}

pub fn encode_bundle(bundle: &PipelineBundle) -> Result<Vec<u8>> {
    let models: Vec<&StageModel> = std::iter::once(&bundle.stage1).chain(bundle.stage2.as_ref()).collect();
    let header = BundleHeader {
        density: bundle.density,
        warnings: bundle.warnings.clone(),
        stages: models
            .iter()
            .map(|m| StageHeader {
                stage: m.stage,
                descriptor_config: m.descriptor_config,
                config_digest: m.config_digest.clone(),
                selected_indices: m.selected_indices.clone(),
                kernel: m.svm.kernel,
                c: m.svm.c,
                tol: m.svm.tol,
                bias: m.svm.bias,
                iterations: m.svm.iterations,
                converged: m.svm.converged,
                kkt_gap: m.svm.kkt_gap,
                dim: m.svm.dim(),
                support_vectors: m.svm.dual_coeffs.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Config(format!("bundle header: {e}")))?;
    let json_len = u32::try_from(json.len()).map_err(|_| Error::Config("bundle header too large".into()))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(BUNDLE_MAGIC);
    buf.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    buf.extend_from_slice(&json_len.to_le_bytes());
    buf.extend_from_slice(&json);
    for m in models {
        let s = &m.svm;
        let floats = s
            .standardizer
            .means
            .iter()
            .chain(&s.standardizer.stds)
            .chain(&s.dual_coeffs)
            .chain(s.support_vectors.iter());
        for v in floats {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Format {
                offset: self.bytes.len(),
                message: format!("truncated while reading {what} ({n} bytes at offset {})", self.pos),
            }),
        }
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Format {
            offset: self.pos,
            message: format!("{what} length overflows"),
        })?;
        Ok(self
            .take(len, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_bundle(bytes: &[u8]) -> Result<PipelineBundle> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != BUNDLE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected TXPB".into(),
        });
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != BUNDLE_VERSION {
        return Err(Error::Version {
            found: version,
            supported: BUNDLE_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(cur.take(4, "header length")?.try_into().unwrap()) as usize;
    let header_at = cur.pos;
    let header: BundleHeader = serde_json::from_slice(cur.take(header_len, "header")?).map_err(|e| Error::Format {
        offset: header_at,
        message: format!("bad header: {e}"),
    })?;
    if header.stages.is_empty() || header.stages.len() > 2 {
        return Err(Error::Format {
            offset: header_at,
            message: format!("expected 1 or 2 stages, found {}", header.stages.len()),
        });
    }

    let mut models = Vec::with_capacity(header.stages.len());
    for h in header.stages {
        let at = cur.pos;
        let n = h.payload_len().ok_or_else(|| Error::Format {
            offset: at,
            message: "stage payload size overflows".into(),
        })?;
        let floats = cur.floats(n, "stage weights")?;
        let (means, rest) = floats.split_at(h.dim);
        let (stds, rest) = rest.split_at(h.dim);
        let (dual, sv) = rest.split_at(h.support_vectors);
        if h.selected_indices.len() != h.dim {
            return Err(Error::Format {
                offset: header_at,
                message: "selected index count does not match model dimension".into(),
            });
        }
        let svm = SvmModel {
            kernel: h.kernel,
            c: h.c,
            tol: h.tol,
            support_vectors: Array2::from_shape_vec((h.support_vectors, h.dim), sv.to_vec())
                .expect("payload length checked"),
            dual_coeffs: dual.to_vec(),
            bias: h.bias,
            standardizer: Standardizer {
                means: means.to_vec(),
                stds: stds.to_vec(),
            },
            iterations: h.iterations,
            converged: h.converged,
            kkt_gap: h.kkt_gap,
        };
        models.push(StageModel {
            stage: h.stage,
            descriptor_config: h.descriptor_config,
            config_digest: h.config_digest,
            selected_indices: h.selected_indices,
            svm,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format {
            offset: cur.pos,
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    let mut it = models.into_iter();
    let stage1 = it.next().expect("at least one stage");
    let stage2 = it.next();
    if stage1.stage != Stage::NormalAbnormal || stage2.as_ref().is_some_and(|m| m.stage != Stage::BenignMalignant) {
        return Err(Error::Format {
            offset: header_at,
            message: "stages out of order".into(),
        });
    }
    Ok(PipelineBundle {
        density: header.density,
        stage1,
        stage2,
        warnings: header.warnings,
    })
}

pub fn save_bundle(bundle: &PipelineBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_bundle(bundle)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<PipelineBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes)
}
