//! Repeated stratified two-fold cross-validation with sensitivity,
//! specificity, accuracy and trapezoidal AUC, plus report emission.
//!
//! Every fold fits feature selection and the classifier on its training half
//! only. Reports are JSON with a fixed field order; each trained cell also
//! gets a ROC point file `threshold,spec,sens`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{extract_dataset, DescriptorConfig, FeatureMatrix};
use crate::patchio::{Dataset, DensitySel};
use crate::pipeline::{fit_stage, mix_seed, Stage, TrainOptions};
use crate::{Error, Result};

/// Each class needs this many records so that every training half keeps two.
pub const MIN_PER_CLASS: usize = 4;
pub const FOLDS: usize = 2;

/// Splits indices into two halves, class by class, after a seeded shuffle.
/// Odd class sizes hand their extra record alternately to each half.
pub fn stratified_halves<R: Rng + ?Sized>(labels: &[bool], rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut a = Vec::with_capacity(labels.len() / 2 + 1);
    let mut b = Vec::with_capacity(labels.len() / 2 + 1);
    let mut extra_to_a = true;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let mut take = idx.len() / 2;
        if idx.len() % 2 == 1 {
            if extra_to_a {
                take += 1;
            }
            extra_to_a = !extra_to_a;
        }
        a.extend_from_slice(&idx[..take]);
        b.extend_from_slice(&idx[take..]);
    }
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Self {
        let mut c = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Percentages; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.fp + c.tn),
        accuracy: ratio(c.tp + c.tn, c.total()),
    }
}

/// ROC sweep from the `+∞` threshold down through every distinct score.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    /// `(specificity %, sensitivity %)` for the matching threshold.
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    /// `½ Σ (Spec(k) − Spec(k+1)) · (Sens(k) + Sens(k+1))`, rescaled to percent.
    pub fn area(&self) -> f64 {
        let sum: f64 = self
            .points
            .windows(2)
            .map(|w| 0.5 * (w[0].0 - w[1].0) * (w[0].1 + w[1].1))
            .sum();
        sum / 100.0
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,spec,sens\n");
        for (t, (spec, sens)) in self.thresholds.iter().zip(&self.points) {
            let t = if t.is_infinite() { "inf".to_string() } else { format!("{t:?}") };
            let _ = writeln!(out, "{t},{spec:?},{sens:?}");
        }
        out
    }
}

/// Tied scores move together as one step. `None` when a class is missing.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Option<RocCurve> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 || scores.len() != labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));

    let mut thresholds = vec![f64::INFINITY];
    let mut points = vec![(100.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        thresholds.push(t);
        points.push((
            100.0 * (neg - fp) as f64 / neg as f64,
            100.0 * tp as f64 / pos as f64,
        ));
    }
    Some(RocCurve { thresholds, points })
}

pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    roc_curve(scores, labels).map(|r| r.area())
}

/// Repeats, their seeds and the per-fold training options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub seeds: Vec<u64>,
    pub train: TrainOptions,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            train: TrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub selected_size: usize,
    pub confusion: ConfusionCounts,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub repeat: usize,
    pub seed: u64,
    pub folds: Vec<FoldRecord>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    /// Sample standard deviation over repeats.
    pub std: Option<f64>,
    pub repeats_defined: usize,
    pub folds_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub sensitivity: MetricSummary,
    pub specificity: MetricSummary,
    pub accuracy: MetricSummary,
    pub auc: MetricSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Absent,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub density: DensitySel,
    pub stage: Stage,
    pub status: CellStatus,
    pub reason: Option<String>,
    pub n_negative: usize,
    pub n_positive: usize,
    pub summary: Option<CellSummary>,
    pub repeats: Option<Vec<RepeatRecord>>,
    #[serde(skip)]
    pub roc: Option<RocCurve>,
}

impl CellReport {
    pub fn roc_file_name(&self) -> String {
        format!("roc_{}_stage{}.csv", self.density, self.stage.number())
    }

    pub fn mean_accuracy(&self) -> Option<f64> {
        self.summary.as_ref().and_then(|s| s.accuracy.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub descriptor: DescriptorConfig,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub folds_per_repeat: usize,
    pub train: TrainOptions,
    pub cells: Vec<CellReport>,
}

impl EvaluationReport {
    pub fn has_errors(&self) -> bool {
        self.cells.iter().any(|c| c.status == CellStatus::Error)
    }

    pub fn cell(&self, density: DensitySel, stage: Stage) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.density == density && c.stage == stage)
    }
}

fn summarize(per_repeat: &[Option<f64>], folds_undefined: usize) -> MetricSummary {
    let vals: Vec<f64> = per_repeat.iter().flatten().copied().collect();
    let n = vals.len();
    let mean = (n > 0).then(|| vals.iter().sum::<f64>() / n as f64);
    let std = mean.map(|m| {
        if n < 2 {
            0.0
        } else {
            (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    });
    MetricSummary {
        mean,
        std,
        repeats_defined: n,
        folds_undefined,
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

struct FoldRun {
    record: FoldRecord,
    scores: Vec<f64>,
    truth: Vec<bool>,
}

fn run_fold(
    x: ArrayView2<f64>,
    labels: &[bool],
    train: &[usize],
    test: &[usize],
    fold: usize,
    opts: &TrainOptions,
    seed: u64,
) -> Result<FoldRun> {
    let xt = x.select(Axis(0), train);
    let yt: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
    let fit = fit_stage(xt.view(), &yt, opts, seed)?;
    let mut scores = Vec::with_capacity(test.len());
    for &i in test {
        let row = x.row(i);
        let row = row.as_slice().map_or_else(|| row.to_vec(), <[f64]>::to_vec);
        scores.push(fit.score_row(&row)?);
    }
    let truth: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= 0.0).collect();
    let confusion = ConfusionCounts::from_predictions(&predicted, &truth);
    let m = metrics(&confusion);
    Ok(FoldRun {
        record: FoldRecord {
            fold,
            n_train: train.len(),
            n_test: test.len(),
            selected_size: fit.search.chosen_size,
            confusion,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            accuracy: m.accuracy,
            auc: auc(&scores, &truth),
        },
        scores,
        truth,
    })
}

/// Repeat index, repeat seed, fold index, training rows, test rows.
type FoldJob = (usize, u64, usize, Vec<usize>, Vec<usize>);

/// Outcome of one (density, stage) cell on precomputed features.
pub fn cross_validate_cell(
    x: ArrayView2<f64>,
    labels: &[bool],
    density: DensitySel,
    stage: Stage,
    protocol: &Protocol,
) -> CellReport {
    let n_positive = labels.iter().filter(|&&l| l).count();
    let n_negative = labels.len() - n_positive;
    let mut cell = CellReport {
        density,
        stage,
        status: CellStatus::Absent,
        reason: None,
        n_negative,
        n_positive,
        summary: None,
        repeats: None,
        roc: None,
    };
    let names = stage.class_names();
    for (name, count) in [(names[0], n_negative), (names[1], n_positive)] {
        if count < MIN_PER_CLASS {
            cell.reason = Some(format!(
                "class {name} has {count} record(s), need {MIN_PER_CLASS}"
            ));
            return cell;
        }
    }

    let jobs: Vec<FoldJob> = protocol
        .seeds
        .iter()
        .enumerate()
        .flat_map(|(r, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = stratified_halves(labels, &mut rng);
            [(r, seed, 0, a.clone(), b.clone()), (r, seed, 1, b, a)]
        })
        .collect();

    let runs: Vec<Result<FoldRun>> = jobs
        .par_iter()
        .map(|(_, seed, fold, train, test)| {
            run_fold(
                x,
                labels,
                train,
                test,
                *fold,
                &protocol.train,
                mix_seed(*seed, 100 + *fold as u64),
            )
        })
        .collect();

    let mut repeats: Vec<RepeatRecord> = Vec::with_capacity(protocol.seeds.len());
    let mut pooled_scores = Vec::new();
    let mut pooled_truth = Vec::new();
    for ((r, seed, ..), run) in jobs.iter().zip(runs) {
        let run = match run {
            Ok(run) => run,
            Err(e) => {
                cell.status = CellStatus::Error;
                cell.reason = Some(format!("repeat {r}: {e}"));
                return cell;
            }
        };
        pooled_scores.extend_from_slice(&run.scores);
        pooled_truth.extend_from_slice(&run.truth);
        if repeats.last().is_none_or(|rep| rep.repeat != *r) {
            repeats.push(RepeatRecord {
                repeat: *r,
                seed: *seed,
                folds: Vec::with_capacity(FOLDS),
                sensitivity: None,
                specificity: None,
                accuracy: None,
                auc: None,
            });
        }
        repeats.last_mut().expect("pushed").folds.push(run.record);
    }
    for rep in &mut repeats {
        rep.sensitivity = mean_defined(rep.folds.iter().map(|f| f.sensitivity));
        rep.specificity = mean_defined(rep.folds.iter().map(|f| f.specificity));
        rep.accuracy = mean_defined(rep.folds.iter().map(|f| f.accuracy));
        rep.auc = mean_defined(rep.folds.iter().map(|f| f.auc));
    }

    let undefined = |f: fn(&FoldRecord) -> Option<f64>| {
        repeats
            .iter()
            .flat_map(|r| &r.folds)
            .filter(|fr| f(fr).is_none())
            .count()
    };
    let per = |f: fn(&RepeatRecord) -> Option<f64>| repeats.iter().map(f).collect::<Vec<_>>();
    cell.summary = Some(CellSummary {
        sensitivity: summarize(&per(|r| r.sensitivity), undefined(|f| f.sensitivity)),
        specificity: summarize(&per(|r| r.specificity), undefined(|f| f.specificity)),
        accuracy: summarize(&per(|r| r.accuracy), undefined(|f| f.accuracy)),
        auc: summarize(&per(|r| r.auc), undefined(|f| f.auc)),
    });
    cell.roc = roc_curve(&pooled_scores, &pooled_truth);
    cell.repeats = Some(repeats);
    cell.status = CellStatus::Ok;
    cell
}

/// Stage rows of `ds` restricted to `density`, with stage targets.
fn cell_rows(ds: &Dataset, density: DensitySel, stage: Stage) -> (Vec<usize>, Vec<bool>) {
    ds.records()
        .iter()
        .enumerate()
        .filter(|(_, r)| density.matches(r.density))
        .filter_map(|(i, r)| stage.target(r.label).map(|t| (i, t)))
        .unzip()
}

/// Evaluates both stages for each density on features extracted once.
pub fn evaluate_features(
    ds: &Dataset,
    features: &FeatureMatrix,
    cfg: &DescriptorConfig,
    densities: &[DensitySel],
    protocol: &Protocol,
) -> EvaluationReport {
    let mut cells = Vec::with_capacity(densities.len() * 2);
    for &density in densities {
        for stage in [Stage::NormalAbnormal, Stage::BenignMalignant] {
            let (rows, labels) = cell_rows(ds, density, stage);
            let x = features.values.select(Axis(0), &rows);
            cells.push(cross_validate_cell(x.view(), &labels, density, stage, protocol));
        }
    }
    EvaluationReport {
        descriptor: *cfg,
        config_digest: cfg.digest(),
        seeds: protocol.seeds.clone(),
        folds_per_repeat: FOLDS,
        train: protocol.train,
        cells,
    }
}

/// Extracts `cfg` and runs the protocol for the given density cells.
pub fn cross_validate(
    ds: &Dataset,
    densities: &[DensitySel],
    cfg: &DescriptorConfig,
    protocol: &Protocol,
) -> Result<EvaluationReport> {
    let features = extract_dataset(ds, cfg)?;
    Ok(evaluate_features(ds, &features, cfg, densities, protocol))
}

/// Writes `report.json` and one ROC CSV per trained cell; returns the paths.
pub fn emit_report(r: &EvaluationReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let json = serde_json::to_string_pretty(r).map_err(|e| Error::Config(format!("report: {e}")))?;
    let path = dir.join("report.json");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    for cell in &r.cells {
        if let Some(roc) = &cell.roc {
            let path = dir.join(cell.roc_file_name());
            std::fs::write(&path, roc.to_csv()).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
