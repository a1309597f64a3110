//! Discrimination-potentiality (DP) feature ranking and the incremental
//! prefix search that picks how many top-ranked features to keep.
//!
//! `DP_k = |μ_a − μ_b| / sqrt(δ_a²/n_a + δ_b²/n_b)` per column, with sample
//! (n−1) variances. Features are ranked by descending DP; the search then
//! evaluates prefixes of size 5, 6, … up to a cap and keeps the smallest
//! prefix with the best accuracy.

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::stratified_halves;
use crate::svm::{signed_labels, smo_solve, Kernel, SvmParams};
use crate::{Error, Result};

/// Smallest prefix evaluated by the search.
pub const MIN_PREFIX: usize = 5;
/// Upper bound on the prefix search when no cap is given.
pub const DEFAULT_CAP: usize = 5200;
/// Seeded repeats of the inner two-fold split.
pub const INNER_REPEATS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpFormula {
    /// Welch statistic with absolute numerator.
    #[default]
    Welch,
    /// Signed numerator and a difference of variance terms under the root.
    /// Negative radicands yield NaN, ranked last.
    PrintedDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpRanking {
    pub scores: Vec<f64>,
    /// Column indices by descending score, ties by ascending index.
    pub order: Vec<usize>,
    /// Statistics of the positive (`a`) and negative (`b`) class.
    pub class_stats: [ClassStats; 2],
}

fn class_stats(x: ArrayView2<f64>, rows: &[usize], name: &'static str) -> Result<ClassStats> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Statistics {
            class: name,
            count: n,
        });
    }
    let sub = x.select(Axis(0), rows);
    let mean: Vec<f64> = sub.sum_axis(Axis(0)).iter().map(|s| s / n as f64).collect();
    let std = sub
        .axis_iter(Axis(1))
        .zip(&mean)
        .map(|(col, &m)| (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt())
        .collect();
    Ok(ClassStats { mean, std, count: n })
}

/// Ranks columns of `x` by DP between `labels == true` (a) and `false` (b).
pub fn dp_scores(x: ArrayView2<f64>, labels: &[bool]) -> Result<DpRanking> {
    dp_scores_with(x, labels, DpFormula::Welch)
}

pub fn dp_scores_with(x: ArrayView2<f64>, labels: &[bool], formula: DpFormula) -> Result<DpRanking> {
    if x.nrows() != labels.len() {
        return Err(Error::Config(format!(
            "{} feature rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite feature value".into()));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let a = class_stats(x, &pos, "a (positive)")?;
    let b = class_stats(x, &neg, "b (negative)")?;
    let (na, nb) = (a.count as f64, b.count as f64);

    let scores: Vec<f64> = (0..x.ncols())
        .map(|k| {
            let va = a.std[k] * a.std[k] / na;
            let vb = b.std[k] * b.std[k] / nb;
            let (num, radicand) = match formula {
                DpFormula::Welch => ((a.mean[k] - b.mean[k]).abs(), va + vb),
                DpFormula::PrintedDifference => (a.mean[k] - b.mean[k], va - vb),
            };
            if radicand == 0.0 {
                if num == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                num / radicand.sqrt()
            }
        })
        .collect();
    let order = descending_order(&scores);
    Ok(DpRanking {
        scores,
        order,
        class_stats: [a, b],
    })
}

/// Stable descending sort of indices; NaN sorts last.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| key(scores[j]).total_cmp(&key(scores[i])));
    order
}

/// Scores a feature subset, returning an accuracy in percent.
pub trait SubsetEvaluator {
    fn accuracy(&mut self, subset: &[usize]) -> Result<f64>;
}

impl<F: FnMut(&[usize]) -> f64> SubsetEvaluator for F {
    fn accuracy(&mut self, subset: &[usize]) -> Result<f64> {
        Ok(self(subset))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSearchResult {
    pub selected_indices: Vec<usize>,
    pub inner_accuracy_curve: Vec<(usize, f64)>,
    pub chosen_size: usize,
}

/// Evaluates prefixes `5..=cap` of `ranking.order` and keeps the best one.
pub fn incremental_select(
    ranking: &DpRanking,
    evaluator: &mut impl SubsetEvaluator,
    cap: usize,
) -> Result<SubsetSearchResult> {
    let total = ranking.order.len();
    if total < MIN_PREFIX {
        return Err(Error::Selection(format!(
            "need at least {MIN_PREFIX} features, got {total}"
        )));
    }
    if cap < MIN_PREFIX || cap > total {
        return Err(Error::Selection(format!(
            "cap {cap} outside [{MIN_PREFIX}, {total}]"
        )));
    }
    let mut curve = Vec::with_capacity(cap - MIN_PREFIX + 1);
    let mut best = (MIN_PREFIX, f64::NEG_INFINITY);
    for size in MIN_PREFIX..=cap {
        let acc = evaluator.accuracy(&ranking.order[..size])?;
        curve.push((size, acc));
        if acc > best.1 {
            best = (size, acc);
        }
    }
    Ok(SubsetSearchResult {
        selected_indices: ranking.order[..best.0].to_vec(),
        inner_accuracy_curve: curve,
        chosen_size: best.0,
    })
}

/// `min(feature_count, DEFAULT_CAP)`.
pub fn default_cap(feature_count: usize) -> usize {
    feature_count.min(DEFAULT_CAP)
}

struct InnerSplit {
    train: Vec<usize>,
    test: Vec<usize>,
    y_train: Vec<f64>,
    test_labels: Vec<bool>,
    /// Linear: summed products; RBF: summed squared differences.
    train_acc: Array2<f64>,
    cross_acc: Array2<f64>,
    warm: Option<Vec<f64>>,
}

/// Stratified two-fold CV on the training rows only, repeated with seeded
/// splits; accuracy is pooled over every held-out prediction.
///
/// Kernel accumulators grow column by column, so evaluating nested prefixes
/// in increasing order costs one column update per step. Each SMO solve is
/// warm-started from the previous prefix's multipliers.
pub struct InnerCvEvaluator<'a> {
    x: ArrayView2<'a, f64>,
    params: SvmParams,
    splits: Vec<InnerSplit>,
    columns: Vec<usize>,
}

impl<'a> InnerCvEvaluator<'a> {
    pub fn new(x: ArrayView2<'a, f64>, labels: &[bool], params: SvmParams, seed: u64) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::Config("feature rows and labels differ".into()));
        }
        let y = signed_labels(labels);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut splits = Vec::with_capacity(2 * INNER_REPEATS);
        for _ in 0..INNER_REPEATS {
            let (a, b) = stratified_halves(labels, &mut rng);
            for (train, test) in [(a.clone(), b.clone()), (b, a)] {
                let pos = train.iter().filter(|&&i| labels[i]).count();
                if pos == 0 || pos == train.len() || test.is_empty() {
                    return Err(Error::Training(
                        "inner split leaves a training half with one class".into(),
                    ));
                }
                let y_train = train.iter().map(|&i| y[i]).collect();
                let test_labels = test.iter().map(|&i| labels[i]).collect();
                splits.push(InnerSplit {
                    train_acc: Array2::zeros((train.len(), train.len())),
                    cross_acc: Array2::zeros((test.len(), train.len())),
                    train,
                    test,
                    y_train,
                    test_labels,
                    warm: None,
                });
            }
        }
        Ok(Self {
            x,
            params,
            splits,
            columns: Vec::new(),
        })
    }

    fn reset(&mut self) {
        for s in &mut self.splits {
            s.train_acc.fill(0.0);
            s.cross_acc.fill(0.0);
            s.warm = None;
        }
        self.columns.clear();
    }

    fn add_column(&mut self, col: usize) {
        let linear = matches!(self.params.kernel, crate::svm::KernelSpec::Linear);
        let column = self.x.column(col);
        for s in &mut self.splits {
            let n = s.train.len() as f64;
            let mean = s.train.iter().map(|&i| column[i]).sum::<f64>() / n;
            let var = s.train.iter().map(|&i| (column[i] - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            let zt: Vec<f64> = s.train.iter().map(|&i| (column[i] - mean) / sd).collect();
            let ze: Vec<f64> = s.test.iter().map(|&i| (column[i] - mean) / sd).collect();
            if linear {
                accumulate(&mut s.train_acc, &zt, &zt, |a, b| a * b);
                accumulate(&mut s.cross_acc, &ze, &zt, |a, b| a * b);
            } else {
                accumulate(&mut s.train_acc, &zt, &zt, |a, b| (a - b) * (a - b));
                accumulate(&mut s.cross_acc, &ze, &zt, |a, b| (a - b) * (a - b));
            }
        }
        self.columns.push(col);
    }
}

fn accumulate(acc: &mut Array2<f64>, rows: &[f64], cols: &[f64], f: impl Fn(f64, f64) -> f64) {
    let width = cols.len();
    let flat = acc.as_slice_mut().expect("accumulators are standard layout");
    for (row, &a) in flat.chunks_exact_mut(width).zip(rows) {
        for (v, &b) in row.iter_mut().zip(cols) {
            *v += f(a, b);
        }
    }
}

impl SubsetEvaluator for InnerCvEvaluator<'_> {
    fn accuracy(&mut self, subset: &[usize]) -> Result<f64> {
        if subset.is_empty() {
            return Err(Error::Selection("empty subset".into()));
        }
        if !subset.starts_with(&self.columns) {
            self.reset();
        }
        for &c in &subset[self.columns.len()..] {
            self.add_column(c);
        }
        let kernel = self.params.kernel.resolve(subset.len())?;
        let params = self.params;
        let mut correct = 0usize;
        let mut total = 0usize;
        for s in &mut self.splits {
            let mapped;
            let (gram, cross) = match kernel {
                Kernel::Linear => (s.train_acc.view(), s.cross_acc.view()),
                Kernel::Rbf { gamma } => {
                    mapped = (
                        s.train_acc.mapv(|d| (-gamma * d).exp()),
                        s.cross_acc.mapv(|d| (-gamma * d).exp()),
                    );
                    (mapped.0.view(), mapped.1.view())
                }
            };
            let max_iter = params.max_passes.saturating_mul(s.train.len());
            let sol = smo_solve(
                gram,
                &s.y_train,
                params.c,
                params.tol,
                max_iter,
                s.warm.as_deref(),
            );
            let coef: Vec<f64> = sol.alpha.iter().zip(&s.y_train).map(|(a, y)| a * y).collect();
            for (row, &truth) in cross.rows().into_iter().zip(&s.test_labels) {
                let raw: f64 = row.iter().zip(&coef).map(|(k, c)| k * c).sum::<f64>() + sol.bias;
                total += 1;
                if (raw >= 0.0) == truth {
                    correct += 1;
                }
            }
            s.warm = Some(sol.alpha);
        }
        Ok(100.0 * correct as f64 / total as f64)
    }
}
