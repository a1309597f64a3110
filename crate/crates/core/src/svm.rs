//! Binary soft-margin SVM solved with sequential minimal optimization.
//!
//! The dual `min ½αᵀQα − eᵀα` s.t. `0 ≤ α ≤ C`, `yᵀα = 0` is solved by
//! repeatedly optimizing the maximal violating pair. Features are
//! standardized with training statistics before the kernel is applied.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Kernel as requested by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    /// `exp(-γ‖a-b‖²)`; `None` resolves to `1 / feature_count`.
    Rbf { gamma: Option<f64> },
}

/// Kernel with every parameter resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn resolve(self, dim: usize) -> Result<Kernel> {
        match self {
            KernelSpec::Linear => Ok(Kernel::Linear),
            KernelSpec::Rbf { gamma } => {
                let gamma = gamma.unwrap_or(1.0 / dim.max(1) as f64);
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(Error::Domain(format!("rbf gamma must be positive, got {gamma}")));
                }
                Ok(Kernel::Rbf { gamma })
            }
        }
    }
}

impl Kernel {
    #[inline]
    pub fn eval(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match *self {
            Kernel::Linear => a.dot(&b),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    pub fn gram(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let mut k = Array2::zeros((n, n));
        match *self {
            Kernel::Linear => {
                k = x.dot(&x.t());
            }
            Kernel::Rbf { .. } => {
                for i in 0..n {
                    for j in i..n {
                        let v = self.eval(x.row(i), x.row(j));
                        k[[i, j]] = v;
                        k[[j, i]] = v;
                    }
                }
            }
        }
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub kernel: KernelSpec,
    pub c: f64,
    pub tol: f64,
    /// Iteration cap in units of `n` pair updates.
    pub max_passes: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::Linear,
            c: 1.0,
            tol: 1e-3,
            max_passes: 10_000,
        }
    }
}

/// Per-column `(x - mean) / std` fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; a zero-variance column keeps `std = 1`.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let means: Vec<f64> = x.sum_axis(Axis(0)).iter().map(|s| s / n).collect();
        let stds = x
            .axis_iter(Axis(1))
            .zip(&means)
            .map(|(col, &m)| {
                let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { means, stds }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn transform_row(&self, x: &[f64]) -> Array1<f64> {
        x.iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final maximal violation `m(α) - M(α)`.
    pub kkt_gap: f64,
}

const TAU: f64 = 1e-12;

/// Solves the dual for a precomputed kernel matrix and `±1` labels.
///
/// `warm_start` must be feasible for the same `c` and labels.
pub fn smo_solve(
    gram: ArrayView2<f64>,
    y: &[f64],
    c: f64,
    tol: f64,
    max_iter: usize,
    warm_start: Option<&[f64]>,
) -> SmoSolution {
    let n = y.len();
    debug_assert_eq!(gram.dim(), (n, n));
    let owned;
    let k: &[f64] = match gram.as_slice() {
        Some(s) => s,
        None => {
            owned = gram.as_standard_layout().into_owned();
            owned.as_slice().expect("standard layout")
        }
    };
    let row = |i: usize| &k[i * n..(i + 1) * n];
    let mut alpha = warm_start.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    // G = Qα - e with Q_ij = y_i y_j K_ij
    let mut grad = vec![-1.0; n];
    // K is symmetric, so row j doubles as column j.
    for (j, &aj) in alpha.iter().enumerate() {
        if aj != 0.0 {
            let w = y[j] * aj;
            for ((g, &kv), &yi) in grad.iter_mut().zip(row(j)).zip(y) {
                *g += yi * kv * w;
            }
        }
    }

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut gap;
    loop {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        for (t, ((&a, &yt), &g)) in alpha.iter().zip(y).zip(&grad).enumerate() {
            let v = -yt * g;
            if v > gmax && in_up(a, yt) {
                gmax = v;
                i = t;
            }
            if v < gmin && in_low(a, yt) {
                gmin = v;
                j = t;
            }
        }
        gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap <= tol {
            break;
        }
        if iterations >= max_iter {
            let bias = compute_bias(&alpha, &grad, y, c);
            return SmoSolution {
                alpha,
                bias,
                iterations,
                converged: false,
                kkt_gap: gap,
            };
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kii = k[i * n + i];
        let kjj = k[j * n + j];
        let kij = k[i * n + j];
        if y[i] != y[j] {
            let quad = (kii + kjj - 2.0 * kij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (kii + kjj - 2.0 * kij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let di = (alpha[i] - old_i) * y[i];
        let dj = (alpha[j] - old_j) * y[j];
        for (((g, &yt), &ki), &kj) in grad.iter_mut().zip(y).zip(row(i)).zip(row(j)) {
            *g += yt * (ki * di + kj * dj);
        }
    }

    let bias = compute_bias(&alpha, &grad, y, c);
    SmoSolution {
        alpha,
        bias,
        iterations,
        converged: true,
        kkt_gap: gap.max(0.0),
    }
}

/// Bias from free multipliers, or the midpoint of the feasible interval.
fn compute_bias(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut free = 0usize;
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 {
        sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else if lb.is_finite() {
        lb
    } else {
        0.0
    };
    -rho
}

/// `Σα − ½ ΣΣ α_i α_j y_i y_j K_ij` (the maximization form of the dual).
pub fn dual_objective(gram: ArrayView2<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * gram[[i, j]];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionScore {
    pub raw: f64,
    /// `raw >= 0`.
    pub positive: bool,
}

impl DecisionScore {
    pub fn new(raw: f64) -> Self {
        Self {
            raw,
            positive: raw >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    pub tol: f64,
    /// Standardized support vectors, one per row.
    pub support_vectors: Array2<f64>,
    /// `α_i · y_i` for each support vector.
    pub dual_coeffs: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_gap: f64,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn decision(&self, x: &[f64]) -> Result<DecisionScore> {
        if x.len() != self.dim() {
            return Err(Error::Config(format!(
                "feature vector has {} values, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        let z = self.standardizer.transform_row(x);
        let raw = self
            .support_vectors
            .rows()
            .into_iter()
            .zip(&self.dual_coeffs)
            .map(|(sv, &a)| a * self.kernel.eval(sv, z.view()))
            .sum::<f64>()
            + self.bias;
        Ok(DecisionScore::new(raw))
    }
}

/// `true` labels map to the positive class.
pub fn signed_labels(labels: &[bool]) -> Vec<f64> {
    labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect()
}

pub fn train_svm(x: ArrayView2<f64>, labels: &[bool], params: &SvmParams) -> Result<SvmModel> {
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
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Training("SVM training needs both classes".into()));
    }
    if !(params.c > 0.0) || !(params.tol > 0.0) {
        return Err(Error::Domain("C and tol must be positive".into()));
    }
    let kernel = params.kernel.resolve(x.ncols())?;
    let standardizer = Standardizer::fit(x);
    let z = standardizer.transform(x);
    let gram = kernel.gram(z.view());
    let y = signed_labels(labels);
    let max_iter = params.max_passes.saturating_mul(y.len().max(1));
    let sol = smo_solve(gram.view(), &y, params.c, params.tol, max_iter, None);

    let sv: Vec<usize> = (0..y.len()).filter(|&i| sol.alpha[i] > 0.0).collect();
    let support_vectors = z.select(Axis(0), &sv);
    let dual_coeffs = sv.iter().map(|&i| sol.alpha[i] * y[i]).collect();
    Ok(SvmModel {
        kernel,
        c: params.c,
        tol: params.tol,
        support_vectors,
        dual_coeffs,
        bias: sol.bias,
        standardizer,
        iterations: sol.iterations,
        converged: sol.converged,
        kkt_gap: sol.kkt_gap,
    })
}
