//! Brute-force reference implementations shared by the integration tests.
//! None of these call into the library's numeric code.
#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

/// Orthonormal 2-D DCT-II by the direct quadruple loop.
pub fn dct_direct(img: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = img.len();
    let n = img[0].len();
    let alpha = |k: usize, len: usize| {
        if k == 0 {
            (1.0 / len as f64).sqrt()
        } else {
            (2.0 / len as f64).sqrt()
        }
    };
    let mut out = vec![vec![0.0; n]; m];
    for u in 0..m {
        for v in 0..n {
            let mut s = 0.0;
            for (x, row) in img.iter().enumerate() {
                for (y, &val) in row.iter().enumerate() {
                    s += val
                        * (PI * (2 * x + 1) as f64 * u as f64 / (2 * m) as f64).cos()
                        * (PI * (2 * y + 1) as f64 * v as f64 / (2 * n) as f64).cos();
                }
            }
            out[u][v] = alpha(u, m) * alpha(v, n) * s;
        }
    }
    out
}

/// Per-pixel min over eight real Gabor responses with replicate borders,
/// summed over kernel offsets row by row. Returns (magnitude, orientation).
pub fn gabor_bruteforce(img: &[Vec<f64>], sigma: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let h = img.len() as isize;
    let w = img[0].len() as isize;
    let mu = 1.0 / (2.0 * sigma).sqrt();
    let r = ((3.0 * sigma).round() as isize).max(2);
    let kernel = |dx: f64, dy: f64, theta: f64| {
        let s2 = sigma * sigma;
        let envelope = (-(dx * dx + dy * dy) / (2.0 * s2)).exp() / (2.0 * PI * s2);
        envelope * (2.0 * PI * mu * (dx * theta.cos() + dy * theta.sin())).cos()
    };
    let at = |y: isize, x: isize| img[y.clamp(0, h - 1) as usize][x.clamp(0, w - 1) as usize];
    let mut mag = vec![vec![0.0; w as usize]; h as usize];
    let mut ori = vec![vec![0.0; w as usize]; h as usize];
    for y in 0..h {
        for x in 0..w {
            let mut best = f64::INFINITY;
            let mut best_theta = 0.0;
            for t in 0..8 {
                let theta = PI * t as f64 / 8.0;
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        acc += at(y - dy, x - dx) * kernel(dx as f64, dy as f64, theta);
                    }
                }
                if t == 0 || acc < best {
                    best = acc;
                    best_theta = theta;
                }
            }
            mag[y as usize][x as usize] = best;
            ori[y as usize][x as usize] = best_theta;
        }
    }
    (mag, ori)
}

/// |Welch t| of one column between `true` and `false` rows.
pub fn welch_abs_t(col: &[f64], labels: &[bool]) -> f64 {
    let stats = |class: bool| {
        let v: Vec<f64> = col.iter().zip(labels).filter(|(_, &l)| l == class).map(|(&x, _)| x).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var, n)
    };
    let (ma, va, na) = stats(true);
    let (mb, vb, nb) = stats(false);
    let se = (va / na + vb / nb).sqrt();
    if se == 0.0 {
        if ma == mb {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (ma - mb).abs() / se
    }
}

/// Indices by descending value, ties by ascending index.
pub fn rank_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    idx
}

/// Pairwise concordance in percent; ties count one half.
pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    100.0 * wins / pairs
}

/// Dual objective `Σα − ½ ΣΣ α_i α_j y_i y_j K_ij`.
pub fn dual_objective(gram: &[Vec<f64>], y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * gram[i][j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Projection onto `{0 ≤ α ≤ c, Σ α_i y_i = 0}` by bisection on the shift.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> {
        v.iter().zip(y).map(|(&vi, &yi)| (vi - lambda * yi).clamp(0.0, c)).collect()
    };
    let g = |lambda: f64| at(lambda).iter().zip(y).map(|(a, yi)| a * yi).sum::<f64>();
    let (mut lo, mut hi) = (-1e6, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Projected gradient ascent on the SVM dual; returns the optimal value.
pub fn svm_dual_reference(gram: &[Vec<f64>], y: &[f64], c: f64, iters: usize) -> f64 {
    let n = y.len();
    let lmax: f64 = (0..n).map(|i| (0..n).map(|j| gram[i][j].abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lmax.max(1e-12);
    let mut alpha = vec![0.0; n];
    for _ in 0..iters {
        let grad: Vec<f64> = (0..n)
            .map(|i| 1.0 - y[i] * (0..n).map(|j| alpha[j] * y[j] * gram[i][j]).sum::<f64>())
            .collect();
        let moved: Vec<f64> = alpha.iter().zip(&grad).map(|(a, g)| a + step * g).collect();
        alpha = project(&moved, y, c);
    }
    dual_objective(gram, y, &alpha)
}

/// Deterministic pseudo-random matrix for oracle comparisons.
pub fn random_grid(rng: &mut impl rand::Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random::<f64>()).collect()).collect()
}
