//! Straightforward reference computations, written without the library
//! kernels they check.

use mmfed_core::numkit::{Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<T: Element>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-1.0..1.0))).collect();
    Tensor::new(shape, data).unwrap()
}

/// Triple loop `a[m×k] · b[k×n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Direct double-sum 2-D DFT, returned as (re, im) per bin.
pub fn dft2(x: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for r in 0..h {
                for c in 0..w {
                    let ang = -2.0 * std::f64::consts::PI * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                    re += x[r * w + c] * ang.cos();
                    im += x[r * w + c] * ang.sin();
                }
            }
            out.push((re, im));
        }
    }
    out
}

/// Eigenvalues of a symmetric `n×n` matrix by cyclic two-sided Jacobi,
/// sorted descending.
pub fn symmetric_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

/// Singular values of `x[p×q]` as square roots of the eigenvalues of the
/// smaller Gram matrix.
pub fn singular_values(x: &[f64], p: usize, q: usize) -> Vec<f64> {
    let (gram, n) = if p >= q {
        (matmul(&transpose(x, p, q), x, q, p, q), q)
    } else {
        (matmul(x, &transpose(x, p, q), p, q, p), p)
    };
    symmetric_eigenvalues(gram, n).into_iter().map(|e| e.max(0.0).sqrt()).collect()
}

pub fn frobenius(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-head loop attention on `x[n×d]` with `d×d` projections.
pub fn attention(x: &[f64], n: usize, d: usize, heads: usize, wq: &[f64], wk: &[f64], wv: &[f64], wo: &[f64]) -> Vec<f64> {
    let q = matmul(x, wq, n, d, d);
    let k = matmul(x, wk, n, d, d);
    let v = matmul(x, wv, n, d, d);
    let dk = d / heads;
    let mut concat = vec![0.0; n * d];
    for h in 0..heads {
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..dk).map(|c| q[i * d + h * dk + c] * k[j * d + h * dk + c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let w = softmax(&scores);
            for c in 0..dk {
                concat[i * d + h * dk + c] = (0..n).map(|j| w[j] * v[j * d + h * dk + c]).sum();
            }
        }
    }
    matmul(&concat, wo, n, d, d)
}

/// Dense layer plus softmax on one pooled vector.
pub fn dense_softmax(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let c = x.len();
    let logits: Vec<f64> = (0..n).map(|j| b[j] + (0..c).map(|i| x[i] * w[i * n + j]).sum::<f64>()).collect();
    softmax(&logits)
}

/// Mean and variance of the Gaussian `q(x_{t−1} | x_t, x_0)` from
/// conjugacy, for scalar inputs and a 1-based step `t`.
pub fn bayes_posterior_mean(x0: f64, xt: f64, beta: &[f64], t: usize) -> f64 {
    let abar = |s: usize| (1..=s).map(|i| 1.0 - beta[i - 1]).product::<f64>();
    let ab_prev = abar(t - 1);
    let bt = beta[t - 1];
    // prior on x_{t−1} given x0: N(√ᾱ_{t−1} x0, 1−ᾱ_{t−1}); likelihood of
    // x_t given x_{t−1}: N(√α_t x_{t−1}, β_t)
    let prior_var = 1.0 - ab_prev;
    if prior_var == 0.0 {
        return x0;
    }
    let prec = 1.0 / prior_var + (1.0 - bt) / bt;
    let num = ab_prev.sqrt() * x0 / prior_var + (1.0 - bt).sqrt() * xt / bt;
    num / prec
}

/// Sample mean and unbiased variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Mirror index without edge repetition, spelled out case by case.
pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// OA, per-class accuracy, AA and kappa counted directly from pairs.
pub fn brute_scores(classes: usize, preds: &[usize], truths: &[usize]) -> (f64, Vec<Option<f64>>, f64, f64) {
    let n = preds.len() as f64;
    let correct = preds.iter().zip(truths).filter(|(p, t)| p == t).count() as f64;
    let oa = correct / n;
    let mut ca = Vec::new();
    let mut pe = 0.0;
    for c in 1..=classes {
        let actual = truths.iter().filter(|&&t| t == c).count();
        let predicted = preds.iter().filter(|&&p| p == c).count();
        let hit = preds.iter().zip(truths).filter(|(&p, &t)| p == c && t == c).count();
        ca.push((actual > 0).then(|| hit as f64 / actual as f64));
        pe += actual as f64 * predicted as f64;
    }
    pe /= n * n;
    let defined: Vec<f64> = ca.iter().flatten().copied().collect();
    let aa = defined.iter().sum::<f64>() / defined.len() as f64;
    let kappa = if pe >= 1.0 { 1.0 } else { (oa - pe) / (1.0 - pe) };
    (oa, ca, aa, kappa)
}
