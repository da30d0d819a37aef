//! Thin SVD by one-sided (Hestenes) Jacobi rotations.

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Sweep cap before giving up.
pub const MAX_SWEEPS: usize = 60;
/// A sweep in which every applied rotation has |sin θ| below this ends the
/// iteration.
pub const ROTATION_TOL: f64 = 1e-10;

/// `x ≈ u · diag(s) · vᵀ` with `r = min(P, Q)` columns.
#[derive(Clone, Debug)]
pub struct Svd<T: Element = f32> {
    /// P×r, orthonormal columns
    pub u: Tensor<T>,
    /// r singular values, non-increasing
    pub s: Tensor<T>,
    /// Q×r, orthonormal columns
    pub v: Tensor<T>,
    pub sweeps: usize,
}

impl<T: Element> Svd<T> {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Rebuilds `u[:, :t] · diag(s[:t]) · v[:, :t]ᵀ`.
    pub fn reconstruct(&self, t: usize) -> Tensor<T> {
        let (p, r) = (self.u.shape()[0], self.rank());
        let q = self.v.shape()[0];
        let t = t.min(r);
        let (u, s, v) = (self.u.data(), self.s.data(), self.v.data());
        let mut out = Vec::with_capacity(p * q);
        for i in 0..p {
            for j in 0..q {
                let acc: f64 = (0..t)
                    .map(|k| u[i * r + k].f64() * s[k].f64() * v[j * r + k].f64())
                    .sum();
                out.push(T::of(acc));
            }
        }
        Tensor::new(&[p, q], out).expect("shape computed above")
    }
}

/// Thin singular value decomposition of a P×Q matrix.
pub fn svd_thin<T: Element>(x: &Tensor<T>) -> Result<Svd<T>> {
    let (p, q) = x.dims2("svd_thin")?;
    x.ensure_finite("svd_thin")?;
    let a = x.to_f64_vec();
    let (u, s, v, sweeps) = if p >= q {
        jacobi_tall(&a, p, q)?
    } else {
        let mut at = vec![0.0; p * q];
        for i in 0..p {
            for j in 0..q {
                at[j * p + i] = a[i * q + j];
            }
        }
        let (u2, s2, v2, sw) = jacobi_tall(&at, q, p)?;
        (v2, s2, u2, sw)
    };
    let r = p.min(q);
    let to_t = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
    Ok(Svd {
        u: Tensor::new(&[p, r], to_t(u))?,
        s: Tensor::new(&[r], to_t(s))?,
        v: Tensor::new(&[q, r], to_t(v))?,
        sweeps,
    })
}

/// Jacobi SVD for m ≥ n, row-major input. Returns row-major U (m×n),
/// S (n), V (n×n) and the sweep count.
#[allow(clippy::type_complexity)]
fn jacobi_tall(a: &[f64], m: usize, n: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize)> {
    // column-major working copies
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[i * n + j]).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    // pairs orthogonal to within rounding of an m-term dot product are skipped
    let orth_tol = m as f64 * f64::EPSILON;
    // columns below ε‖A‖ are numerically zero
    let negligible = f64::EPSILON * f64::EPSILON * a.iter().map(|v| v * v).sum::<f64>();
    let mut sweeps = 0;
    let mut converged = n < 2;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::SvdNoConvergence { sweeps });
        }
        sweeps += 1;
        converged = true;
        for pi in 0..n - 1 {
            for qi in pi + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[pi], &cols[qi]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        al += x * x;
                        be += y * y;
                        ga += x * y;
                    }
                    (al, be, ga)
                };
                if alpha <= negligible || beta <= negligible || gamma.abs() <= orth_tol * alpha.sqrt() * beta.sqrt() {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                if s.abs() >= ROTATION_TOL {
                    converged = false;
                }
                rotate(&mut cols, pi, qi, c, s);
                rotate(&mut vcols, pi, qi, c, s);
            }
        }
    }

    let sigma: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    let smax = order.first().map_or(0.0, |&i| sigma[i]);
    let floor = smax * 1e-13;

    let mut ucols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut vsorted = Vec::with_capacity(n);
    let mut ssorted = Vec::with_capacity(n);
    for &j in &order {
        let sj = sigma[j];
        ssorted.push(sj);
        vsorted.push(vcols[j].clone());
        if sj > floor && sj > 0.0 {
            ucols.push(Some(cols[j].iter().map(|v| v / sj).collect()));
        } else {
            ucols.push(None);
        }
    }
    let ucols = complete_basis(ucols, m);

    let mut u = vec![0.0; m * n];
    for (k, col) in ucols.iter().enumerate() {
        for i in 0..m {
            u[i * n + k] = col[i];
        }
    }
    let mut v = vec![0.0; n * n];
    for (k, col) in vsorted.iter().enumerate() {
        for i in 0..n {
            v[i * n + k] = col[i];
        }
    }
    Ok((u, ssorted, v, sweeps))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills missing columns (zero singular values) with unit vectors
/// orthogonal to everything already present.
fn complete_basis(cols: Vec<Option<Vec<f64>>>, m: usize) -> Vec<Vec<f64>> {
    let mut done: Vec<Vec<f64>> = cols.iter().flatten().cloned().collect();
    let mut next_basis = 0;
    let mut out = Vec::with_capacity(cols.len());
    for c in cols {
        match c {
            Some(v) => out.push(v),
            None => loop {
                assert!(next_basis < m, "cannot complete orthonormal basis");
                let mut cand = vec![0.0; m];
                cand[next_basis] = 1.0;
                next_basis += 1;
                for _ in 0..2 {
                    for d in &done {
                        let proj: f64 = cand.iter().zip(d).map(|(a, b)| a * b).sum();
                        for (x, y) in cand.iter_mut().zip(d) {
                            *x -= proj * y;
                        }
                    }
                }
                let norm = cand.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-6 {
                    cand.iter_mut().for_each(|v| *v /= norm);
                    done.push(cand.clone());
                    out.push(cand);
                    break;
                }
            },
        }
    }
    out
}
