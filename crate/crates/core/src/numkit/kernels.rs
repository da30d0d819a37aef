//! Dense kernels shared by the eager API and the gradient tape.

use super::{par, Element, Tensor};
use crate::error::{shape_err, Error, Result};

/// Which operand of a GEMM is read transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Layout {
    /// out = a · b, a: m×k, b: k×n
    NN,
    /// out = a · bᵀ, a: m×k, b: n×k
    NT,
    /// out = aᵀ · b, a: k×m, b: k×n
    TN,
}

/// Single GEMM into `out` (m×n), accumulating in f64.
pub(crate) fn gemm<T: Element>(
    layout: Layout,
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    debug_assert_eq!(out.len(), m * n);
    let work = m * k * n;
    match layout {
        Layout::NN => par::for_chunks_mut(out, n.max(1), work, |i, row| {
            let mut acc = vec![0.0f64; n];
            let arow = &a[i * k..(i + 1) * k];
            for (p, &av) in arow.iter().enumerate() {
                let av = av.f64();
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (s, &bv) in acc.iter_mut().zip(brow) {
                    *s += av * bv.f64();
                }
            }
            store(row, &acc, accumulate);
        }),
        Layout::NT => par::for_chunks_mut(out, n.max(1), work, |i, row| {
            let arow = &a[i * k..(i + 1) * k];
            for (j, o) in row.iter_mut().enumerate() {
                let brow = &b[j * k..(j + 1) * k];
                let s: f64 = arow
                    .iter()
                    .zip(brow)
                    .map(|(&x, &y)| x.f64() * y.f64())
                    .sum();
                *o = if accumulate {
                    T::of(o.f64() + s)
                } else {
                    T::of(s)
                };
            }
        }),
        Layout::TN => par::for_chunks_mut(out, n.max(1), work, |p, row| {
            // row p of aᵀ·b = Σ_i a[i,p] · b[i,:]
            let mut acc = vec![0.0f64; n];
            for i in 0..k {
                let av = a[i * m + p].f64();
                if av == 0.0 {
                    continue;
                }
                let brow = &b[i * n..(i + 1) * n];
                for (s, &bv) in acc.iter_mut().zip(brow) {
                    *s += av * bv.f64();
                }
            }
            store(row, &acc, accumulate);
        }),
    }
}

fn store<T: Element>(row: &mut [T], acc: &[f64], accumulate: bool) {
    if accumulate {
        for (o, &s) in row.iter_mut().zip(acc) {
            *o = T::of(o.f64() + s);
        }
    } else {
        for (o, &s) in row.iter_mut().zip(acc) {
            *o = T::of(s);
        }
    }
}

/// Operand geometry for [`matmul`]: `(batch, m, k, n, b_shared)`.
pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    let (batch, m, k, n, shared) = match (a, b) {
        (&[m, k], &[k2, n]) if k == k2 => (1, m, k, n, true),
        (&[bt, m, k], &[k2, n]) if k == k2 => (bt, m, k, n, true),
        (&[bt, m, k], &[bt2, k2, n]) if k == k2 && bt == bt2 => (bt, m, k, n, false),
        _ => {
            return Err(shape_err(
                "matmul",
                format!("incompatible operands {a:?} · {b:?}"),
            ))
        }
    };
    Ok((batch, m, k, n, shared))
}

/// Matrix product. Accepts `[m,k]·[k,n]`, `[B,m,k]·[k,n]` (shared right
/// operand) and `[B,m,k]·[B,k,n]`.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, m, k, n, shared) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![T::ZERO; batch * m * n];
    let (ad, bd) = (a.data(), b.data());
    if batch == 1 {
        gemm(Layout::NN, ad, bd, &mut out, m, k, n, false);
    } else {
        par::for_chunks_mut(&mut out, m * n, batch * m * k * n, |bi, o| {
            let bs = if shared { bd } else { &bd[bi * k * n..(bi + 1) * k * n] };
            gemm(Layout::NN, &ad[bi * m * k..(bi + 1) * m * k], bs, o, m, k, n, false);
        });
    }
    let shape: Vec<usize> = if a.rank() == 2 { vec![m, n] } else { vec![batch, m, n] };
    Tensor::new(&shape, out)
}

/// Softmax along the last axis, stabilised by subtracting the row max.
pub fn softmax_rows<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() == 0 {
        return Err(shape_err("softmax_rows", "scalar input"));
    }
    if x.data().iter().any(|v| v.f64().is_nan()) {
        return Err(Error::NonFinite("softmax_rows"));
    }
    let n = *x.shape().last().unwrap();
    let mut out = x.data().to_vec();
    par::for_chunks_mut(&mut out, n.max(1), x.len() * 4, |_, row| softmax_inplace(row));
    Tensor::new(x.shape(), out)
}

pub(crate) fn softmax_inplace<T: Element>(row: &mut [T]) {
    let max = row
        .iter()
        .map(|v| v.f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for (o, e) in row.iter_mut().zip(exps) {
        *o = T::of(e / sum);
    }
}

/// General axis permutation: `out.shape[i] = x.shape[axes[i]]`.
pub fn permute<T: Element>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let shape = x.shape();
    let r = shape.len();
    let mut seen = vec![false; r];
    if axes.len() != r || axes.iter().any(|&a| a >= r || std::mem::replace(&mut seen[a], true)) {
        return Err(shape_err(
            "permute",
            format!("axes {axes:?} are not a permutation of rank {r}"),
        ));
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; r];
    for i in (0..r.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; r];
    let src = x.data();
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for d in (0..r).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}
