//! Tape-based reverse-mode differentiation over a fixed operation set.
//!
//! Every operation evaluates eagerly, records its inputs on the tape and
//! owns an adjoint rule. [`Tape::backward`] walks the tape in reverse from a
//! scalar root. Adjoints accumulate in f64.

use rustfft::num_complex::Complex64;

use super::fft::{forward_real, inverse_complex};
use super::kernels::{self, gemm, inverse_axes, matmul_dims, Layout};
use super::{Element, Tensor};
use crate::error::{shape_err, Error, Result};

/// Probabilities below this are clamped before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Softmax(Var),
    Log(Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Downsample(Var, usize),
    SpectralFilter { x: Var, re: Var, im: Var },
    MeanPool(Var),
    Sum(Var),
    Norm(Var),
}

struct Node<T: Element> {
    op: Op,
    value: Tensor<T>,
}

/// Records a computation for one replica. Not shared across threads.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| T::of(f(p.f64(), q.f64())))
            .collect();
        Tensor::new(x.shape(), data).expect("operands share a shape")
    }

    fn map_value(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor<T> {
        let x = self.value(a);
        Tensor::new(
            x.shape(),
            x.data().iter().map(|&v| T::of(f(v.f64()))).collect(),
        )
        .expect("same shape")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_values(a, b, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Adds `bias` broadcast over the leading axes of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err("add_bias", format!("cannot broadcast {sb:?} onto {sa:?}")));
        }
        let nb = self.value(bias).len().max(1);
        let bd = self.value(bias).data().to_vec();
        let x = self.value(a);
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| T::of(v.f64() + bd[i % nb].f64()))
            .collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.push(Op::AddBias(a, bias), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_values(a, b, |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), out))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_values(a, b, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.map_value(a, |x| x * factor);
        self.push(Op::Scale(a, factor), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map_value(a, sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = kernels::softmax_rows(self.value(a))?;
        Ok(self.push(Op::Softmax(a), out))
    }

    /// Natural log with inputs clamped at [`LOG_CLAMP`].
    pub fn log(&mut self, a: Var) -> Var {
        let out = self.map_value(a, |x| x.max(LOG_CLAMP).ln());
        self.push(Op::Log(a), out)
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = kernels::permute(self.value(a), axes)?;
        Ok(self.push(Op::Permute(a, axes.to_vec()), out))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape(a), out))
    }

    /// Non-overlapping average pooling over the two spatial axes of a
    /// `[B,H,W,C]` or `[H,W,C]` tensor, reflect-padding H and W up to a
    /// multiple of `factor` first.
    pub fn downsample(&mut self, a: Var, factor: usize) -> Result<Var> {
        let out = downsample_forward(self.value(a), factor)?;
        Ok(self.push(Op::Downsample(a, factor), out))
    }

    /// Per-channel `Re(ifft2(W ⊙ fft2(x)))` with `W = re + i·im`.
    ///
    /// `x` is `[B,H,W,C]` or `[H,W,C]`; `re` and `im` are `[H,W,C]`.
    pub fn spectral_filter(&mut self, x: Var, re: Var, im: Var) -> Result<Var> {
        let out = spectral_forward(self.value(x), self.value(re), self.value(im))?;
        Ok(self.push(Op::SpectralFilter { x, re, im }, out))
    }

    /// Mean over the spatial axes: `[B,H,W,C] → [B,C]`.
    pub fn mean_pool(&mut self, a: Var) -> Result<Var> {
        let (b, h, w, c) = bhwc(self.shape(a), "mean_pool")?;
        let x = self.value(a).data();
        let hw = h * w;
        let mut out = vec![T::ZERO; b * c];
        for bi in 0..b {
            for ci in 0..c {
                let s: f64 = (0..hw).map(|p| x[(bi * hw + p) * c + ci].f64()).sum();
                out[bi * c + ci] = T::of(s / hw as f64);
            }
        }
        let out = Tensor::new(&[b, c], out)?;
        Ok(self.push(Op::MeanPool(a), out))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_f64();
        self.push(Op::Sum(a), Tensor::scalar(T::of(s)))
    }

    /// Euclidean norm of all elements.
    pub fn norm(&mut self, a: Var) -> Var {
        let n = self.value(a).frobenius();
        self.push(Op::Norm(a), Tensor::scalar(T::of(n)))
    }

    /// Reverse pass from a single-element root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("root must be a scalar, got {:?}", self.shape(root)),
            ));
        }
        if !self.value(root).all_finite() {
            return Err(Error::NonFinite("backward root"));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Gradient of the last backward root w.r.t. `v`; `None` when `v` did
    /// not influence it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        let shape = self.shape(v);
        Some(Tensor::new(shape, g.iter().map(|&x| T::of(x)).collect()).expect("grad shape"))
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<f64>) {
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contrib) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn vals(&self, v: Var) -> Vec<f64> {
        self.value(v).to_f64_vec()
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (batch, m, k, n, shared) =
                    matmul_dims(self.shape(a), self.shape(b)).expect("checked in forward");
                let (av, bv) = (self.vals(a), self.vals(b));
                let mut da = vec![0.0; batch * m * k];
                let mut db = vec![0.0; bv.len()];
                for bi in 0..batch {
                    let gs = &g[bi * m * n..(bi + 1) * m * n];
                    let bs = if shared { &bv[..] } else { &bv[bi * k * n..(bi + 1) * k * n] };
                    gemm(Layout::NT, gs, bs, &mut da[bi * m * k..(bi + 1) * m * k], m, n, k, false);
                    let as_ = &av[bi * m * k..(bi + 1) * m * k];
                    if shared {
                        gemm(Layout::TN, as_, gs, &mut db, k, m, n, true);
                    } else {
                        gemm(Layout::TN, as_, gs, &mut db[bi * k * n..(bi + 1) * k * n], k, m, n, false);
                    }
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.to_vec());
            }
            Op::AddBias(a, bias) => {
                let nb = self.value(bias).len().max(1);
                let mut db = vec![0.0; nb];
                for (j, &x) in g.iter().enumerate() {
                    db[j % nb] += x;
                }
                self.accumulate(a, g.to_vec());
                self.accumulate(bias, db);
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.vals(a), self.vals(b));
                self.accumulate(a, g.iter().zip(&bv).map(|(x, y)| x * y).collect());
                self.accumulate(b, g.iter().zip(&av).map(|(x, y)| x * y).collect());
            }
            Op::Scale(a, f) => self.accumulate(a, g.iter().map(|x| x * f).collect()),
            Op::Sigmoid(a) => {
                let y = self.vals(Var(i));
                self.accumulate(a, g.iter().zip(&y).map(|(x, s)| x * s * (1.0 - s)).collect());
            }
            Op::Softmax(a) => {
                let y = self.vals(Var(i));
                let n = *self.shape(a).last().unwrap();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((d, &p), &q) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = p * (q - dot);
                    }
                }
                self.accumulate(a, dx);
            }
            Op::Log(a) => {
                let x = self.vals(a);
                let dx = g
                    .iter()
                    .zip(&x)
                    .map(|(q, &p)| if p > LOG_CLAMP { q / p } else { 0.0 })
                    .collect();
                self.accumulate(a, dx);
            }
            Op::Permute(a, axes) => {
                let gt = Tensor::<f64>::new(self.shape(Var(i)), g.to_vec()).expect("grad shape");
                let back = kernels::permute(&gt, &inverse_axes(&axes)).expect("valid axes");
                self.accumulate(a, back.into_data());
            }
            Op::Reshape(a) => self.accumulate(a, g.to_vec()),
            Op::Downsample(a, f) => {
                let dx = downsample_backward(self.shape(a), f, g);
                self.accumulate(a, dx);
            }
            Op::SpectralFilter { x, re, im } => {
                let (dx, dre, dim) = spectral_backward(
                    self.value(x),
                    self.value(re),
                    self.value(im),
                    g,
                );
                self.accumulate(x, dx);
                self.accumulate(re, dre);
                self.accumulate(im, dim);
            }
            Op::MeanPool(a) => {
                let (b, h, w, c) = bhwc(self.shape(a), "mean_pool").expect("checked");
                let hw = h * w;
                let mut dx = vec![0.0; b * hw * c];
                for bi in 0..b {
                    for p in 0..hw {
                        for ci in 0..c {
                            dx[(bi * hw + p) * c + ci] = g[bi * c + ci] / hw as f64;
                        }
                    }
                }
                self.accumulate(a, dx);
            }
            Op::Sum(a) => {
                let n = self.value(a).len();
                self.accumulate(a, vec![g[0]; n]);
            }
            Op::Norm(a) => {
                let y = self.value(Var(i)).data()[0].f64();
                let x = self.vals(a);
                let dx = if y > 0.0 {
                    x.iter().map(|v| g[0] * v / y).collect()
                } else {
                    vec![0.0; x.len()]
                };
                self.accumulate(a, dx);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Interprets `[B,H,W,C]` or `[H,W,C]` (as B = 1).
pub(crate) fn bhwc(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [b, h, w, c] => Ok((b, h, w, c)),
        [h, w, c] => Ok((1, h, w, c)),
        _ => Err(shape_err(op, format!("expected [B,H,W,C] or [H,W,C], got {shape:?}"))),
    }
}

/// Mirror index without repeating the edge (`-1 → 1`, `n → n-2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

/// Padding `(before, after)` that brings `n` to a multiple of `f`.
pub(crate) fn pad_amounts(n: usize, f: usize) -> (usize, usize) {
    let total = (f - n % f) % f;
    (total / 2, total - total / 2)
}

fn downsample_geometry(shape: &[usize], factor: usize) -> Result<(usize, usize, usize, usize, usize, usize)> {
    if factor < 1 {
        return Err(Error::Invalid(format!("downsample factor must be ≥ 1, got {factor}")));
    }
    let (b, h, w, c) = bhwc(shape, "downsample")?;
    let oh = (h + pad_amounts(h, factor).0 + pad_amounts(h, factor).1) / factor;
    let ow = (w + pad_amounts(w, factor).0 + pad_amounts(w, factor).1) / factor;
    Ok((b, h, w, c, oh, ow))
}

fn out_shape_like(input: &[usize], b: usize, h: usize, w: usize, c: usize) -> Vec<usize> {
    if input.len() == 4 {
        vec![b, h, w, c]
    } else {
        vec![h, w, c]
    }
}

pub(crate) fn downsample_forward<T: Element>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (b, h, w, c, oh, ow) = downsample_geometry(x.shape(), factor)?;
    let (ph, pw) = (pad_amounts(h, factor).0 as isize, pad_amounts(w, factor).0 as isize);
    let src = x.data();
    let area = (factor * factor) as f64;
    let mut out = vec![T::ZERO; b * oh * ow * c];
    for bi in 0..b {
        for oi in 0..oh {
            for oj in 0..ow {
                let mut acc = vec![0.0f64; c];
                for di in 0..factor {
                    let si = reflect_index((oi * factor + di) as isize - ph, h);
                    for dj in 0..factor {
                        let sj = reflect_index((oj * factor + dj) as isize - pw, w);
                        let base = ((bi * h + si) * w + sj) * c;
                        for (a, v) in acc.iter_mut().zip(&src[base..base + c]) {
                            *a += v.f64();
                        }
                    }
                }
                let ob = ((bi * oh + oi) * ow + oj) * c;
                for (o, a) in out[ob..ob + c].iter_mut().zip(acc) {
                    *o = T::of(a / area);
                }
            }
        }
    }
    Tensor::new(&out_shape_like(x.shape(), b, oh, ow, c), out)
}

fn downsample_backward(shape: &[usize], factor: usize, g: &[f64]) -> Vec<f64> {
    let (b, h, w, c, oh, ow) = downsample_geometry(shape, factor).expect("checked in forward");
    let (ph, pw) = (pad_amounts(h, factor).0 as isize, pad_amounts(w, factor).0 as isize);
    let area = (factor * factor) as f64;
    let mut dx = vec![0.0; b * h * w * c];
    for bi in 0..b {
        for oi in 0..oh {
            for oj in 0..ow {
                let ob = ((bi * oh + oi) * ow + oj) * c;
                for di in 0..factor {
                    let si = reflect_index((oi * factor + di) as isize - ph, h);
                    for dj in 0..factor {
                        let sj = reflect_index((oj * factor + dj) as isize - pw, w);
                        let base = ((bi * h + si) * w + sj) * c;
                        for ci in 0..c {
                            dx[base + ci] += g[ob + ci] / area;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn spectral_check(x: &[usize], re: &[usize], im: &[usize]) -> Result<(usize, usize, usize, usize)> {
    let (b, h, w, c) = bhwc(x, "spectral_filter")?;
    if re != [h, w, c] || im != [h, w, c] {
        return Err(shape_err(
            "spectral_filter",
            format!("filter {re:?}/{im:?} does not match feature map {x:?}"),
        ));
    }
    Ok((b, h, w, c))
}

fn gather_plane<T: Element>(x: &[T], bi: usize, ci: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let base = bi * h * w * c;
    (0..h * w).map(|p| x[base + p * c + ci].f64()).collect()
}

fn filter_plane<T: Element>(re: &[T], im: &[T], ci: usize, hw: usize, c: usize) -> Vec<Complex64> {
    (0..hw)
        .map(|p| Complex64::new(re[p * c + ci].f64(), im[p * c + ci].f64()))
        .collect()
}

pub(crate) fn spectral_forward<T: Element>(
    x: &Tensor<T>,
    re: &Tensor<T>,
    im: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, h, w, c) = spectral_check(x.shape(), re.shape(), im.shape())?;
    let hw = h * w;
    let filters: Vec<Vec<Complex64>> =
        (0..c).map(|ci| filter_plane(re.data(), im.data(), ci, hw, c)).collect();
    let planes = super::par::map_range(b * c, b * c * hw * 16, |k| {
        let (bi, ci) = (k / c, k % c);
        let mut spec = forward_real(&gather_plane(x.data(), bi, ci, h, w, c), h, w);
        for (s, f) in spec.iter_mut().zip(&filters[ci]) {
            *s *= f;
        }
        inverse_complex(spec, h, w)
    });
    let mut out = vec![T::ZERO; x.len()];
    for (k, plane) in planes.iter().enumerate() {
        let (bi, ci) = (k / c, k % c);
        for (p, v) in plane.iter().enumerate() {
            out[(bi * hw + p) * c + ci] = T::of(v.re);
        }
    }
    Tensor::new(x.shape(), out)
}

#[allow(clippy::type_complexity)]
fn spectral_backward<T: Element>(
    x: &Tensor<T>,
    re: &Tensor<T>,
    im: &Tensor<T>,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (b, h, w, c) = spectral_check(x.shape(), re.shape(), im.shape()).expect("checked");
    let hw = h * w;
    let filters: Vec<Vec<Complex64>> =
        (0..c).map(|ci| filter_plane(re.data(), im.data(), ci, hw, c)).collect();
    // per plane: (dx plane, M ⊙ G products)
    let parts = super::par::map_range(b * c, b * c * hw * 32, |k| {
        let (bi, ci) = (k / c, k % c);
        let m = forward_real(&gather_plane(x.data(), bi, ci, h, w, c), h, w);
        let gplane: Vec<Complex64> = (0..hw)
            .map(|p| Complex64::new(g[(bi * hw + p) * c + ci], 0.0))
            .collect();
        // G = F⁻¹ g (normalised); dx = Re(F(W ⊙ G)); dW = M ⊙ G
        let big_g = inverse_complex(gplane, h, w);
        let mut wg: Vec<Complex64> = big_g.iter().zip(&filters[ci]).map(|(a, f)| a * f).collect();
        super::fft::transform_plane(&mut wg, h, w, rustfft::FftDirection::Forward);
        let mg: Vec<Complex64> = m.iter().zip(&big_g).map(|(a, b)| a * b).collect();
        (wg, mg)
    });
    let mut dx = vec![0.0; x.len()];
    let mut dre = vec![0.0; hw * c];
    let mut dim = vec![0.0; hw * c];
    for (k, (wg, mg)) in parts.iter().enumerate() {
        let (bi, ci) = (k / c, k % c);
        for p in 0..hw {
            dx[(bi * hw + p) * c + ci] = wg[p].re;
            dre[p * c + ci] += mg[p].re;
            dim[p * c + ci] -= mg[p].im;
        }
    }
    (dx, dre, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_matches_numpy_reflect_mode() {
        let n = 4;
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, n)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-2, 1), 0);
    }

    #[test]
    fn downsample_block_mean() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[2, 2, 1], &[1., 2., 3., 4.]).unwrap());
        let y = tape.downsample(x, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[2.5]);
    }

    #[test]
    fn downsample_rejects_zero_factor() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2, 1]));
        assert!(tape.downsample(x, 0).is_err());
    }

    #[test]
    fn unused_leaf_has_no_grad() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::full(&[2], 3.0));
        let unused = tape.leaf(Tensor::full(&[2], 1.0));
        let s = tape.sum(a);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 1.0]);
        assert!(tape.grad(unused).is_none());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::full(&[2], 3.0));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn norm_of_zero_has_zero_grad() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[3]));
        let n = tape.norm(a);
        tape.backward(n).unwrap();
        assert_eq!(tape.value(n).data(), &[0.0]);
        assert!(tape.grad(a).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
