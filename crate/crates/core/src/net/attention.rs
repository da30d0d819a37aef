use rand::Rng;

use super::init_matrix;
use crate::error::{invalid, shape_err, Result};
use crate::numkit::{Element, Tape, Tensor, Var};

/// Multi-head self-attention weights. `W` is `Tensor<T>` for storage and
/// `Var` while a forward pass is being recorded.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<W> {
    pub heads: usize,
    pub wq: W,
    pub wk: W,
    pub wv: W,
    pub wo: W,
}

impl<W> AttentionParams<W> {
    pub fn map<U>(&self, prefix: &str, f: &mut impl FnMut(String, &W) -> U) -> AttentionParams<U> {
        AttentionParams {
            heads: self.heads,
            wq: f(format!("{prefix}.wq"), &self.wq),
            wk: f(format!("{prefix}.wk"), &self.wk),
            wv: f(format!("{prefix}.wv"), &self.wv),
            wo: f(format!("{prefix}.wo"), &self.wo),
        }
    }
}

impl<T: Element> AttentionParams<Tensor<T>> {
    /// Validates `d % heads == 0` and that every projection is `d×d`.
    pub fn new(heads: usize, wq: Tensor<T>, wk: Tensor<T>, wv: Tensor<T>, wo: Tensor<T>) -> Result<Self> {
        let d = wq.shape().first().copied().unwrap_or(0);
        if heads == 0 || d == 0 || d % heads != 0 {
            return Err(invalid(format!("model width {d} not divisible by {heads} heads")));
        }
        for (name, m) in [("wq", &wq), ("wk", &wk), ("wv", &wv), ("wo", &wo)] {
            if m.shape() != [d, d] {
                return Err(shape_err("AttentionParams", format!("{name} is {:?}, expected [{d}, {d}]", m.shape())));
            }
            m.ensure_finite("AttentionParams")?;
        }
        Ok(Self { heads, wq, wk, wv, wo })
    }

    pub fn identity(d: usize, heads: usize) -> Result<Self> {
        Self::new(heads, Tensor::eye(d), Tensor::eye(d), Tensor::eye(d), Tensor::eye(d))
    }

    pub fn random<R: Rng + ?Sized>(d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        let mut m = || init_matrix(d, d, rng);
        let (wq, wk, wv, wo) = (m(), m(), m(), m());
        Self::new(heads, wq, wk, wv, wo)
    }

    pub fn width(&self) -> usize {
        self.wq.shape()[0]
    }
}

/// `[B,N,d] → [B·h, N, d_k]`
fn split_heads<T: Element>(tape: &mut Tape<T>, x: Var, b: usize, n: usize, h: usize, dk: usize) -> Result<Var> {
    let x = tape.reshape(x, &[b, n, h, dk])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[b * h, n, dk])
}

/// Records multi-head self-attention over tokens `x: [B,N,d]` (or `[N,d]`).
pub fn msa<T: Element>(tape: &mut Tape<T>, x: Var, p: &AttentionParams<Var>) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (b, n, d) = match shape[..] {
        [b, n, d] => (b, n, d),
        [n, d] => (1, n, d),
        _ => return Err(shape_err("msa", format!("expected [B,N,d] tokens, got {shape:?}"))),
    };
    if tape.shape(p.wq) != [d, d] {
        return Err(shape_err("msa", format!("token width {d} vs projection {:?}", tape.shape(p.wq))));
    }
    let h = p.heads;
    let dk = d / h;
    let x3 = tape.reshape(x, &[b, n, d])?;
    let q = tape.matmul(x3, p.wq)?;
    let k = tape.matmul(x3, p.wk)?;
    let v = tape.matmul(x3, p.wv)?;
    let q = split_heads(tape, q, b, n, h, dk)?;
    let v = split_heads(tape, v, b, n, h, dk)?;
    let k = tape.reshape(k, &[b, n, h, dk])?;
    let kt = tape.permute(k, &[0, 2, 3, 1])?;
    let kt = tape.reshape(kt, &[b * h, dk, n])?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let attn = tape.softmax(scores)?;
    let heads = tape.matmul(attn, v)?;
    let heads = tape.reshape(heads, &[b, h, n, dk])?;
    let heads = tape.permute(heads, &[0, 2, 1, 3])?;
    let concat = tape.reshape(heads, &[b, n, d])?;
    let out = tape.matmul(concat, p.wo)?;
    tape.reshape(out, &shape)
}

/// Eager form of [`msa`].
pub fn msa_forward<T: Element>(x: &Tensor<T>, p: &AttentionParams<Tensor<T>>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let pv = p.map("", &mut |_, w| tape.leaf(w.clone()));
    let y = msa(&mut tape, xv, &pv)?;
    Ok(tape.value(y).clone())
}

/// Attention weights `softmax(QKᵀ/√d_k)` per head: `[h, N, N]` for `[N,d]`
/// input. Exposed for inspection and tests.
pub fn attention_weights<T: Element>(x: &Tensor<T>, p: &AttentionParams<Tensor<T>>) -> Result<Tensor<T>> {
    let (n, d) = x.dims2("attention_weights")?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let wq = tape.leaf(p.wq.clone());
    let wk = tape.leaf(p.wk.clone());
    let h = p.heads;
    let dk = d / h;
    let q = tape.matmul(xv, wq)?;
    let k = tape.matmul(xv, wk)?;
    let q = split_heads(&mut tape, q, 1, n, h, dk)?;
    let k = tape.reshape(k, &[1, n, h, dk])?;
    let kt = tape.permute(k, &[0, 2, 3, 1])?;
    let kt = tape.reshape(kt, &[h, dk, n])?;
    let s = tape.matmul(q, kt)?;
    let s = tape.scale(s, 1.0 / (dk as f64).sqrt());
    let a = tape.softmax(s)?;
    Ok(tape.value(a).clone())
}
