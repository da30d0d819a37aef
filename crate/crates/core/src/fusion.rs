//! Gated cross-modal fusion, the classifier head, the hard-threshold map
//! and the training loss.
//!
//! `C_b`, `C_d` and `C_l` are independent 1×1 channel projections (`c×c`).
//! The head pools a feature map over space and applies a dense layer plus
//! softmax.

use rand::Rng;

use crate::error::{invalid, shape_err, Result};
use crate::net::init_matrix;
use crate::numkit::{Element, Tape, Tensor, Var};

pub const DEFAULT_LAMBDA: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<W> {
    pub cb: W,
    pub cd: W,
    pub cl: W,
    /// `c × N`
    pub head_w: W,
    /// `N`
    pub head_b: W,
}

impl<W> FusionParams<W> {
    pub fn map<U>(&self, prefix: &str, f: &mut impl FnMut(String, &W) -> U) -> FusionParams<U> {
        FusionParams {
            cb: f(format!("{prefix}.cb"), &self.cb),
            cd: f(format!("{prefix}.cd"), &self.cd),
            cl: f(format!("{prefix}.cl"), &self.cl),
            head_w: f(format!("{prefix}.head_w"), &self.head_w),
            head_b: f(format!("{prefix}.head_b"), &self.head_b),
        }
    }
}

impl<T: Element> FusionParams<Tensor<T>> {
    pub fn new(cb: Tensor<T>, cd: Tensor<T>, cl: Tensor<T>, head_w: Tensor<T>, head_b: Tensor<T>) -> Result<Self> {
        let c = cb.shape().first().copied().unwrap_or(0);
        for (name, m) in [("cb", &cb), ("cd", &cd), ("cl", &cl)] {
            if m.shape() != [c, c] {
                return Err(shape_err("FusionParams", format!("{name} is {:?}, expected [{c}, {c}]", m.shape())));
            }
        }
        let n = head_b.len();
        if n < 2 {
            return Err(invalid(format!("classifier needs at least 2 classes, got {n}")));
        }
        if head_w.shape() != [c, n] || head_b.shape() != [n] {
            return Err(shape_err(
                "FusionParams",
                format!("head {:?} + {:?} does not map {c} channels to {n} classes", head_w.shape(), head_b.shape()),
            ));
        }
        Ok(Self { cb, cd, cl, head_w, head_b })
    }

    pub fn init<R: Rng + ?Sized>(channels: usize, classes: usize, rng: &mut R) -> Result<Self> {
        let cb = init_matrix(channels, channels, rng);
        let cd = init_matrix(channels, channels, rng);
        let cl = init_matrix(channels, channels, rng);
        let head_w = init_matrix(channels, classes, rng);
        Self::new(cb, cd, cl, head_w, Tensor::zeros(&[classes]))
    }

    pub fn channels(&self) -> usize {
        self.cb.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.head_b.len()
    }
}

/// Outputs of the two gated branches and their sum.
#[derive(Clone, Copy, Debug)]
pub struct Fused {
    pub f1: Var,
    pub f2: Var,
    pub fusion: Var,
}

/// 1×1 projection over the last axis of any-rank `x`.
fn project<T: Element>(tape: &mut Tape<T>, x: Var, w: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let c = *shape.last().ok_or_else(|| shape_err("fuse", "scalar feature map"))?;
    let flat = tape.reshape(x, &[shape.iter().product::<usize>() / c.max(1), c])?;
    let y = tape.matmul(flat, w)?;
    let mut out_shape = shape;
    *out_shape.last_mut().expect("non-empty") = tape.shape(w)[1];
    tape.reshape(y, &out_shape)
}

/// Records `F1 = σ(C_d f_h)⊙C_b f_l + C_b f_h`, `F2 = σ(C_l f_h)⊙C_b f_l +
/// C_b f_h` and `F_fusion = F1 + F2`.
pub fn fuse<T: Element>(tape: &mut Tape<T>, f_hsi: Var, f_lidar: Var, p: &FusionParams<Var>) -> Result<Fused> {
    if tape.shape(f_hsi) != tape.shape(f_lidar) {
        return Err(shape_err(
            "fuse",
            format!("{:?} vs {:?}", tape.shape(f_hsi), tape.shape(f_lidar)),
        ));
    }
    let bh = project(tape, f_hsi, p.cb)?;
    let bl = project(tape, f_lidar, p.cb)?;
    let dh = project(tape, f_hsi, p.cd)?;
    let lh = project(tape, f_hsi, p.cl)?;
    let g1 = tape.sigmoid(dh);
    let g2 = tape.sigmoid(lh);
    let m1 = tape.mul(g1, bl)?;
    let m2 = tape.mul(g2, bl)?;
    let f1 = tape.add(m1, bh)?;
    let f2 = tape.add(m2, bh)?;
    let fusion = tape.add(f1, f2)?;
    Ok(Fused { f1, f2, fusion })
}

/// Class probabilities `[B,N]` from pooled features `[B,c]`.
pub fn classify<T: Element>(tape: &mut Tape<T>, pooled: Var, p: &FusionParams<Var>) -> Result<Var> {
    let logits = tape.matmul(pooled, p.head_w)?;
    let logits = tape.add_bias(logits, p.head_b)?;
    tape.softmax(logits)
}

/// Spatial mean pooling followed by [`classify`]; `f` is `[B,h,w,c]`.
pub fn classify_map<T: Element>(tape: &mut Tape<T>, f: Var, p: &FusionParams<Var>) -> Result<Var> {
    let pooled = tape.mean_pool(f)?;
    classify(tape, pooled, p)
}

/// 1 when the largest probability reaches `tau`, else 0.
pub fn threshold_map(probs: &[f64], tau: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(invalid(format!("threshold {tau} outside [0, 1]")));
    }
    let pmax = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(u8::from(pmax >= tau))
}

/// Per-sample class probabilities for the loss. `hsi`/`lidar` are absent in
/// single-modality training, which drops the consistency term.
#[derive(Clone, Copy, Debug)]
pub struct LogitsBundle {
    pub fusion: Var,
    pub hsi: Option<Var>,
    pub lidar: Option<Var>,
    /// one-hot `[n,N]`
    pub target: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub ce: Var,
    pub mse: Option<Var>,
    pub l2: Option<Var>,
}

/// `CE + (1/n)(Σ(O_f−O_1)² + Σ(O_f−O_2)²) + λ·Σ‖w‖₂`, CE summed over the
/// batch with probabilities clamped at 1e-12 before the log.
pub fn loss<T: Element>(tape: &mut Tape<T>, b: &LogitsBundle, weights: &[Var], lambda: f64) -> Result<LossParts> {
    if tape.shape(b.fusion) != tape.shape(b.target) {
        return Err(shape_err(
            "loss",
            format!("probabilities {:?} vs target {:?}", tape.shape(b.fusion), tape.shape(b.target)),
        ));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("L2 coefficient {lambda} must be finite and ≥ 0")));
    }
    let n = tape.shape(b.fusion)[0].max(1) as f64;
    let logp = tape.log(b.fusion);
    let tl = tape.mul(b.target, logp)?;
    let s = tape.sum(tl);
    let ce = tape.scale(s, -1.0);
    let mut total = ce;

    let mut sq_terms = Vec::new();
    for o in [b.hsi, b.lidar].into_iter().flatten() {
        let d = tape.sub(b.fusion, o)?;
        let d2 = tape.mul(d, d)?;
        sq_terms.push(tape.sum(d2));
    }
    let mse = match sq_terms.split_first() {
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = tape.add(acc, t)?;
            }
            let m = tape.scale(acc, 1.0 / n);
            total = tape.add(total, m)?;
            Some(m)
        }
        None => None,
    };

    let l2 = l2_penalty(tape, weights, lambda)?;
    if let Some(r) = l2 {
        total = tape.add(total, r)?;
    }
    Ok(LossParts { total, ce, mse, l2 })
}

/// `λ·Σ‖w‖₂` over `weights`; `None` when λ is 0 or the list is empty.
pub fn l2_penalty<T: Element>(tape: &mut Tape<T>, weights: &[Var], lambda: f64) -> Result<Option<Var>> {
    if lambda == 0.0 || weights.is_empty() {
        return Ok(None);
    }
    let mut acc = tape.norm(weights[0]);
    for &w in &weights[1..] {
        let n = tape.norm(w);
        acc = tape.add(acc, n)?;
    }
    Ok(Some(tape.scale(acc, lambda)))
}

/// Eager [`fuse`]: returns `(F1, F2, F_fusion)`.
#[allow(clippy::type_complexity)]
pub fn fuse_forward<T: Element>(
    f_hsi: &Tensor<T>,
    f_lidar: &Tensor<T>,
    p: &FusionParams<Tensor<T>>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let mut tape = Tape::new();
    let h = tape.leaf(f_hsi.clone());
    let l = tape.leaf(f_lidar.clone());
    let pv = p.map("", &mut |_, w| tape.leaf(w.clone()));
    let out = fuse(&mut tape, h, l, &pv)?;
    Ok((
        tape.value(out.f1).clone(),
        tape.value(out.f2).clone(),
        tape.value(out.fusion).clone(),
    ))
}

/// Eager [`classify`] on pooled features `[B,c]`.
pub fn classify_forward<T: Element>(pooled: &Tensor<T>, p: &FusionParams<Tensor<T>>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.leaf(pooled.clone());
    let pv = p.map("", &mut |_, w| tape.leaf(w.clone()));
    let y = classify(&mut tape, x, &pv)?;
    Ok(tape.value(y).clone())
}

/// Eager loss value on probability tensors.
pub fn loss_value<T: Element>(
    fusion: &Tensor<T>,
    hsi: Option<&Tensor<T>>,
    lidar: Option<&Tensor<T>>,
    target: &Tensor<T>,
    weights: &[Tensor<T>],
    lambda: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bundle = LogitsBundle {
        fusion: tape.leaf(fusion.clone()),
        hsi: hsi.map(|t| tape.leaf(t.clone())),
        lidar: lidar.map(|t| tape.leaf(t.clone())),
        target: tape.leaf(target.clone()),
    };
    let w: Vec<Var> = weights.iter().map(|t| tape.leaf(t.clone())).collect();
    let parts = loss(&mut tape, &bundle, &w, lambda)?;
    Ok(tape.value(parts.total).data()[0].f64())
}

/// One-hot `[n, classes]` rows from 0-based class indices.
pub fn one_hot<T: Element>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::ZERO; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(invalid(format!("label {l} at index {i} outside 0..{classes}")));
        }
        data[i * classes + l] = T::ONE;
    }
    Tensor::new(&[labels.len(), classes], data)
}
