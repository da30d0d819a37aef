use crate::error::{invalid, shape_err, Result};
use crate::numkit::{svd_thin, Element, Tensor};

/// How many singular triplets to keep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RankPolicy {
    Fixed(usize),
    /// smallest `t` with `Σ_{i≤t} Sᵢ² / Σ Sᵢ² ≥ theta`; when `capped`,
    /// additionally `t ≤ max(1, min(P,Q)/4)`
    Energy { theta: f64, capped: bool },
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy::Energy {
            theta: 0.99,
            capped: true,
        }
    }
}

impl RankPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RankPolicy::Fixed(0) => Err(invalid("fixed rank must be ≥ 1")),
            RankPolicy::Energy { theta, .. } if !(theta > 0.0 && theta <= 1.0) => {
                Err(invalid(format!("energy threshold {theta} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// Rank chosen for singular values `s` of a `p×q` matrix.
    pub fn rank(&self, s: &[f64], p: usize, q: usize) -> usize {
        let r = p.min(q);
        match *self {
            RankPolicy::Fixed(t) => t.min(r),
            RankPolicy::Energy { theta, capped } => {
                let total: f64 = s.iter().map(|v| v * v).sum();
                let mut t = r;
                if total > 0.0 {
                    let mut acc = 0.0;
                    for (i, v) in s.iter().enumerate() {
                        acc += v * v;
                        if acc / total >= theta {
                            t = i + 1;
                            break;
                        }
                    }
                } else {
                    t = 1;
                }
                if capped {
                    t = t.min((r / 4).max(1));
                }
                t.max(1).min(r)
            }
        }
    }
}

/// Element count of rank-`t` factors of a `p×q` matrix: `P·t + t + t·Q`.
pub fn lowrank_elements(p: usize, q: usize, t: usize) -> usize {
    p * t + t + t * q
}

/// Truncated SVD wire form of a feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankFactors<T: Element = f32> {
    /// `P×t`
    pub u: Tensor<T>,
    /// `t`
    pub s: Tensor<T>,
    /// `Q×t`
    pub v: Tensor<T>,
    /// shape of the original feature map; its product is `P·Q`
    pub shape: Vec<usize>,
}

/// `[.., c]` → `(P, Q)` with `Q = c` and `P` the product of the rest.
pub fn matrix_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [] => Err(shape_err("svd_encode", "scalar feature map")),
        [q] => Ok((1, *q)),
        [rest @ .., q] => Ok((rest.iter().product(), *q)),
    }
}

impl<T: Element> LowRankFactors<T> {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.u.shape()[0], self.v.shape()[0])
    }

    pub fn element_count(&self) -> usize {
        let (p, q) = self.dims();
        lowrank_elements(p, q, self.rank())
    }

    /// Truncates `f` to the rank chosen by `policy`, without any fallback.
    pub fn factorize(f: &Tensor<T>, policy: RankPolicy) -> Result<Self> {
        policy.validate()?;
        let (p, q) = matrix_dims(f.shape())?;
        let svd = svd_thin(&f.reshape(&[p, q])?)?;
        let t = policy.rank(&svd.s.to_f64_vec(), p, q);
        let r = svd.rank();
        let cols = |m: &Tensor<T>, rows: usize| -> Tensor<T> {
            let d = m.data();
            let data = (0..rows).flat_map(|i| d[i * r..i * r + t].iter().copied()).collect();
            Tensor::new(&[rows, t], data).expect("column slice")
        };
        Ok(Self {
            u: cols(&svd.u, p),
            s: Tensor::new(&[t], svd.s.data()[..t].to_vec())?,
            v: cols(&svd.v, q),
            shape: f.shape().to_vec(),
        })
    }

    fn check(&self) -> Result<(usize, usize, usize)> {
        let t = self.s.len();
        let (&[p, tu], &[q, tv]) = (self.u.shape(), self.v.shape()) else {
            return Err(shape_err("svd_decode", "factors must be matrices"));
        };
        if tu != t || tv != t || t > p.min(q) || matrix_dims(&self.shape)? != (p, q) {
            return Err(shape_err(
                "svd_decode",
                format!(
                    "inconsistent factors U {:?}, S {:?}, V {:?} for shape {:?}",
                    self.u.shape(),
                    self.s.shape(),
                    self.v.shape(),
                    self.shape
                ),
            ));
        }
        Ok((p, q, t))
    }
}

/// Feature payload as sent on the wire.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoded<T: Element = f32> {
    Raw(Tensor<T>),
    LowRank(LowRankFactors<T>),
}

impl<T: Element> Encoded<T> {
    pub fn element_count(&self) -> usize {
        match self {
            Encoded::Raw(t) => t.len(),
            Encoded::LowRank(f) => f.element_count(),
        }
    }

    pub fn is_lowrank(&self) -> bool {
        matches!(self, Encoded::LowRank(_))
    }

    pub fn decode(&self) -> Result<Tensor<T>> {
        match self {
            Encoded::Raw(t) => Ok(t.clone()),
            Encoded::LowRank(f) => svd_decode(f),
        }
    }
}

/// Factorizes `f` (viewed as `P×Q`, channels last) and falls back to raw
/// transmission unless the factors are strictly smaller than `P·Q`.
pub fn svd_encode<T: Element>(f: &Tensor<T>, policy: RankPolicy) -> Result<Encoded<T>> {
    let lr = LowRankFactors::factorize(f, policy)?;
    let (p, q) = lr.dims();
    if lr.element_count() >= p * q {
        Ok(Encoded::Raw(f.clone()))
    } else {
        Ok(Encoded::LowRank(lr))
    }
}

/// `U·diag(S)·Vᵀ` reshaped to the original feature shape.
pub fn svd_decode<T: Element>(lr: &LowRankFactors<T>) -> Result<Tensor<T>> {
    let (p, q, t) = lr.check()?;
    let (u, s, v) = (lr.u.data(), lr.s.data(), lr.v.data());
    let mut out = Vec::with_capacity(p * q);
    for i in 0..p {
        for j in 0..q {
            let acc: f64 = (0..t).map(|k| u[i * t + k].f64() * s[k].f64() * v[j * t + k].f64()).sum();
            out.push(T::of(acc));
        }
    }
    Tensor::new(&lr.shape, out)
}

/// Wire setting for feature maps.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Codec {
    #[default]
    Off,
    /// full-rank factors, which never beat raw and therefore always fall
    /// back
    Lossless,
    LowRank(RankPolicy),
}

impl Codec {
    pub fn encode<T: Element>(&self, f: &Tensor<T>) -> Result<Encoded<T>> {
        match self {
            Codec::Off => Ok(Encoded::Raw(f.clone())),
            Codec::Lossless => {
                let (p, q) = matrix_dims(f.shape())?;
                svd_encode(f, RankPolicy::Fixed(p.min(q)))
            }
            Codec::LowRank(policy) => svd_encode(f, *policy),
        }
    }

    pub fn is_on(&self) -> bool {
        !matches!(self, Codec::Off)
    }
}
