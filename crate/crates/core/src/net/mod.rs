//! Branch encoder: downsample → 1×1 conv → multi-head self-attention →
//! frequency-domain filter, repeated per stage.
//!
//! Feature maps are NHWC. A 1×1 convolution is a matmul over the flattened
//! `[B·H·W, C]` view; MSA treats every pixel as a token with the channels as
//! model width.

mod attention;
mod fdp;

use rand::Rng;

pub use attention::{attention_weights, msa, msa_forward, AttentionParams};
pub use fdp::{fdp, fdp_forward, SpectralFilterParams};

use crate::error::{invalid, shape_err, Error, Result};
use crate::numkit::{Element, Tape, Tensor, Var};

/// Xavier-uniform `rows×cols` matrix.
pub(crate) fn init_matrix<T: Element, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::of(rng.random_range(-a..a))).collect();
    Tensor::new(&[rows, cols], data).expect("length matches")
}

/// Eager non-overlapping average pooling of `[h,w,c]` or `[B,h,w,c]`,
/// reflect-padding the spatial axes up to a multiple of `factor`.
pub fn downsample<T: Element>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let y = tape.downsample(v, factor)?;
    Ok(tape.value(y).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoder {
    /// downsample and 1×1 conv only
    Plain,
    /// adds MSA and FDP to every stage
    Improved,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchConfig {
    pub in_channels: usize,
    /// output channels per stage
    pub widths: Vec<usize>,
    pub factor: usize,
    /// spatial side of the square input patch
    pub patch: usize,
    pub heads: usize,
    pub encoder: Encoder,
}

impl BranchConfig {
    /// Two stages (32, 64), factor 2, 8×8 patches, 4 heads.
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            widths: vec![32, 64],
            factor: 2,
            patch: 8,
            heads: 4,
            encoder: Encoder::Improved,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.patch == 0 {
            return Err(invalid("branch needs nonzero input channels and patch size"));
        }
        if self.factor == 0 {
            return Err(invalid("downsample factor must be ≥ 1"));
        }
        if self.widths.is_empty() {
            return Err(invalid("branch needs at least one stage"));
        }
        for (i, &w) in self.widths.iter().enumerate() {
            if w == 0 || (self.encoder == Encoder::Improved && w % self.heads.max(1) != 0) || self.heads == 0 {
                return Err(invalid(format!(
                    "stage {i}: width {w} must be positive and divisible by {} heads",
                    self.heads
                )));
            }
        }
        Ok(())
    }

    /// Spatial side after each stage.
    pub fn spatial(&self) -> Vec<usize> {
        let mut s = self.patch;
        self.widths
            .iter()
            .map(|_| {
                s = s.div_ceil(self.factor);
                s
            })
            .collect()
    }

    /// `[h, w, c]` of the branch output for one sample.
    pub fn feature_shape(&self) -> [usize; 3] {
        let s = *self.spatial().last().expect("validated");
        [s, s, *self.widths.last().expect("validated")]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageParams<W> {
    /// `c_in × c_out`
    pub conv: W,
    pub attn: Option<AttentionParams<W>>,
    pub fdp: Option<SpectralFilterParams<W>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchParams<W> {
    pub factor: usize,
    pub stages: Vec<StageParams<W>>,
}

impl<W> BranchParams<W> {
    pub fn map<U>(&self, prefix: &str, f: &mut impl FnMut(String, &W) -> U) -> BranchParams<U> {
        BranchParams {
            factor: self.factor,
            stages: self
                .stages
                .iter()
                .enumerate()
                .map(|(i, s)| StageParams {
                    conv: f(format!("{prefix}.stage{i}.conv"), &s.conv),
                    attn: s.attn.as_ref().map(|a| a.map(&format!("{prefix}.stage{i}.attn"), f)),
                    fdp: s.fdp.as_ref().map(|p| p.map(&format!("{prefix}.stage{i}.fdp"), f)),
                })
                .collect(),
        }
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }
}

impl<T: Element> BranchParams<Tensor<T>> {
    /// Checks that every stage chains onto the previous one.
    pub fn new(cfg: &BranchConfig, stages: Vec<StageParams<Tensor<T>>>) -> Result<Self> {
        cfg.validate()?;
        if stages.len() != cfg.widths.len() {
            return Err(invalid(format!(
                "{} stages supplied, config declares {}",
                stages.len(),
                cfg.widths.len()
            )));
        }
        let spatial = cfg.spatial();
        let mut c_in = cfg.in_channels;
        for (i, s) in stages.iter().enumerate() {
            let c_out = cfg.widths[i];
            let stage_err = |what: String| shape_err("BranchParams", format!("stage {i}: {what}"));
            if s.conv.shape() != [c_in, c_out] {
                return Err(stage_err(format!("conv is {:?}, expected [{c_in}, {c_out}]", s.conv.shape())));
            }
            let improved = cfg.encoder == Encoder::Improved;
            match (&s.attn, improved) {
                (Some(a), true) if a.width() == c_out && a.heads == cfg.heads => {}
                (None, false) => {}
                _ => return Err(stage_err(format!("attention must be {c_out}-wide with {} heads", cfg.heads))),
            }
            match (&s.fdp, improved) {
                (Some(f), true) if f.shape() == [spatial[i], spatial[i], c_out] => {}
                (None, false) => {}
                _ => {
                    return Err(stage_err(format!(
                        "spectral filter must be [{0}, {0}, {c_out}]",
                        spatial[i]
                    )))
                }
            }
            c_in = c_out;
        }
        Ok(Self {
            factor: cfg.factor,
            stages,
        })
    }

    /// Xavier-initialised projections and all-pass spectral filters.
    pub fn init<R: Rng + ?Sized>(cfg: &BranchConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let spatial = cfg.spatial();
        let mut c_in = cfg.in_channels;
        let mut stages = Vec::with_capacity(cfg.widths.len());
        for (i, &c_out) in cfg.widths.iter().enumerate() {
            let conv = init_matrix(c_in, c_out, rng);
            let (attn, fdp) = match cfg.encoder {
                Encoder::Plain => (None, None),
                Encoder::Improved => (
                    Some(AttentionParams::random(c_out, cfg.heads, rng)?),
                    Some(SpectralFilterParams::identity(spatial[i], spatial[i], c_out)),
                ),
            };
            stages.push(StageParams { conv, attn, fdp });
            c_in = c_out;
        }
        Self::new(cfg, stages)
    }
}

/// Records the branch encoder on `x: [B,h,w,c]` (or `[h,w,c]`).
pub fn branch<T: Element>(tape: &mut Tape<T>, x: Var, p: &BranchParams<Var>) -> Result<Var> {
    let batched = tape.shape(x).len() == 4;
    let mut cur = x;
    if !batched {
        let s = tape.shape(x).to_vec();
        if s.len() != 3 {
            return Err(shape_err("branch", format!("expected [B,h,w,c] or [h,w,c], got {s:?}")));
        }
        cur = tape.reshape(x, &[1, s[0], s[1], s[2]])?;
    }
    for (i, st) in p.stages.iter().enumerate() {
        cur = tape.downsample(cur, p.factor)?;
        let &[b, h, w, c] = tape.shape(cur) else { unreachable!() };
        if tape.shape(st.conv)[0] != c {
            return Err(shape_err(
                "branch",
                format!("stage {i}: input has {c} channels, conv expects {}", tape.shape(st.conv)[0]),
            ));
        }
        let c_out = tape.shape(st.conv)[1];
        let tokens = tape.reshape(cur, &[b, h * w, c])?;
        let mut y = tape.matmul(tokens, st.conv)?;
        if let Some(a) = &st.attn {
            y = msa(tape, y, a)?;
        }
        cur = tape.reshape(y, &[b, h, w, c_out])?;
        if let Some(f) = &st.fdp {
            cur = fdp(tape, cur, f).map_err(|e| match e {
                Error::Shape { detail, .. } => shape_err("branch", format!("stage {i}: {detail}")),
                other => other,
            })?;
        }
    }
    if !batched {
        let s = tape.shape(cur)[1..].to_vec();
        cur = tape.reshape(cur, &s)?;
    }
    Ok(cur)
}

/// Eager form of [`branch`] on a multi-scale stack payload.
pub fn branch_forward<T: Element>(stack: &Tensor<T>, p: &BranchParams<Tensor<T>>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.leaf(stack.clone());
    let pv = p.map("", &mut |_, w| tape.leaf(w.clone()));
    let y = branch(&mut tape, x, &pv)?;
    Ok(tape.value(y).clone())
}
