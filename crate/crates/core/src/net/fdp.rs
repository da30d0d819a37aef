use crate::error::{shape_err, Result};
use crate::numkit::{Element, Tape, Tensor, Var};

/// Complex per-bin, per-channel filter `W = re + i·im`, both `[h,w,c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFilterParams<W> {
    pub re: W,
    pub im: W,
}

impl<W> SpectralFilterParams<W> {
    pub fn map<U>(&self, prefix: &str, f: &mut impl FnMut(String, &W) -> U) -> SpectralFilterParams<U> {
        SpectralFilterParams {
            re: f(format!("{prefix}.re"), &self.re),
            im: f(format!("{prefix}.im"), &self.im),
        }
    }
}

impl<T: Element> SpectralFilterParams<Tensor<T>> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        if re.shape() != im.shape() || re.rank() != 3 {
            return Err(shape_err(
                "SpectralFilterParams",
                format!("re {:?} and im {:?} must both be [h,w,c]", re.shape(), im.shape()),
            ));
        }
        Ok(Self { re, im })
    }

    /// All-pass filter (1 + 0i everywhere).
    pub fn identity(h: usize, w: usize, c: usize) -> Self {
        Self {
            re: Tensor::full(&[h, w, c], T::ONE),
            im: Tensor::zeros(&[h, w, c]),
        }
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            re: Tensor::zeros(&[h, w, c]),
            im: Tensor::zeros(&[h, w, c]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }
}

/// Records frequency-domain processing of `x: [B,h,w,c]` or `[h,w,c]`.
pub fn fdp<T: Element>(tape: &mut Tape<T>, x: Var, p: &SpectralFilterParams<Var>) -> Result<Var> {
    tape.spectral_filter(x, p.re, p.im)
}

/// Eager form of [`fdp`].
pub fn fdp_forward<T: Element>(x: &Tensor<T>, p: &SpectralFilterParams<Tensor<T>>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let pv = p.map("", &mut |_, w| tape.leaf(w.clone()));
    let y = fdp(&mut tape, xv, &pv)?;
    Ok(tape.value(y).clone())
}
