//! 2-D discrete Fourier transforms over arbitrary sizes.
//!
//! Forward transforms are unnormalised; inverse transforms divide by `h·w`.
//! All arithmetic runs in f64 (rustfft handles mixed radix and Bluestein).

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::{ComplexTensor, Element, Tensor};
use crate::error::{shape_err, Result};

/// Imaginary magnitude above which an inverse transform is flagged as
/// coming from a non-Hermitian spectrum.
pub const IMAG_RESIDUE_WARN: f64 = 1e-3;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, dir: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, dir))
}

/// In-place unnormalised 2-D transform of an `h×w` row-major plane.
pub(crate) fn transform_plane(buf: &mut [Complex64], h: usize, w: usize, dir: FftDirection) {
    debug_assert_eq!(buf.len(), h * w);
    if w > 1 {
        let row = plan(w, dir);
        row.process(buf);
    }
    if h > 1 {
        let col = plan(h, dir);
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for j in 0..w {
            for i in 0..h {
                column[i] = buf[i * w + j];
            }
            col.process(&mut column);
            for i in 0..h {
                buf[i * w + j] = column[i];
            }
        }
    }
}

/// Forward transform of one plane: real input → complex spectrum.
pub(crate) fn forward_real(x: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_plane(&mut buf, h, w, FftDirection::Forward);
    buf
}

/// Normalised inverse transform of one plane, keeping the complex result.
pub(crate) fn inverse_complex(mut buf: Vec<Complex64>, h: usize, w: usize) -> Vec<Complex64> {
    transform_plane(&mut buf, h, w, FftDirection::Inverse);
    let scale = 1.0 / (h * w) as f64;
    for v in &mut buf {
        *v *= scale;
    }
    buf
}

fn plane_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match shape {
        &[h, w] if h >= 1 && w >= 1 => Ok((h, w)),
        s => Err(shape_err(op, format!("expected a non-empty h×w plane, got {s:?}"))),
    }
}

/// Unnormalised forward 2-D DFT of a real `h×w` tensor.
pub fn fft2<T: Element>(x: &Tensor<T>) -> Result<ComplexTensor<T>> {
    let (h, w) = plane_dims(x.shape(), "fft2")?;
    let spec = forward_real(&x.to_f64_vec(), h, w);
    let inter = spec
        .iter()
        .flat_map(|c| [T::of(c.re), T::of(c.im)])
        .collect();
    ComplexTensor::new(&[h, w], inter)
}

/// Result of [`ifft2`]: the real part plus the largest discarded imaginary
/// magnitude.
#[derive(Clone, Debug)]
pub struct InverseTransform<T: Element = f32> {
    pub real: Tensor<T>,
    pub max_imag: f64,
}

impl<T: Element> InverseTransform<T> {
    /// Diagnostic emitted when the input spectrum was visibly non-Hermitian.
    pub fn warning(&self) -> Option<String> {
        (self.max_imag > IMAG_RESIDUE_WARN).then(|| {
            format!(
                "ifft2: discarded imaginary residue {:.3e} exceeds {IMAG_RESIDUE_WARN:e}",
                self.max_imag
            )
        })
    }
}

/// Normalised inverse 2-D DFT; returns the real part.
pub fn ifft2<T: Element>(m: &ComplexTensor<T>) -> Result<InverseTransform<T>> {
    let (h, w) = plane_dims(m.shape(), "ifft2")?;
    let buf: Vec<Complex64> = m
        .interleaved()
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0].f64(), p[1].f64()))
        .collect();
    let out = inverse_complex(buf, h, w);
    let max_imag = out.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    let real = Tensor::new(&[h, w], out.iter().map(|c| T::of(c.re)).collect())?;
    Ok(InverseTransform { real, max_imag })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_only_dc() {
        let c = 1.75;
        let x = Tensor::<f64>::full(&[4, 4], c);
        let s = fft2(&x).unwrap();
        for i in 0..16 {
            let (re, im) = s.get(i);
            let want = if i == 0 { 16.0 * c } else { 0.0 };
            assert!((re - want).abs() < 1e-5 && im.abs() < 1e-5, "bin {i}");
        }
    }

    #[test]
    fn impulse_is_flat() {
        let mut x = Tensor::<f64>::zeros(&[3, 5]);
        x.set(&[0, 0], 1.0);
        let s = fft2(&x).unwrap();
        for i in 0..15 {
            let (re, im) = s.get(i);
            assert!((re - 1.0).abs() < 1e-12 && im.abs() < 1e-12);
        }
    }

    #[test]
    fn dc_only_spectrum_inverts_to_ones() {
        let mut m = ComplexTensor::<f64>::zeros(&[3, 4]);
        m.set(0, 12.0, 0.0);
        let inv = ifft2(&m).unwrap();
        assert!(inv.real.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(inv.warning().is_none());
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let m = ComplexTensor::<f32>::zeros(&[2, 2]);
        assert!(ifft2(&m).unwrap().real.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_hermitian_spectrum_warns() {
        let mut m = ComplexTensor::<f64>::zeros(&[4, 4]);
        m.set(1, 16.0, 0.0);
        let inv = ifft2(&m).unwrap();
        assert!(inv.warning().is_some());
    }

    #[test]
    fn rejects_empty() {
        assert!(fft2(&Tensor::<f32>::zeros(&[0, 3])).is_err());
        assert!(fft2(&Tensor::<f32>::zeros(&[2, 3, 1])).is_err());
    }
}
