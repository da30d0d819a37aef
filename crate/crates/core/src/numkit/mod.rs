//! Dense numeric kernels: tensors, FFT, SVD, softmax, matrix products, and
//! the reverse-mode tape with its finite-difference checker.

mod element;
pub mod fft;
pub mod gradcheck;
pub mod kernels;
pub mod par;
pub mod svd;
pub mod tape;
mod tensor;

pub use element::Element;
pub use fft::{fft2, ifft2, InverseTransform};
pub use gradcheck::{grad_check, grad_check_many, GradCheck};
pub use kernels::{matmul, permute, softmax_rows};
pub use svd::{svd_thin, Svd};
pub use tape::{reflect_index, Tape, Var};
pub use tensor::{ComplexTensor, Tensor};
