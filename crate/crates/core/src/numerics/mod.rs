//! Dense tensors, FFT, reverse-mode differentiation and gradient checking.

mod fft;
mod gradcheck;
mod graph;
mod param;
mod rng;
mod tensor;

pub use fft::{fft_in_place, rfft_amplitude};
pub use gradcheck::{grad_check, relative_error, CoordinateCheck, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use param::{ParamId, ParamStore, Parameter};
pub use rng::Rng;
pub use tensor::Tensor;
