//! Adaptive-saturated recurrent networks.
//!
//! The hidden update of the asRNN cell is
//!
//! ```text
//! h_t = W_f⁻¹ tanh(W_f (W_xh x_t + W_hh h_{t-1} + b)),   W_f = U_f D_f
//! ```
//!
//! where `U_f` and `W_hh` are orthogonal (exponential of a skew generator) and
//! `D_f` is a positive diagonal. Small `D_f` keeps the cell near its linear
//! regime; large `D_f` pushes it toward a saturated tanh RNN.
//!
//! The crate provides exact reverse-mode gradients for the cell and two
//! baselines, the parameterizations and their backward maps, an RMSProp
//! optimizer with global-norm clipping, task generators, and a diagnostics
//! engine for BPTT Jacobians. Numeric code is generic over [`Scalar`]
//! (`f32` and `f64`); the aliases below fix the precision.

pub mod cells;
pub mod diagnostics;
mod error;
pub mod linalg;
pub mod optim;
pub mod param;
pub mod run;
mod scalar;
pub mod tasks;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type AsRnn64 = cells::AsRnn<f64>;
pub type AsRnn32 = cells::AsRnn<f32>;
pub type VanillaRnn64 = cells::VanillaRnn<f64>;
pub type Lstm64 = cells::Lstm<f64>;
pub type SkewParam64 = param::SkewParam<f64>;
pub type DiagonalParam64 = param::DiagonalParam<f64>;
