//! Recurrent cells with exact backpropagation through time.
//!
//! Batches are column-stacked: an input step is a `d_x × B` matrix and a
//! hidden state is `d_h × B`. Every cell exposes the same [`Recurrent`]
//! interface so the training loop, gradient checker and optimizer stay
//! model-agnostic.

mod asrnn;
pub mod gradcheck;
mod loss;
mod lstm;
mod vanilla;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result, Scalar};

pub use asrnn::{AsRnn, AsRnnCache, AsRnnDenseGrads, AsRnnGrads, AsRnnWeights};
pub use loss::{accuracy, loss_and_grad, softmax_column};
pub use lstm::{Lstm, LstmCache, LstmGrads};
pub use vanilla::{VanillaCache, VanillaGrads, VanillaRnn};

/// Which hidden states feed the linear head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// One output from the last hidden state (sequence classification).
    FinalState,
    /// One output per time step (sequence labelling, language modelling).
    PerStep,
}

/// Learning-rate group of a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Main,
    Recurrent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
}

/// Flat views of a fixed, ordered list of tensors.
pub trait Tensors<T> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;
}

/// Learnable parameters: tensors plus names, shapes and groups in the same order.
pub trait Parameters<T>: Tensors<T> {
    fn tensor_info(&self) -> Vec<TensorInfo>;
}

pub trait Recurrent<T: Scalar>: Parameters<T> + Clone {
    type Cache;
    type Grads: Tensors<T>;

    fn input_dim(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Initial recurrent state for a batch (`[h]`, or `[h, c]` for the LSTM).
    fn zero_state(&self, batch: usize) -> Vec<Matrix<T>>;

    fn forward(
        &self,
        inputs: &[Matrix<T>],
        init: &[Matrix<T>],
        mode: HeadMode,
    ) -> Result<(Self::Cache, Vec<Matrix<T>>)>;

    /// Recurrent state after the last step of `cache`.
    fn final_state(&self, cache: &Self::Cache) -> Vec<Matrix<T>>;

    /// Reverse pass. `observer(t, ∂L/∂h_t)` sees the total hidden-state
    /// gradient at each step `t = T, …, 1` and must not alter anything.
    fn backward_observed(
        &self,
        cache: &Self::Cache,
        grad_outputs: &[Matrix<T>],
        observer: &mut dyn FnMut(usize, &Matrix<T>),
    ) -> Result<Self::Grads>;

    fn backward(&self, cache: &Self::Cache, grad_outputs: &[Matrix<T>]) -> Result<Self::Grads> {
        self.backward_observed(cache, grad_outputs, &mut |_, _| {})
    }

    /// Re-synchronizes derived quantities after the tensors were mutated in place.
    fn refresh(&mut self) {}
}

/// Linear read-out `W h + b` shared by all cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub w: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Head<T> {
    pub fn new(w: Matrix<T>, b: Vec<T>) -> Self {
        assert_eq!(w.rows(), b.len());
        Self { w, b }
    }

    pub fn zeros(d_out: usize, d_h: usize) -> Self {
        Self::new(Matrix::zeros(d_out, d_h), vec![T::zero(); d_out])
    }

    pub fn forward(&self, h: &Matrix<T>) -> Matrix<T> {
        let mut y = self.w.mul(h);
        y.add_col_broadcast(&self.b);
        y
    }

    /// Accumulates head gradients, returns `∂L/∂h`.
    pub fn backward(
        &self,
        h: &Matrix<T>,
        g: &Matrix<T>,
        gw: &mut Matrix<T>,
        gb: &mut [T],
    ) -> Matrix<T> {
        gw.acc_mul_tr(g, h);
        for (acc, s) in gb.iter_mut().zip(g.sum_cols()) {
            *acc += s;
        }
        self.w.tr_mul(g)
    }
}

pub(crate) fn check_inputs<T: Scalar>(
    inputs: &[Matrix<T>],
    init: &[Matrix<T>],
    d_x: usize,
    d_h: usize,
    n_state: usize,
) -> Result<usize> {
    if inputs.is_empty() {
        return Err(Error::contract("empty input sequence"));
    }
    let batch = inputs[0].cols();
    for (t, x) in inputs.iter().enumerate() {
        if x.shape() != (d_x, batch) {
            return Err(Error::contract(format!(
                "input step {t} has shape {:?}, expected ({d_x}, {batch})",
                x.shape()
            )));
        }
    }
    if init.len() != n_state || init.iter().any(|s| s.shape() != (d_h, batch)) {
        return Err(Error::contract(format!(
            "initial state must be {n_state} matrices of shape ({d_h}, {batch})"
        )));
    }
    Ok(batch)
}

pub(crate) fn check_grad_outputs<T: Scalar>(
    grad_outputs: &[Matrix<T>],
    steps: usize,
    mode: HeadMode,
    d_out: usize,
    batch: usize,
) -> Result<()> {
    let expected = match mode {
        HeadMode::FinalState => 1,
        HeadMode::PerStep => steps,
    };
    if grad_outputs.len() != expected || grad_outputs.iter().any(|g| g.shape() != (d_out, batch)) {
        return Err(Error::contract(format!(
            "cache/gradient mismatch: expected {expected} output gradients of shape ({d_out}, {batch})"
        )));
    }
    Ok(())
}

/// Output gradient feeding step `t` (1-based) for the given head mode.
pub(crate) fn output_grad_at<T>(
    grad_outputs: &[Matrix<T>],
    mode: HeadMode,
    t: usize,
    steps: usize,
) -> Option<&Matrix<T>> {
    match mode {
        HeadMode::PerStep => grad_outputs.get(t - 1),
        HeadMode::FinalState if t == steps => grad_outputs.first(),
        HeadMode::FinalState => None,
    }
}

pub(crate) fn ensure_finite<T: Scalar>(m: &Matrix<T>, step: usize) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericFault { step })
    }
}

/// `1 − x²` elementwise, times `g`.
pub(crate) fn tanh_backward<T: Scalar>(g: &Matrix<T>, y: &Matrix<T>) -> Matrix<T> {
    let mut out = g.clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *o *= T::one() - v * v;
    }
    out
}

pub(crate) fn add_into<T: Scalar>(acc: &mut [T], v: &[T]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Uniform `±1/√fan_in` initialization, the common default for dense layers.
pub(crate) fn uniform_fan_in<T: Scalar>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut impl rand::Rng,
) -> Matrix<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.random_range(-bound..=bound)))
}
