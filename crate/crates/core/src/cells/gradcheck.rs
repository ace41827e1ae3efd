//! Central finite-difference verification of a cell's reverse pass.
//!
//! The scalar under test is a fixed random linear functional of the
//! outputs, `L = Σ_k ⟨R_k, Y_k⟩`, so `∂L/∂Y_k = R_k` feeds the backward pass
//! directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{HeadMode, Recurrent, Tensors};
use crate::linalg::Matrix;
use crate::Result;

/// Random probe matrices shaped like `outputs`.
pub fn probe(outputs: &[Matrix<f64>], seed: u64) -> Vec<Matrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    outputs
        .iter()
        .map(|y| Matrix::from_fn(y.rows(), y.cols(), |_, _| rng.random_range(-1.0..1.0)))
        .collect()
}

pub fn functional(outputs: &[Matrix<f64>], probe: &[Matrix<f64>]) -> f64 {
    outputs
        .iter()
        .zip(probe)
        .map(|(y, r)| {
            y.as_slice()
                .iter()
                .zip(r.as_slice())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorError {
    pub name: &'static str,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

/// Relative error `|fd − an| / max(|fd|, |an|, floor)` per tensor.
/// `tamper` may alter the analytic gradient before comparison (negative
/// controls use it to plant a bug).
pub fn fd_report<M: Recurrent<f64>>(
    model: &M,
    inputs: &[Matrix<f64>],
    mode: HeadMode,
    seed: u64,
    h: f64,
    tamper: &mut dyn FnMut(&mut [Vec<f64>]),
) -> Result<Vec<TensorError>> {
    let init = model.zero_state(inputs[0].cols());
    let (cache, out) = model.forward(inputs, &init, mode)?;
    let probe = probe(&out, seed);
    let grads = model.backward(&cache, &probe)?;
    let mut analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    tamper(&mut analytic);
    let info = model.tensor_info();
    let mut report = Vec::with_capacity(analytic.len());
    for (ti, an) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for (k, &a) in an.iter().enumerate() {
            let eval = |delta: f64| -> Result<f64> {
                let mut m = model.clone();
                m.tensors_mut()[ti][k] += delta;
                m.refresh();
                let (_, y) = m.forward(inputs, &init, mode)?;
                Ok(functional(&y, &probe))
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            let scale = fd.abs().max(a.abs()).max(1e-3);
            worst = worst.max((fd - a).abs() / scale);
        }
        report.push(TensorError {
            name: info[ti].name,
            coordinates: an.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}

/// Worst relative error over every coordinate of every tensor.
pub fn worst_relative_error<M: Recurrent<f64>>(
    model: &M,
    inputs: &[Matrix<f64>],
    mode: HeadMode,
    seed: u64,
    h: f64,
) -> f64 {
    fd_report(model, inputs, mode, seed, h, &mut |_| {})
        .expect("forward/backward on a valid instance")
        .iter()
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max)
}
