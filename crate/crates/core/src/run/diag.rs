use std::path::Path;

use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::ModelKind;
use super::train::eval_inputs;
use crate::cells::{AsRnn, HeadMode, Recurrent};
use crate::diagnostics::{
    saturation_stats, theorem_precondition_check, window_jacobian, JacobianWindow, SaturationStats,
    TheoremReport,
};
use crate::linalg::Matrix;
use crate::{Error, Result};

/// Input sequence the Jacobians are evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub enum DiagSample {
    /// First held-out sequence of the checkpoint's task.
    Task,
    /// All-zero input of the given length.
    Zero { steps: usize },
    /// Explicit `d_x × 1` steps.
    Inputs(Vec<Matrix<f64>>),
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagReport {
    pub iteration: Option<u64>,
    pub steps: usize,
    /// Largest input 2-norm over the sequence (1 when the input is all zero).
    pub c_x: f64,
    pub theorem: TheoremReport,
    pub window: JacobianWindow<f64>,
    pub saturation: SaturationStats,
}

/// Window Jacobian over `(t1, t2]`, the sufficient-condition quantities at
/// horizon `t2` and saturation statistics, for a single input sequence.
pub fn diag_weights(
    model: &AsRnn<f64>,
    inputs: &[Matrix<f64>],
    t1: usize,
    t2: usize,
) -> Result<DiagReport> {
    if inputs.is_empty() {
        return Err(Error::contract("diagnostics need at least one input step"));
    }
    if t1 > t2 || t2 > inputs.len() {
        return Err(Error::contract(format!(
            "window ({t1}, {t2}] outside the {}-step sequence; need t1 <= t2 <= T",
            inputs.len()
        )));
    }
    let inputs: Vec<Matrix<f64>> = inputs
        .iter()
        .map(|x| Matrix::column(&x.col_to_vec(0)))
        .collect();
    let (cache, _) = model.forward(&inputs, &model.zero_state(1), HeadMode::PerStep)?;
    let w = model.weights();
    let c_x = inputs
        .iter()
        .map(|x| x.frobenius_norm())
        .fold(0.0, f64::max);
    let c_x = if c_x > 0.0 { c_x } else { 1.0 };
    let theorem = theorem_precondition_check(&w, c_x, t2.max(1), Some((&cache, 0)))?;
    Ok(DiagReport {
        iteration: None,
        steps: inputs.len(),
        c_x,
        theorem,
        window: window_jacobian(&w, &cache, t1, t2, 0)?,
        saturation: saturation_stats(&w, &cache)?,
    })
}

/// Loads an asRNN checkpoint and runs [`diag_weights`] on `sample`.
pub fn diag_from_checkpoint(
    path: &Path,
    t1: usize,
    t2: usize,
    sample: &DiagSample,
) -> Result<DiagReport> {
    let ck = Checkpoint::load(path)?;
    if ck.model != ModelKind::Asrnn {
        return Err(Error::contract(format!(
            "diagnostics need an asrnn checkpoint, found {:?}",
            ck.model
        )));
    }
    let model: AsRnn<f64> = ck.restore_model()?;
    let d_x = model.input_dim();
    let inputs = match sample {
        DiagSample::Task => eval_inputs(&ck.config, &ck.seeds)?,
        DiagSample::Zero { steps } => vec![Matrix::zeros(d_x, 1); *steps],
        DiagSample::Inputs(xs) => xs.clone(),
    };
    if let Some(x) = inputs.iter().find(|x| x.rows() != d_x) {
        return Err(Error::contract(format!(
            "incompatible input: {} rows, checkpoint expects d_x = {d_x}",
            x.rows()
        )));
    }
    let mut report = diag_weights(&model, &inputs, t1, t2)?;
    report.iteration = Some(ck.iteration);
    Ok(report)
}
