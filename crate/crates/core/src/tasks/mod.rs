//! Task data: copy-memory synthesis, IDX (MNIST) ingestion and character
//! corpora with truncated-BPTT windows.

mod copy;
mod corpus;
mod mnist;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result, Scalar};

pub use copy::{copy_baseline_loss, gen_copy_batch, CopySpec, BLANK, FIRST_LETTER, START};
pub use corpus::{unigram_entropy_bits, Corpus, CorpusSpec, TbpttStream, Vocabulary};
pub use mnist::{
    apply_fixed_permutation, apply_permutation, invert_permutation, load_mnist_idx,
    parse_idx_images, parse_idx_labels, permutation_from_seed, MnistDataset, IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
};

/// One minibatch, time-major. `inputs[t]` is `d_x × B`; `targets[t][j]` and
/// `mask[t][j]` refer to batch column `j` of output step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBatch<T> {
    pub inputs: Vec<Matrix<T>>,
    pub targets: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
}

impl<T: Scalar> TaskBatch<T> {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.cols())
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn cast<U: Scalar>(&self) -> TaskBatch<U> {
        TaskBatch {
            inputs: self.inputs.iter().map(|m| m.cast()).collect(),
            targets: self.targets.clone(),
            mask: self.mask.clone(),
        }
    }

    /// Checks the batch invariants: nonempty mask, targets below `n_classes`.
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if self.targets.len() != self.mask.len() {
            return Err(Error::contract("targets and mask differ in length"));
        }
        let mut on = 0;
        for (tg, m) in self.targets.iter().zip(&self.mask) {
            if tg.len() != m.len() {
                return Err(Error::contract("targets and mask differ in batch size"));
            }
            for (&c, &b) in tg.iter().zip(m) {
                if c >= n_classes {
                    return Err(Error::contract(format!(
                        "target {c} outside {n_classes} classes"
                    )));
                }
                on += usize::from(b);
            }
        }
        if on == 0 {
            return Err(Error::contract("batch mask selects nothing"));
        }
        Ok(())
    }
}

impl<T: Scalar + Serialize + serde::de::DeserializeOwned> TaskBatch<T> {
    /// Debug dump as pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Bits per character from a cross-entropy in nats.
pub fn metric_bpc(loss_nats: f64) -> f64 {
    loss_nats / std::f64::consts::LN_2
}

/// One-hot columns for a batch of class ids.
pub(crate) fn one_hot<T: Scalar>(ids: &[usize], dim: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(dim, ids.len());
    for (j, &c) in ids.iter().enumerate() {
        m[(c, j)] = T::one();
    }
    m
}
