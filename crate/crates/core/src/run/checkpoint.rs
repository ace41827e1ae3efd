use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ModelKind, Precision, RunConfig};
use super::train::{Dims, TrainModel};
use super::SeedPlan;
use crate::linalg::Matrix;
use crate::optim::OptimState;
use crate::{Error, Result, Scalar};

pub const CHECKPOINT_FORMAT: &str = "asrnn-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Everything needed to continue a run bit-for-bit: free parameters,
/// optimizer accumulators, carried recurrent state and the partial
/// logging window. Values are stored as f64, which holds f32 exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelKind,
    pub precision: Precision,
    pub dims: Dims,
    pub iteration: u64,
    pub tensors: Vec<NamedTensor>,
    pub optim: OptimState,
    pub carry: Option<Vec<Matrix<f64>>>,
    pub pending_loss_sum: f64,
    pub pending_count: u64,
    pub seeds: SeedPlan,
    pub config: RunConfig,
}

impl Checkpoint {
    pub fn tensors_of<T: Scalar, M: TrainModel<T>>(model: &M) -> Vec<NamedTensor> {
        model
            .tensor_info()
            .into_iter()
            .zip(model.tensors())
            .map(|(info, t)| NamedTensor {
                name: info.name.to_string(),
                shape: info.shape,
                data: t.iter().map(|v| v.as_f64()).collect(),
            })
            .collect()
    }

    /// Rebuilds the model skeleton from the stored config and overwrites
    /// every tensor. Name or shape disagreements are reported explicitly.
    pub fn restore_model<T: Scalar, M: TrainModel<T>>(&self) -> Result<M> {
        if self.model != M::KIND {
            return Err(Error::contract(format!(
                "checkpoint holds a {:?} model, expected {:?}",
                self.model,
                M::KIND
            )));
        }
        let mut model = M::build(&self.config, self.dims, self.seeds.init)?;
        let info = model.tensor_info();
        if info.len() != self.tensors.len() {
            return Err(Error::contract(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                info.len()
            )));
        }
        for (i, stored) in info.iter().zip(&self.tensors) {
            if i.name != stored.name || i.shape != stored.shape {
                return Err(Error::contract(format!(
                    "incompatible checkpoint: tensor {} {:?} vs model {} {:?}",
                    stored.name, stored.shape, i.name, i.shape
                )));
            }
            if stored.data.len() != stored.shape.iter().product::<usize>() {
                return Err(Error::contract(format!(
                    "tensor {} has wrong length",
                    stored.name
                )));
            }
        }
        for (dst, stored) in model.tensors_mut().into_iter().zip(&self.tensors) {
            for (d, &s) in dst.iter_mut().zip(&stored.data) {
                *d = T::of(s);
            }
        }
        model.refresh();
        Ok(model)
    }

    /// Writes through a temporary file so an interrupted save never leaves
    /// a truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format {
                offset: 0,
                message: format!("unknown checkpoint format {:?}", ck.format),
            });
        }
        Ok(ck)
    }
}
