//! Experiment plumbing: configuration, the training loop, checkpoints, and
//! the gradient-check and diagnostics commands built on top of them.

mod checkpoint;
mod config;
mod diag;
mod gradcheck;
mod train;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT};
pub use config::{
    apply_override, InitSection, ModelKind, ModelSection, OptimSection, Precision, RunConfig,
    RunSection, TaskKind, TaskSection,
};
pub use diag::{diag_from_checkpoint, diag_weights, DiagReport, DiagSample};
pub use gradcheck::{gradcheck, GradcheckReport, GRADCHECK_THRESHOLD};
pub use train::{train, Dims, MetricsRow, TrainModel, TrainSummary};

/// Environment variable that overrides `run.out_dir` on the command line.
pub const OUT_DIR_ENV: &str = "ASRNN_OUT_DIR";

/// `stream`-th independent draw from `base`: ChaCha8 keyed by `base` with
/// the stream id set to `stream`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Per-component seeds expanded from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub init: u64,
    pub data: u64,
    pub perm: u64,
    pub eval: u64,
}

impl SeedPlan {
    pub fn new(master: u64) -> Self {
        Self {
            master,
            init: derive_seed(master, 1),
            data: derive_seed(master, 2),
            perm: derive_seed(master, 3),
            eval: derive_seed(master, 4),
        }
    }

    pub fn header(&self) -> String {
        format!(
            "# seed={} init_seed={} data_seed={} perm_seed={} eval_seed={}",
            self.master, self.init, self.data, self.perm, self.eval
        )
    }
}
