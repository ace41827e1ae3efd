use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{one_hot, TaskBatch};
use crate::Scalar;

pub const BLANK: usize = 0;
pub const START: usize = 1;
pub const FIRST_LETTER: usize = 2;
const ALPHABET: usize = 8;
const VOCAB: usize = FIRST_LETTER + ALPHABET;

/// Copy-memory instance: remember `k` letters across a delay of `l` blanks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopySpec {
    pub k: usize,
    pub l: usize,
    pub batch: usize,
    pub rng_seed: u64,
}

impl CopySpec {
    pub fn seq_len(&self) -> usize {
        self.l + 2 * self.k
    }

    pub const VOCAB: usize = VOCAB;
}

/// Input: `k` letters, `l` blanks, the start marker, `k − 1` blanks.
/// Target: `l + k` blanks, then the `k` letters. Every position is scored.
pub fn gen_copy_batch<T: Scalar>(spec: &CopySpec) -> TaskBatch<T> {
    assert!(spec.k >= 1, "copy task needs k >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let n = spec.seq_len();
    let mut in_ids = vec![vec![BLANK; spec.batch]; n];
    let mut targets = vec![vec![BLANK; spec.batch]; n];
    for j in 0..spec.batch {
        for i in 0..spec.k {
            let letter = FIRST_LETTER + rng.random_range(0..ALPHABET);
            in_ids[i][j] = letter;
            targets[spec.l + spec.k + i][j] = letter;
        }
        in_ids[spec.l + spec.k][j] = START;
    }
    TaskBatch {
        inputs: in_ids.iter().map(|ids| one_hot(ids, VOCAB)).collect(),
        targets,
        mask: vec![vec![true; spec.batch]; n],
    }
}

/// Mean loss of the best predictor without memory: certain blanks, then a
/// uniform guess over the letters for the last `k` positions.
pub fn copy_baseline_loss(k: usize, l: usize) -> f64 {
    k as f64 * (ALPHABET as f64).ln() / (l + 2 * k) as f64
}
