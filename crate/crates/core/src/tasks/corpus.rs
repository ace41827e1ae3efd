use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{one_hot, TaskBatch};
use crate::{Error, Result, Scalar};

/// End-of-sentence symbol; always part of the vocabulary.
pub const EOS: char = '\n';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub path: PathBuf,
    pub tbptt_len: usize,
    pub train_frac: f64,
    pub valid_frac: f64,
}

/// Character ↔ id table, ids assigned in code-point order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: BTreeMap<char, usize>,
}

impl Vocabulary {
    pub fn from_text(text: &str) -> Self {
        let mut set: std::collections::BTreeSet<char> = text.chars().collect();
        set.insert(EOS);
        let chars: Vec<char> = set.into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Self { chars, index }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn char(&self, id: usize) -> Option<char> {
        self.chars.get(id).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.id(c)
                    .ok_or_else(|| Error::contract(format!("{c:?} not in vocabulary")))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub ids: Vec<usize>,
}

impl Corpus {
    pub fn from_text(text: &str) -> Self {
        let vocab = Vocabulary::from_text(text);
        let ids = vocab
            .encode(text)
            .expect("vocabulary built from the same text");
        Self { vocab, ids }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_text(&std::fs::read_to_string(path)?))
    }

    /// Contiguous train / valid / test slices.
    pub fn split(
        &self,
        train_frac: f64,
        valid_frac: f64,
    ) -> Result<(&[usize], &[usize], &[usize])> {
        if !(train_frac > 0.0 && valid_frac >= 0.0 && train_frac + valid_frac <= 1.0) {
            return Err(Error::contract(format!(
                "bad split fractions train={train_frac} valid={valid_frac}"
            )));
        }
        let n = self.ids.len();
        let a = (n as f64 * train_frac).floor() as usize;
        let b = a + (n as f64 * valid_frac).floor() as usize;
        Ok((&self.ids[..a], &self.ids[a..b], &self.ids[b..]))
    }
}

/// Order-0 entropy of the id distribution, in bits.
pub fn unigram_entropy_bits(ids: &[usize], vocab_size: usize) -> f64 {
    let mut counts = vec![0usize; vocab_size];
    for &i in ids {
        counts[i] += 1;
    }
    let n = ids.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Truncated-BPTT windows over `batch` contiguous lanes of a token stream.
/// Window `k` of lane `j` covers lane positions `k·T .. (k+1)·T` as inputs and
/// the same range shifted by one as targets.
#[derive(Debug, Clone)]
pub struct TbpttStream {
    ids: Vec<usize>,
    vocab_size: usize,
    batch: usize,
    window: usize,
    lane_len: usize,
}

impl TbpttStream {
    pub fn new(ids: &[usize], vocab_size: usize, batch: usize, window: usize) -> Result<Self> {
        if batch == 0 || window == 0 {
            return Err(Error::contract("batch and window must be positive"));
        }
        let lane_len = ids.len() / batch;
        if lane_len < window + 1 {
            return Err(Error::contract(format!(
                "corpus of {} tokens too small for {batch} lanes of window {window}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab_size) {
            return Err(Error::contract(format!(
                "token id {bad} outside vocabulary"
            )));
        }
        Ok(Self {
            ids: ids.to_vec(),
            vocab_size,
            batch,
            window,
            lane_len,
        })
    }

    pub fn windows_per_epoch(&self) -> usize {
        (self.lane_len - 1) / self.window
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Window `k` (taken modulo the epoch length) and whether the trainer
    /// should carry the hidden state in from the previous window.
    pub fn window<T: Scalar>(&self, k: usize) -> (TaskBatch<T>, bool) {
        let k = k % self.windows_per_epoch();
        let start = k * self.window;
        let at = |j: usize, t: usize| self.ids[j * self.lane_len + start + t];
        let inputs = (0..self.window)
            .map(|t| {
                let col: Vec<usize> = (0..self.batch).map(|j| at(j, t)).collect();
                one_hot(&col, self.vocab_size)
            })
            .collect();
        let targets = (0..self.window)
            .map(|t| (0..self.batch).map(|j| at(j, t + 1)).collect())
            .collect();
        let batch = TaskBatch {
            inputs,
            targets,
            mask: vec![vec![true; self.batch]; self.window],
        };
        (batch, k > 0)
    }

    pub fn epoch<T: Scalar>(&self) -> impl Iterator<Item = (TaskBatch<T>, bool)> + '_ {
        (0..self.windows_per_epoch()).map(|k| self.window(k))
    }
}
