use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
use super::config::{ModelKind, Precision, RunConfig, TaskKind};
use super::{derive_seed, SeedPlan};
use crate::cells::{accuracy, loss_and_grad, AsRnn, HeadMode, Lstm, Recurrent, VanillaRnn};
use crate::diagnostics::GradientNormTrace;
use crate::linalg::Matrix;
use crate::optim::{clip_global_norm, global_norm, rmsprop_step, OptimState};
use crate::tasks::{
    apply_fixed_permutation, gen_copy_batch, load_mnist_idx, metric_bpc, CopySpec, Corpus,
    MnistDataset, TaskBatch, TbpttStream,
};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_x: usize,
    pub d_h: usize,
    pub d_out: usize,
}

/// A cell the training loop knows how to construct from a config.
pub trait TrainModel<T: Scalar>: Recurrent<T> {
    const KIND: ModelKind;

    fn build(cfg: &RunConfig, dims: Dims, init_seed: u64) -> Result<Self>;
}

impl<T: Scalar> TrainModel<T> for AsRnn<T> {
    const KIND: ModelKind = ModelKind::Asrnn;

    fn build(cfg: &RunConfig, dims: Dims, init_seed: u64) -> Result<Self> {
        AsRnn::init(&cfg.init.to_spec(init_seed), dims.d_x, dims.d_h, dims.d_out)
    }
}

impl<T: Scalar> TrainModel<T> for VanillaRnn<T> {
    const KIND: ModelKind = ModelKind::Rnn;

    fn build(_: &RunConfig, dims: Dims, init_seed: u64) -> Result<Self> {
        Ok(VanillaRnn::init(init_seed, dims.d_x, dims.d_h, dims.d_out))
    }
}

impl<T: Scalar> TrainModel<T> for Lstm<T> {
    const KIND: ModelKind = ModelKind::Lstm;

    fn build(_: &RunConfig, dims: Dims, init_seed: u64) -> Result<Self> {
        Ok(Lstm::init(init_seed, dims.d_x, dims.d_h, dims.d_out))
    }
}

/// One line of `metrics.csv`. `train_loss` averages the iterations since
/// the previous row; the evaluation columns come from a fixed held-out set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub accuracy: f64,
    pub eval_bpc: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    /// Last completed iteration.
    pub iteration: u64,
    pub total_iterations: u64,
    /// Rows written during this invocation.
    pub rows: Vec<MetricsRow>,
    pub stopped_early: bool,
}

impl TrainSummary {
    pub fn best_eval_loss(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.eval_loss).reduce(f64::min)
    }
}

enum Data {
    Copy {
        k: usize,
        l: usize,
    },
    Mnist {
        train: MnistDataset,
        test: MnistDataset,
    },
    Charlm {
        train: TbpttStream,
        valid: TbpttStream,
    },
}

impl Data {
    fn load(cfg: &RunConfig, seeds: &SeedPlan) -> Result<(Self, Dims, HeadMode)> {
        let d_h = cfg.model.d_h;
        let t = &cfg.task;
        let missing = |what: &str| Error::Config {
            location: format!("task.{what}"),
            message: "missing".into(),
        };
        Ok(match cfg.run.task {
            TaskKind::Copy => {
                let (k, l) = (
                    t.k.ok_or_else(|| missing("k"))?,
                    t.l.ok_or_else(|| missing("l"))?,
                );
                let d = CopySpec::VOCAB;
                (
                    Data::Copy { k, l },
                    Dims {
                        d_x: d,
                        d_h,
                        d_out: d,
                    },
                    HeadMode::PerStep,
                )
            }
            TaskKind::Smnist | TaskKind::Pmnist => {
                let path = |p: &Option<PathBuf>, what| p.clone().ok_or_else(|| missing(what));
                let mut train = load_mnist_idx(
                    &path(&t.train_images, "train_images")?,
                    &path(&t.train_labels, "train_labels")?,
                )?;
                let mut test = load_mnist_idx(
                    &path(&t.test_images, "test_images")?,
                    &path(&t.test_labels, "test_labels")?,
                )?;
                if cfg.run.task == TaskKind::Pmnist {
                    train = apply_fixed_permutation(&train, seeds.perm).0;
                    test = apply_fixed_permutation(&test, seeds.perm).0;
                }
                if train.len() < t.batch || test.is_empty() {
                    return Err(Error::contract("MNIST split smaller than one batch"));
                }
                (
                    Data::Mnist { train, test },
                    Dims {
                        d_x: 1,
                        d_h,
                        d_out: 10,
                    },
                    HeadMode::FinalState,
                )
            }
            TaskKind::Charlm => {
                let corpus = Corpus::load(t.corpus.as_ref().ok_or_else(|| missing("corpus"))?)?;
                let (train_ids, valid_ids, _) = corpus.split(t.train_frac, t.valid_frac)?;
                let v = corpus.vocab.len();
                let window = t.tbptt_len.ok_or_else(|| missing("tbptt_len"))?;
                let train = TbpttStream::new(train_ids, v, t.batch, window)?;
                let valid = TbpttStream::new(valid_ids, v, t.batch, window)?;
                (
                    Data::Charlm { train, valid },
                    Dims {
                        d_x: v,
                        d_h,
                        d_out: v,
                    },
                    HeadMode::PerStep,
                )
            }
        })
    }

    fn batches_per_epoch(&self, batch: usize) -> u64 {
        match self {
            Data::Copy { .. } => 1,
            Data::Mnist { train, .. } => (train.len() / batch) as u64,
            Data::Charlm { train, .. } => train.windows_per_epoch() as u64,
        }
    }

    /// Training batch for 0-based iteration `i`, plus the carry flag.
    fn train_batch<T: Scalar>(
        &self,
        cfg: &RunConfig,
        seeds: &SeedPlan,
        i: u64,
    ) -> (TaskBatch<T>, bool) {
        let batch = cfg.task.batch;
        match self {
            Data::Copy { k, l } => {
                let spec = CopySpec {
                    k: *k,
                    l: *l,
                    batch,
                    rng_seed: derive_seed(seeds.data, i),
                };
                (gen_copy_batch(&spec), false)
            }
            Data::Mnist { train, .. } => {
                let per_epoch = self.batches_per_epoch(batch);
                let (epoch, pos) = (i / per_epoch, (i % per_epoch) as usize);
                let mut order: Vec<usize> = (0..train.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
                    seeds.data, epoch,
                )));
                (train.batch(&order[pos * batch..(pos + 1) * batch]), false)
            }
            Data::Charlm { train, .. } => train.window(i as usize),
        }
    }
}

fn evaluate<T: Scalar, M: Recurrent<T>>(
    model: &M,
    data: &Data,
    cfg: &RunConfig,
    seeds: &SeedPlan,
    mode: HeadMode,
) -> Result<(f64, f64)> {
    let n = cfg.task.eval_batches;
    let batch = cfg.task.batch;
    let mut batches: Vec<(TaskBatch<T>, bool)> = Vec::with_capacity(n);
    match data {
        Data::Copy { k, l } => {
            for b in 0..n {
                let spec = CopySpec {
                    k: *k,
                    l: *l,
                    batch,
                    rng_seed: derive_seed(seeds.eval, b as u64),
                };
                batches.push((gen_copy_batch(&spec), false));
            }
        }
        Data::Mnist { test, .. } => {
            let idx: Vec<usize> = (0..test.len()).collect();
            for chunk in idx.chunks(batch).take(n) {
                batches.push((test.batch(chunk), false));
            }
        }
        Data::Charlm { valid, .. } => {
            for w in 0..n.min(valid.windows_per_epoch()) {
                batches.push(valid.window(w));
            }
        }
    }
    let (mut loss, mut acc) = (0.0, 0.0);
    let mut carry: Option<Vec<Matrix<T>>> = None;
    for (b, carry_in) in &batches {
        let init = match (&carry, carry_in) {
            (Some(c), true) => c.clone(),
            _ => model.zero_state(b.batch_size()),
        };
        let (cache, out) = model.forward(&b.inputs, &init, mode)?;
        loss += loss_and_grad(&out, &b.targets, &b.mask)?.0;
        acc += accuracy(&out, &b.targets, &b.mask)?;
        carry = Some(model.final_state(&cache));
    }
    let m = batches.len() as f64;
    Ok((loss / m, acc / m))
}

/// Inputs of the first held-out batch, as used by `evaluate`.
pub(crate) fn eval_inputs(cfg: &RunConfig, seeds: &SeedPlan) -> Result<Vec<Matrix<f64>>> {
    let (data, _, _) = Data::load(cfg, seeds)?;
    let batch: TaskBatch<f64> = match &data {
        Data::Copy { k, l } => gen_copy_batch(&CopySpec {
            k: *k,
            l: *l,
            batch: 1,
            rng_seed: derive_seed(seeds.eval, 0),
        }),
        Data::Mnist { test, .. } => test.batch(&[0]),
        Data::Charlm { valid, .. } => valid.window(0).0,
    };
    Ok(batch.inputs)
}

struct Outputs {
    metrics: csv::Writer<File>,
    timing: File,
    trace: Option<File>,
}

fn append(path: &Path) -> Result<File> {
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

/// Keeps comment/header lines and rows whose leading iteration is at most `upto`.
fn truncate_rows(path: &Path, upto: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let mut kept = String::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let keep = match line.split(',').next().and_then(|f| f.parse::<u64>().ok()) {
            Some(it) => it <= upto,
            None => true,
        };
        if keep {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept)?;
    Ok(())
}

impl Outputs {
    fn open(
        dir: &Path,
        seeds: &SeedPlan,
        resume_from: Option<u64>,
        trace_steps: &[usize],
    ) -> Result<Self> {
        let metrics_path = dir.join("metrics.csv");
        let timing_path = dir.join("timing.csv");
        let trace_path = dir.join("grad_trace.csv");
        match resume_from {
            Some(it) => {
                for p in [&metrics_path, &timing_path, &trace_path] {
                    truncate_rows(p, it)?;
                }
            }
            None => {
                let mut header = seeds.header();
                header.push_str("\niteration,train_loss,eval_loss,accuracy,eval_bpc,grad_norm\n");
                std::fs::write(&metrics_path, header)?;
                std::fs::write(&timing_path, "iteration,wall_ms\n")?;
                if !trace_steps.is_empty() {
                    let cols: Vec<String> = trace_steps.iter().map(|t| format!("t{t}")).collect();
                    std::fs::write(&trace_path, format!("iteration,{}\n", cols.join(",")))?;
                }
            }
        }
        let metrics = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(append(&metrics_path)?);
        let trace = if trace_steps.is_empty() {
            None
        } else {
            Some(append(&trace_path)?)
        };
        Ok(Self {
            metrics,
            timing: append(&timing_path)?,
            trace,
        })
    }
}

struct Run<'a, T: Scalar, M: TrainModel<T>> {
    cfg: &'a RunConfig,
    out_dir: PathBuf,
    seeds: SeedPlan,
    data: Data,
    dims: Dims,
    mode: HeadMode,
    model: M,
    optim: OptimState,
    carry: Option<Vec<Matrix<T>>>,
    iteration: u64,
    pending_loss_sum: f64,
    pending_count: u64,
}

impl<T: Scalar, M: TrainModel<T>> Run<'_, T, M> {
    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            model: M::KIND,
            precision: self.cfg.run.precision,
            dims: self.dims,
            iteration: self.iteration,
            tensors: Checkpoint::tensors_of(&self.model),
            optim: self.optim.clone(),
            carry: self
                .carry
                .as_ref()
                .map(|c| c.iter().map(|m| m.cast()).collect()),
            pending_loss_sum: self.pending_loss_sum,
            pending_count: self.pending_count,
            seeds: self.seeds,
            config: self.cfg.clone(),
        }
    }

    fn step(&mut self, trace: Option<&mut GradientNormTrace>) -> Result<f64> {
        let i = self.iteration;
        let (batch, carry_in) = self.data.train_batch::<T>(self.cfg, &self.seeds, i);
        let init = match (&self.carry, carry_in) {
            (Some(c), true) => c.clone(),
            _ => self.model.zero_state(batch.batch_size()),
        };
        let (cache, out) = self.model.forward(&batch.inputs, &init, self.mode)?;
        let (loss, g_out) = loss_and_grad(&out, &batch.targets, &batch.mask)?;
        let mut grads = match trace {
            Some(tr) => self
                .model
                .backward_observed(&cache, &g_out, &mut tr.observer(i + 1))?,
            None => self.model.backward(&cache, &g_out)?,
        };
        let norm = match self.cfg.optim.clip_norm {
            Some(c) => clip_global_norm(&mut grads, c),
            None => global_norm(&grads),
        };
        if !norm.is_finite() {
            return Err(Error::NumericFault { step: 0 });
        }
        rmsprop_step(
            &mut self.optim,
            &mut self.model,
            &grads,
            &self.cfg.optim.to_optim(),
        )?;
        if matches!(self.data, Data::Charlm { .. }) {
            self.carry = Some(self.model.final_state(&cache));
        }
        self.iteration += 1;
        self.pending_loss_sum += loss;
        self.pending_count += 1;
        Ok(norm)
    }
}

fn run_loop<T: Scalar, M: TrainModel<T>>(cfg: &RunConfig, resume: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    cfg.check_paths()?;
    let out_dir = cfg.run.out_dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    let ck_path = out_dir.join("checkpoint.json");
    let seeds = SeedPlan::new(cfg.run.seed);
    let (data, dims, mode) = Data::load(cfg, &seeds)?;

    let mut run: Run<T, M> = if resume {
        let ck = Checkpoint::load(&ck_path)?;
        let mut stored = ck.config.clone();
        stored.run.stop_after = cfg.run.stop_after;
        stored.run.out_dir = cfg.run.out_dir.clone();
        if &stored != cfg {
            return Err(Error::Config {
                location: ck_path.display().to_string(),
                message: "checkpoint was written by a different configuration".into(),
            });
        }
        if ck.dims != dims || ck.precision != cfg.run.precision {
            return Err(Error::contract(
                "checkpoint dimensions or precision differ from the task",
            ));
        }
        Run {
            cfg,
            out_dir: out_dir.clone(),
            seeds: ck.seeds,
            data,
            dims,
            mode,
            model: ck.restore_model::<T, M>()?,
            optim: ck.optim.clone(),
            carry: ck
                .carry
                .as_ref()
                .map(|c| c.iter().map(|m| m.cast()).collect()),
            iteration: ck.iteration,
            pending_loss_sum: ck.pending_loss_sum,
            pending_count: ck.pending_count,
        }
    } else {
        let model = M::build(cfg, dims, seeds.init)?;
        let optim = OptimState::new(&model);
        Run {
            cfg,
            out_dir: out_dir.clone(),
            seeds,
            data,
            dims,
            mode,
            model,
            optim,
            carry: None,
            iteration: 0,
            pending_loss_sum: 0.0,
            pending_count: 0,
        }
    };

    let total = match cfg.run.iterations {
        Some(n) => n,
        None => cfg.run.epochs.unwrap_or(1) * run.data.batches_per_epoch(cfg.task.batch).max(1),
    };
    let mut out = Outputs::open(
        &run.out_dir,
        &run.seeds,
        resume.then_some(run.iteration),
        &cfg.run.trace_steps,
    )?;
    let mut trace = (!cfg.run.trace_steps.is_empty())
        .then(|| GradientNormTrace::new(cfg.run.trace_steps.clone()));
    let started = Instant::now();
    let mut rows = Vec::new();
    let mut stopped_early = false;
    while run.iteration < total {
        let norm = run.step(trace.as_mut())?;
        let i = run.iteration;
        if let (Some(tr), Some(f)) = (trace.as_mut(), out.trace.as_mut()) {
            let cols: Vec<String> = tr
                .norms
                .last()
                .expect("row recorded")
                .iter()
                .map(|v| v.to_string())
                .collect();
            writeln!(f, "{i},{}", cols.join(","))?;
            tr.norms.clear();
            tr.iterations.clear();
        }
        if i.is_multiple_of(cfg.run.log_interval) || i == total {
            let (eval_loss, acc) = evaluate(&run.model, &run.data, cfg, &run.seeds, mode)?;
            let row = MetricsRow {
                iteration: i,
                train_loss: run.pending_loss_sum / run.pending_count as f64,
                eval_loss,
                accuracy: acc,
                eval_bpc: metric_bpc(eval_loss),
                grad_norm: norm,
            };
            out.metrics.serialize(&row)?;
            out.metrics.flush()?;
            writeln!(out.timing, "{i},{}", started.elapsed().as_millis())?;
            run.pending_loss_sum = 0.0;
            run.pending_count = 0;
            if cfg.run.stop_below_eval_loss.is_some_and(|t| eval_loss < t) {
                stopped_early = true;
            }
            rows.push(row);
        }
        let interrupted = cfg.run.stop_after == Some(i);
        let periodic = cfg.run.checkpoint_interval.is_some_and(|c| i.is_multiple_of(c));
        if periodic || interrupted || stopped_early || i == total {
            run.checkpoint().save(&ck_path)?;
        }
        if interrupted || stopped_early {
            break;
        }
    }
    Ok(TrainSummary {
        out_dir,
        iteration: run.iteration,
        total_iterations: total,
        rows,
        stopped_early,
    })
}

/// Runs (or resumes) the configured experiment, writing `metrics.csv`,
/// `timing.csv`, `checkpoint.json` and optionally `grad_trace.csv` under
/// `run.out_dir`.
pub fn train(cfg: &RunConfig, resume: bool) -> Result<TrainSummary> {
    match (cfg.run.model, cfg.run.precision) {
        (ModelKind::Asrnn, Precision::F64) => run_loop::<f64, AsRnn<f64>>(cfg, resume),
        (ModelKind::Asrnn, Precision::F32) => run_loop::<f32, AsRnn<f32>>(cfg, resume),
        (ModelKind::Rnn, Precision::F64) => run_loop::<f64, VanillaRnn<f64>>(cfg, resume),
        (ModelKind::Rnn, Precision::F32) => run_loop::<f32, VanillaRnn<f32>>(cfg, resume),
        (ModelKind::Lstm, Precision::F64) => run_loop::<f64, Lstm<f64>>(cfg, resume),
        (ModelKind::Lstm, Precision::F32) => run_loop::<f32, Lstm<f32>>(cfg, resume),
    }
}
