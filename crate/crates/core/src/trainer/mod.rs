//! Toy training of a single-head, fixed-frequency rotary transformer.

mod model;

pub use model::{
    backward, finite_difference, forward_loss, gradient_check, loss_and_grads, Checkpoint, ForwardOutput, GradCheck,
    Grads, InitConfig, Optimizer, OptimizerKind, Tensor, TrainableModel,
};

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tasks::{generate, generate_dataset, AnswerConvention, TaskInstance, TaskKind, TaskVocabulary};

/// Base angles of the default sweep.
pub const DEFAULT_BASE_ANGLES: [f64; 10] = [0.0, 0.01, 0.1, 0.25, 0.4, 0.5, 0.8, 1.0, 1.5, 2.0];

const STREAM_TRAIN: u64 = 0;
const STREAM_VAL: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_STRATIFIED: u64 = 4;

/// Peak Adam step size per task. Index is unstable above about 1e-3 (a few
/// symbols merge and accuracy stalls near 0.7 to 0.85); Retrieval sits on a
/// plateau near 0.6 unless the step is about 1e-2.
pub fn default_learning_rate(task: TaskKind) -> f64 {
    match task {
        TaskKind::Index => 1e-3,
        TaskKind::Retrieval => 1e-2,
        TaskKind::PartialInduction => 3e-3,
    }
}

/// Learning rate as a function of progress through training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to zero at the last step.
    Cosine,
}

impl LrSchedule {
    /// Rate for step `step` (0-based) of `total`, ramped up linearly over
    /// the first `warmup` steps.
    pub fn rate(self, base: f64, step: usize, total: usize, warmup: usize) -> f64 {
        let ramp = if step < warmup {
            (step + 1) as f64 / warmup as f64
        } else {
            1.0
        };
        ramp * match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => 0.5 * base * (1.0 + (PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub base_angle: f64,
    /// Second plane for the two-frequency variant; `base_angle` is then the
    /// first plane.
    pub second_base_angle: Option<f64>,
    /// Sequence length including the query token.
    pub n: usize,
    pub m_sym: usize,
    pub k_int: usize,
    pub answer_convention: AnswerConvention,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_size: usize,
    pub val_size: usize,
    /// Peak step size; `None` picks [`default_learning_rate`] for the task.
    pub learning_rate: Option<f64>,
    pub lr_schedule: LrSchedule,
    pub warmup_epochs: usize,
    /// Rescale each batch gradient to at most this global norm.
    pub grad_clip: Option<f64>,
    pub optimizer: OptimizerKind,
    pub d_model: usize,
    pub embed_std: f64,
    pub qk_std: Option<f64>,
    pub learned_value: bool,
    pub one_hot_embedding: bool,
    pub seed: u64,
    /// Record query/key images of every token after each epoch.
    pub log_qk: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Index,
            base_angle: 1.0,
            second_base_angle: None,
            n: 33,
            m_sym: 16,
            k_int: 32,
            answer_convention: AnswerConvention::Integer,
            epochs: 100,
            batch_size: 64,
            train_size: 40_960,
            val_size: 20_480,
            learning_rate: None,
            lr_schedule: LrSchedule::Cosine,
            warmup_epochs: 0,
            grad_clip: Some(1.0),
            optimizer: OptimizerKind::default(),
            d_model: 64,
            embed_std: 0.02,
            qk_std: None,
            learned_value: false,
            one_hot_embedding: false,
            seed: 0,
            log_qk: false,
        }
    }
}

impl TrainConfig {
    pub fn vocab(&self) -> Result<TaskVocabulary> {
        match self.task {
            TaskKind::Index => TaskVocabulary::index(self.m_sym, self.k_int),
            kind => TaskVocabulary::new(kind, self.m_sym, self.k_int, self.answer_convention),
        }
    }

    /// `theta = (pi / n) * base_angle` per plane.
    pub fn angles(&self) -> Vec<f64> {
        let scale = PI / self.n as f64;
        std::iter::once(self.base_angle)
            .chain(self.second_base_angle)
            .map(|b| scale * b)
            .collect()
    }

    /// Laps `n theta / 2 pi` of the first plane.
    pub fn laps(&self) -> f64 {
        self.base_angle / 2.0
    }

    /// Laps of the plane a sweep varies: the second when present.
    pub fn laps_swept(&self) -> f64 {
        self.second_base_angle.unwrap_or(self.base_angle) / 2.0
    }

    pub fn lr(&self) -> f64 {
        self.learning_rate.unwrap_or(default_learning_rate(self.task))
    }

    pub fn init_config(&self) -> InitConfig {
        InitConfig {
            d_model: self.d_model,
            embed_std: self.embed_std,
            qk_std: self.qk_std,
            learned_value: self.learned_value,
            one_hot_embedding: self.one_hot_embedding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return invalid("n must be at least 3");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.train_size == 0 || self.val_size == 0 {
            return invalid("epochs, batch size and dataset sizes must be positive");
        }
        if self.learning_rate.is_some_and(|lr| !(lr > 0.0)) {
            return invalid("learning rate must be positive");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return invalid("gradient clip must be positive");
        }
        if self.base_angle < 0.0 || self.second_base_angle.is_some_and(|b| b < 0.0) {
            return invalid("base angles must be non-negative");
        }
        self.vocab()?;
        Ok(())
    }

    pub fn train_data(&self) -> Result<Vec<TaskInstance>> {
        generate_dataset(self.n, &self.vocab()?, self.train_size, self.seed, STREAM_TRAIN)
    }

    pub fn val_data(&self) -> Result<Vec<TaskInstance>> {
        generate_dataset(self.n, &self.vocab()?, self.val_size, self.seed, STREAM_VAL)
    }
}

/// Accuracy overall and by 1-based answer position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// `NaN` where no instance has its answer at that position.
    pub per_position: Vec<f64>,
    pub counts: Vec<usize>,
}

const EVAL_CHUNK: usize = 512;

pub fn evaluate(model: &TrainableModel, data: &[TaskInstance]) -> Result<Evaluation> {
    if data.is_empty() {
        return invalid("cannot evaluate on an empty dataset");
    }
    let ctx = data[0].context_len();
    let mut hits = vec![0usize; ctx];
    let mut counts = vec![0usize; ctx];
    let mut loss = 0.0;
    for chunk in data.chunks(EVAL_CHUNK) {
        let out = forward_loss(model, chunk)?;
        loss += out.loss * chunk.len() as f64;
        for (inst, pred) in chunk.iter().zip(&out.predictions) {
            let p = inst.answer_position - 1;
            counts[p] += 1;
            hits[p] += usize::from(*pred == Some(inst.answer));
        }
    }
    let total_hits: usize = hits.iter().sum();
    Ok(Evaluation {
        loss: loss / data.len() as f64,
        accuracy: total_hits as f64 / data.len() as f64,
        per_position: hits
            .iter()
            .zip(&counts)
            .map(|(&h, &c)| if c == 0 { f64::NAN } else { h as f64 / c as f64 })
            .collect(),
        counts,
    })
}

/// Evaluation set in which every sampled context is posed once for every
/// answer position, so per-position accuracies share their contexts.
/// Supported for Index and Retrieval.
pub fn stratified_eval_set(n: usize, vocab: &TaskVocabulary, contexts: usize, seed: u64) -> Result<Vec<TaskInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_STRATIFIED);
    let ctx = n - 1;
    let mut out = Vec::with_capacity(contexts * ctx);
    for _ in 0..contexts {
        let base = generate(n, vocab, &mut rng)?;
        for j in 0..ctx {
            let toks = match vocab.kind {
                TaskKind::Index => {
                    let mut t = base.sequence.tokens().to_vec();
                    t[ctx] = vocab.encode(crate::tasks::Token::Position(j))?;
                    t
                }
                TaskKind::Retrieval => {
                    let mut t = base.sequence.tokens().to_vec();
                    t.swap(base.answer_position - 1, j);
                    t
                }
                TaskKind::PartialInduction => {
                    return invalid("stratified evaluation is defined for Index and Retrieval only");
                }
            };
            let seq = crate::attention::TokenSequence::new(toks, vocab.size())?;
            let probe = TaskInstance {
                sequence: seq,
                ..base.clone()
            };
            let answer = crate::tasks::oracle(&probe)?;
            out.push(TaskInstance {
                answer,
                answer_position: j + 1,
                ..probe
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub per_position_val_acc: Vec<f64>,
}

/// Query and key images of every vocabulary token for a single-plane model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QkSnapshot {
    pub epoch: usize,
    pub queries: Vec<[f64; 2]>,
    pub keys: Vec<[f64; 2]>,
}

pub fn qk_snapshot(model: &TrainableModel, epoch: usize) -> Result<QkSnapshot> {
    if model.planes() != 1 {
        return invalid("query/key trajectories need a single-plane model");
    }
    let (qe, ke) = model.qk_images();
    let pairs = |a: &ndarray::Array2<f64>| a.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    Ok(QkSnapshot {
        epoch,
        queries: pairs(&qe),
        keys: pairs(&ke),
    })
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub model: TrainableModel,
    pub history: Vec<EpochRecord>,
    /// Epoch 0 is the initialization.
    pub trajectory: Vec<QkSnapshot>,
}

impl TrainRun {
    pub fn final_record(&self) -> &EpochRecord {
        self.history.last().expect("training runs at least one epoch")
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::from_model(
            &self.model,
            self.config.base_angle,
            self.config.second_base_angle,
            self.config.task,
            self.config.seed,
        )
    }
}

/// Trains with datasets generated from the config.
pub fn train(config: &TrainConfig) -> Result<TrainRun> {
    config.validate()?;
    train_with_data(config, &config.train_data()?, &config.val_data()?)
}

/// Trains on caller-supplied datasets; `config` still supplies the model,
/// optimizer and schedule.
pub fn train_with_data(config: &TrainConfig, train: &[TaskInstance], val: &[TaskInstance]) -> Result<TrainRun> {
    train_observed(config, train, val, |_, _| {})
}

/// Like [`train_with_data`], calling `observe(epoch, model)` after each epoch.
pub fn train_observed<F>(
    config: &TrainConfig,
    train: &[TaskInstance],
    val: &[TaskInstance],
    mut observe: F,
) -> Result<TrainRun>
where
    F: FnMut(&EpochRecord, &TrainableModel),
{
    config.validate()?;
    let vocab = config.vocab()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(STREAM_INIT);
    let mut model = TrainableModel::init(vocab.size(), config.angles(), &config.init_config(), &mut init_rng)?;
    let mut opt = Optimizer::new(config.optimizer, config.lr(), &model);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(STREAM_SHUFFLE);

    let mut trajectory = Vec::new();
    if config.log_qk {
        trajectory.push(qk_snapshot(&model, 0)?);
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);
    let total_steps = config.epochs * train.len().div_ceil(config.batch_size);
    let warmup_steps = config.warmup_epochs * train.len().div_ceil(config.batch_size);
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train[i].clone()));
            let (out, mut grads) = match loss_and_grads(&model, &batch) {
                Ok(r) => r,
                Err(Error::NonFiniteLogit(_)) => return Err(Error::Diverged { epoch, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            if !out.loss.is_finite() {
                return Err(Error::Diverged { epoch, loss: out.loss });
            }
            loss_sum += out.loss * batch.len() as f64;
            correct += out.correct(&batch);
            if let Some(clip) = config.grad_clip {
                let norm = grads.norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            opt.set_lr(config.lr_schedule.rate(config.lr(), step, total_steps, warmup_steps));
            opt.step(&mut model, &grads);
            step += 1;
        }
        let eval = match evaluate(&model, val) {
            Ok(e) => e,
            Err(Error::NonFiniteLogit(_)) => return Err(Error::Diverged { epoch, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss: eval.loss,
            val_acc: eval.accuracy,
            per_position_val_acc: eval.per_position,
        };
        if !record.train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: record.train_loss,
            });
        }
        if config.log_qk {
            trajectory.push(qk_snapshot(&model, epoch)?);
        }
        observe(&record, &model);
        history.push(record);
    }
    Ok(TrainRun {
        config: config.clone(),
        model,
        history,
        trajectory,
    })
}

/// Same loop with two fixed planes at `(pi / n) * (theta1_base, theta2_base)`.
pub fn two_frequency_variant(config: &TrainConfig, theta1_base: f64, theta2_base: f64) -> Result<TrainRun> {
    let cfg = TrainConfig {
        base_angle: theta1_base,
        second_base_angle: Some(theta2_base),
        ..config.clone()
    };
    train(&cfg)
}

fn cell_config(template: &TrainConfig, task: TaskKind, angle: f64) -> TrainConfig {
    let mut cfg = TrainConfig {
        task,
        ..template.clone()
    };
    match cfg.second_base_angle {
        Some(_) => cfg.second_base_angle = Some(angle),
        None => cfg.base_angle = angle,
    }
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub base_angle: f64,
    pub laps: f64,
    pub task: TaskKind,
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub per_position_val_acc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub base_angle: f64,
    pub task: TaskKind,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

impl SweepResult {
    /// Final-epoch validation accuracy of one cell.
    pub fn final_val_acc(&self, task: TaskKind, base_angle: f64) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.task == task && r.base_angle == base_angle)
            .max_by_key(|r| r.epoch)
            .map(|r| r.val_acc)
    }

    /// Base angle with the best final accuracy for `task`; earliest angle
    /// wins ties.
    pub fn best_angle(&self, task: TaskKind) -> Option<f64> {
        let mut angles: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.task == task)
            .map(|r| r.base_angle)
            .collect();
        angles.sort_by(f64::total_cmp);
        angles.dedup();
        let mut best: Option<(f64, f64)> = None;
        for a in angles {
            let acc = self.final_val_acc(task, a)?;
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((a, acc));
            }
        }
        best.map(|(a, _)| a)
    }
}

/// One independent training run per `(base_angle, task)` cell. Cells run on
/// `workers` threads; rows come back in grid order regardless. Failing cells
/// are recorded and the sweep carries on.
///
/// When the template has a second plane, the grid sweeps that plane and the
/// first stays at `template.base_angle`.
pub fn frequency_sweep(
    base_angles: &[f64],
    tasks: &[TaskKind],
    template: &TrainConfig,
    workers: usize,
) -> Result<SweepResult> {
    frequency_sweep_runs(base_angles, tasks, template, workers).map(|(result, _)| result)
}

/// [`frequency_sweep`] that also hands back every finished run.
pub fn frequency_sweep_runs(
    base_angles: &[f64],
    tasks: &[TaskKind],
    template: &TrainConfig,
    workers: usize,
) -> Result<(SweepResult, Vec<TrainRun>)> {
    use rayon::prelude::*;
    if base_angles.is_empty() || tasks.is_empty() {
        return invalid("sweep needs at least one base angle and one task");
    }
    let cells: Vec<(TaskKind, f64)> = tasks
        .iter()
        .flat_map(|&t| base_angles.iter().map(move |&a| (t, a)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let outcomes: Vec<Result<TrainRun>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(task, angle)| train(&cell_config(template, task, angle)))
            .collect()
    });
    let mut result = SweepResult::default();
    let mut runs = Vec::new();
    for ((task, base_angle), outcome) in cells.into_iter().zip(outcomes) {
        let laps = cell_config(template, task, base_angle).laps_swept();
        match outcome {
            Ok(run) => {
                for r in &run.history {
                    result.rows.push(SweepRow {
                        base_angle,
                        laps,
                        task,
                        epoch: r.epoch,
                        train_acc: r.train_acc,
                        val_acc: r.val_acc,
                        per_position_val_acc: r.per_position_val_acc.clone(),
                    });
                }
                runs.push(run);
            }
            Err(e) => result.failures.push(CellFailure {
                base_angle,
                task,
                error: e.to_string(),
            }),
        }
    }
    Ok((result, runs))
}
