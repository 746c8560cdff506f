//! One-layer, one-head model with fixed rotary angles and exact gradients.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{
    Embedding, HeadSpec, HeadSpecDoc, OneLayerModel, Readout, RotationSchedule, TokenId, ValueMap, TIE_TOLERANCE,
};
use crate::error::{invalid, Error, Result};
use crate::tasks::TaskInstance;

/// Learnable tensors, in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tensor {
    Embedding,
    Query,
    Key,
    Readout,
    Value,
}

impl Tensor {
    pub const ALL: [Tensor; 5] = [
        Tensor::Embedding,
        Tensor::Query,
        Tensor::Key,
        Tensor::Readout,
        Tensor::Value,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::Embedding => "embedding",
            Tensor::Query => "query",
            Tensor::Key => "key",
            Tensor::Readout => "readout",
            Tensor::Value => "value",
        }
    }
}

/// Embedding `V x D`, query/key `2P x D` with fixed angles, readout `V x D`
/// and an optional learned value map `D x D` (identity otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableModel {
    pub embedding: Array2<f64>,
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub readout: Array2<f64>,
    pub value: Option<Array2<f64>>,
    pub angles: Vec<f64>,
    /// A frozen embedding is the one-hot identity and receives no updates.
    pub frozen_embedding: bool,
}

/// Initialization knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub d_model: usize,
    pub embed_std: f64,
    /// `None` means `1 / sqrt(d_model)`.
    pub qk_std: Option<f64>,
    pub learned_value: bool,
    pub one_hot_embedding: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            embed_std: 0.02,
            qk_std: None,
            learned_value: false,
            one_hot_embedding: false,
        }
    }
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("standard deviation is finite and positive");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

impl TrainableModel {
    pub fn init(vocab_size: usize, angles: Vec<f64>, cfg: &InitConfig, rng: &mut impl Rng) -> Result<Self> {
        if vocab_size < 2 || angles.is_empty() {
            return invalid("model needs a vocabulary of at least 2 and at least one plane");
        }
        let d = if cfg.one_hot_embedding { vocab_size } else { cfg.d_model };
        if d == 0 || !(cfg.embed_std > 0.0) {
            return invalid("d_model and embedding std must be positive");
        }
        let qk_std = cfg.qk_std.unwrap_or(1.0 / (d as f64).sqrt());
        let p2 = 2 * angles.len();
        let embedding = if cfg.one_hot_embedding {
            Array2::eye(vocab_size)
        } else {
            normal_matrix(vocab_size, d, cfg.embed_std, rng)
        };
        let query = normal_matrix(p2, d, qk_std, rng);
        let key = normal_matrix(p2, d, qk_std, rng);
        let readout = normal_matrix(vocab_size, d, cfg.embed_std, rng);
        let value = cfg
            .learned_value
            .then(|| Array2::eye(d) + normal_matrix(d, d, cfg.embed_std, rng));
        Ok(Self {
            embedding,
            query,
            key,
            readout,
            value,
            angles,
            frozen_embedding: cfg.one_hot_embedding,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn d_model(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn planes(&self) -> usize {
        self.angles.len()
    }

    /// Tensors that receive gradient updates.
    pub fn trainable(&self) -> Vec<Tensor> {
        Tensor::ALL
            .into_iter()
            .filter(|t| match t {
                Tensor::Embedding => !self.frozen_embedding,
                Tensor::Value => self.value.is_some(),
                _ => true,
            })
            .collect()
    }

    pub fn tensor(&self, t: Tensor) -> Option<&Array2<f64>> {
        match t {
            Tensor::Embedding => Some(&self.embedding),
            Tensor::Query => Some(&self.query),
            Tensor::Key => Some(&self.key),
            Tensor::Readout => Some(&self.readout),
            Tensor::Value => self.value.as_ref(),
        }
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> Option<&mut Array2<f64>> {
        match t {
            Tensor::Embedding => Some(&mut self.embedding),
            Tensor::Query => Some(&mut self.query),
            Tensor::Key => Some(&mut self.key),
            Tensor::Readout => Some(&mut self.readout),
            Tensor::Value => self.value.as_mut(),
        }
    }

    /// Query and key images `Q E[v]`, `K E[v]` of every token (`V x 2P`).
    pub fn qk_images(&self) -> (Array2<f64>, Array2<f64>) {
        (self.embedding.dot(&self.query.t()), self.embedding.dot(&self.key.t()))
    }

    /// Equivalent inference-time model.
    pub fn to_one_layer_model(&self) -> Result<OneLayerModel> {
        Ok(OneLayerModel {
            head: self.head_spec()?,
            embedding: Embedding::Table(self.embedding.clone()),
            readout: Readout::Linear(self.readout.clone()),
        })
    }

    pub fn head_spec(&self) -> Result<HeadSpec> {
        let head = HeadSpec::new(
            self.query.clone(),
            self.key.clone(),
            RotationSchedule::from_angles(self.angles.clone())?,
        )?;
        match &self.value {
            None => Ok(head),
            Some(v) => head.with_value_map(ValueMap::Linear(v.rows().into_iter().map(|r| r.to_vec()).collect())),
        }
    }
}

/// Gradients with the same shapes as the model's tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub embedding: Array2<f64>,
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub readout: Array2<f64>,
    pub value: Option<Array2<f64>>,
}

impl Grads {
    pub fn zeros_like(m: &TrainableModel) -> Self {
        Self {
            embedding: Array2::zeros(m.embedding.dim()),
            query: Array2::zeros(m.query.dim()),
            key: Array2::zeros(m.key.dim()),
            readout: Array2::zeros(m.readout.dim()),
            value: m.value.as_ref().map(|v| Array2::zeros(v.dim())),
        }
    }

    pub fn tensor(&self, t: Tensor) -> Option<&Array2<f64>> {
        match t {
            Tensor::Embedding => Some(&self.embedding),
            Tensor::Query => Some(&self.query),
            Tensor::Key => Some(&self.key),
            Tensor::Readout => Some(&self.readout),
            Tensor::Value => self.value.as_ref(),
        }
    }

    pub fn scale(&mut self, f: f64) {
        for g in [&mut self.embedding, &mut self.query, &mut self.key, &mut self.readout] {
            *g *= f;
        }
        if let Some(v) = &mut self.value {
            *v *= f;
        }
    }

    pub fn norm(&self) -> f64 {
        Tensor::ALL
            .iter()
            .filter_map(|&t| self.tensor(t))
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Loss, per-instance predicted tokens (`None` on a tie) and the intermediate
/// state needed for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: f64,
    pub predictions: Vec<Option<TokenId>>,
    cache: Option<Cache>,
}

impl ForwardOutput {
    pub fn correct(&self, batch: &[TaskInstance]) -> usize {
        self.predictions
            .iter()
            .zip(batch)
            .filter(|(p, inst)| **p == Some(inst.answer))
            .count()
    }
}

#[derive(Debug, Clone)]
struct Cache {
    qe: Array2<f64>,
    ke: Array2<f64>,
    weights: Vec<Vec<f64>>,
    /// Attention-weighted embedding sums (`B x D`).
    s: Array2<f64>,
    /// Value-mapped sums (`B x D`).
    u: Array2<f64>,
    /// Output probabilities (`B x V`).
    probs: Array2<f64>,
}

/// `cos/sin(theta_t * delta)` for every plane and distance `0..n`.
struct RotTable {
    cs: Vec<[f64; 2]>,
    n: usize,
}

impl RotTable {
    fn new(angles: &[f64], n: usize) -> Self {
        let mut cs = Vec::with_capacity(angles.len() * n);
        for &theta in angles {
            for delta in 0..n {
                let (s, c) = (theta * delta as f64).sin_cos();
                cs.push([c, s]);
            }
        }
        Self { cs, n }
    }

    #[inline]
    fn get(&self, t: usize, delta: usize) -> [f64; 2] {
        self.cs[t * self.n + delta]
    }
}

fn check_batch(model: &TrainableModel, batch: &[TaskInstance]) -> Result<usize> {
    let n = batch
        .first()
        .map(|i| i.sequence.len())
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    for inst in batch {
        if inst.sequence.len() != n {
            return Err(Error::DimensionMismatch {
                what: "batch sequence length",
                expected: n,
                got: inst.sequence.len(),
            });
        }
        if inst.sequence.vocab_size() != model.vocab_size() {
            return Err(Error::DimensionMismatch {
                what: "instance vocabulary",
                expected: model.vocab_size(),
                got: inst.sequence.vocab_size(),
            });
        }
    }
    Ok(n)
}

fn argmax_with_ties(row: ArrayView1<'_, f64>) -> Option<TokenId> {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    let ties = row.iter().filter(|&&v| row[best] - v < TIE_TOLERANCE).count();
    (ties == 1).then_some(best)
}

/// Mean cross-entropy of the final-position distribution, plus predictions.
pub fn forward_loss(model: &TrainableModel, batch: &[TaskInstance]) -> Result<ForwardOutput> {
    forward(model, batch, false)
}

fn forward(model: &TrainableModel, batch: &[TaskInstance], keep: bool) -> Result<ForwardOutput> {
    let n = check_batch(model, batch)?;
    let (b, d, planes) = (batch.len(), model.d_model(), model.planes());
    let rot = RotTable::new(&model.angles, n);
    let (qe, ke) = model.qk_images();
    let emb = &model.embedding;
    let mut s = Array2::<f64>::zeros((b, d));
    let mut weights = Vec::with_capacity(if keep { b } else { 0 });
    let mut logits = vec![0.0; n];
    for (bi, inst) in batch.iter().enumerate() {
        let toks = inst.sequence.tokens();
        let q = qe.row(toks[n - 1]);
        for (j, &tok) in toks.iter().enumerate() {
            let k = ke.row(tok);
            let delta = n - 1 - j;
            let mut l = 0.0;
            for t in 0..planes {
                let [c, sn] = rot.get(t, delta);
                let (q0, q1) = (q[2 * t], q[2 * t + 1]);
                l += k[2 * t] * (c * q0 - sn * q1) + k[2 * t + 1] * (sn * q0 + c * q1);
            }
            logits[j] = l;
        }
        let w = crate::attention::softmax_weights(&logits)?;
        let mut srow = s.row_mut(bi);
        for (j, &tok) in toks.iter().enumerate() {
            srow.scaled_add(w[j], &emb.row(tok));
        }
        if keep {
            weights.push(w);
        }
    }
    let u = match &model.value {
        Some(v) => s.dot(&v.t()),
        None => s.clone(),
    };
    let z = u.dot(&model.readout.t());
    let mut probs = z.clone();
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(b);
    for (bi, inst) in batch.iter().enumerate() {
        let zr = z.row(bi);
        predictions.push(argmax_with_ties(zr));
        let max = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut pr = probs.row_mut(bi);
        pr.mapv_inplace(|v| (v - max).exp());
        let total = pr.sum();
        pr /= total;
        loss += max + total.ln() - zr[inst.answer];
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLogit(0));
    }
    Ok(ForwardOutput {
        loss,
        predictions,
        cache: keep.then_some(Cache {
            qe,
            ke,
            weights,
            s,
            u,
            probs,
        }),
    })
}

/// Forward pass plus exact reverse-mode gradients of the mean cross-entropy.
pub fn loss_and_grads(model: &TrainableModel, batch: &[TaskInstance]) -> Result<(ForwardOutput, Grads)> {
    let mut out = forward(model, batch, true)?;
    let grads = backward_from(model, batch, &out)?;
    out.cache = None;
    Ok((out, grads))
}

/// Gradients for `batch`; runs its own forward pass.
pub fn backward(model: &TrainableModel, batch: &[TaskInstance]) -> Result<Grads> {
    loss_and_grads(model, batch).map(|(_, g)| g)
}

fn backward_from(model: &TrainableModel, batch: &[TaskInstance], out: &ForwardOutput) -> Result<Grads> {
    let cache = out
        .cache
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("forward cache missing".into()))?;
    let n = batch[0].sequence.len();
    let (b, planes) = (batch.len(), model.planes());
    let rot = RotTable::new(&model.angles, n);
    let mut g = Grads::zeros_like(model);

    // Output layer.
    let mut dz = cache.probs.clone();
    for (bi, inst) in batch.iter().enumerate() {
        dz[[bi, inst.answer]] -= 1.0;
    }
    dz /= b as f64;
    g.readout = dz.t().dot(&cache.u);
    let du = dz.dot(&model.readout);
    let ds = match &model.value {
        Some(v) => {
            g.value = Some(du.t().dot(&cache.s));
            du.dot(v)
        }
        None => du,
    };

    // Attention.
    let emb = &model.embedding;
    let mut dqe = Array2::<f64>::zeros(cache.qe.dim());
    let mut dke = Array2::<f64>::zeros(cache.ke.dim());
    let mut dw = vec![0.0; n];
    for (bi, inst) in batch.iter().enumerate() {
        let toks = inst.sequence.tokens();
        let w = &cache.weights[bi];
        let dsr = ds.row(bi);
        for (j, &tok) in toks.iter().enumerate() {
            dw[j] = dsr.dot(&emb.row(tok));
        }
        let mean: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        let qtok = toks[n - 1];
        let q = cache.qe.row(qtok).to_owned();
        let mut dq = Array1::<f64>::zeros(2 * planes);
        for (j, &tok) in toks.iter().enumerate() {
            if !model.frozen_embedding {
                g.embedding.row_mut(tok).scaled_add(w[j], &dsr);
            }
            let dl = w[j] * (dw[j] - mean);
            if dl == 0.0 {
                continue;
            }
            let k = cache.ke.row(tok);
            let delta = n - 1 - j;
            let mut dk = dke.row_mut(tok);
            for t in 0..planes {
                let [c, sn] = rot.get(t, delta);
                let (q0, q1) = (q[2 * t], q[2 * t + 1]);
                let (k0, k1) = (k[2 * t], k[2 * t + 1]);
                // logit = <k, R q>
                dk[2 * t] += dl * (c * q0 - sn * q1);
                dk[2 * t + 1] += dl * (sn * q0 + c * q1);
                // d/dq = R^T k
                dq[2 * t] += dl * (c * k0 + sn * k1);
                dq[2 * t + 1] += dl * (-sn * k0 + c * k1);
            }
        }
        dqe.row_mut(qtok).scaled_add(1.0, &dq);
    }
    // qe = E Q^T, ke = E K^T.
    g.query = dqe.t().dot(emb);
    g.key = dke.t().dot(emb);
    if !model.frozen_embedding {
        g.embedding += &dqe.dot(&model.query);
        g.embedding += &dke.dot(&model.key);
    }
    Ok(g)
}

/// Per-tensor step rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one model.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    moments: Vec<(Tensor, Array2<f64>, Array2<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, model: &TrainableModel) -> Self {
        let moments = match kind {
            OptimizerKind::Adam { .. } => model
                .trainable()
                .into_iter()
                .filter_map(|t| {
                    model
                        .tensor(t)
                        .map(|a| (t, Array2::zeros(a.dim()), Array2::zeros(a.dim())))
                })
                .collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Self {
            kind,
            lr,
            step: 0,
            moments,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, model: &mut TrainableModel, grads: &Grads) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for t in model.trainable() {
                    if let (Some(p), Some(g)) = (model.tensor_mut(t), grads.tensor(t)) {
                        p.scaled_add(-self.lr, g);
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                let lr = self.lr;
                for (t, m, v) in &mut self.moments {
                    let (Some(p), Some(g)) = (model.tensor_mut(*t), grads.tensor(*t)) else {
                        continue;
                    };
                    ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    });
                }
            }
        }
    }
}

/// Checkpoint: the head document plus the trained tensors and run identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(flatten)]
    pub head: HeadSpecDoc,
    pub embedding: Vec<Vec<f64>>,
    pub readout: Vec<Vec<f64>>,
    pub d_model: usize,
    pub base_angle: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_base_angle: Option<f64>,
    pub task: crate::tasks::TaskKind,
    pub seed: u64,
    #[serde(default)]
    pub frozen_embedding: bool,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return invalid("ragged matrix in checkpoint");
    }
    Array2::from_shape_vec((rows.len(), c), rows.iter().flatten().copied().collect())
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

impl Checkpoint {
    pub fn from_model(
        model: &TrainableModel,
        base_angle: f64,
        second_base_angle: Option<f64>,
        task: crate::tasks::TaskKind,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            head: HeadSpecDoc::from(model.head_spec()?),
            embedding: rows(&model.embedding),
            readout: rows(&model.readout),
            d_model: model.d_model(),
            base_angle,
            second_base_angle,
            task,
            seed,
            frozen_embedding: model.frozen_embedding,
        })
    }

    pub fn to_model(&self) -> Result<TrainableModel> {
        let head = HeadSpec::try_from(self.head.clone())?;
        let value = match head.value_map() {
            ValueMap::Identity => None,
            ValueMap::Linear(r) => Some(matrix(r)?),
        };
        let model = TrainableModel {
            embedding: matrix(&self.embedding)?,
            query: head.query().clone(),
            key: head.key().clone(),
            readout: matrix(&self.readout)?,
            value,
            angles: head.schedule().angles().to_vec(),
            frozen_embedding: self.frozen_embedding,
        };
        if model.d_model() != self.d_model
            || model.query.ncols() != self.d_model
            || model.readout.dim() != model.embedding.dim()
        {
            return invalid("checkpoint tensor shapes are inconsistent");
        }
        Ok(model)
    }
}

/// Central finite-difference check of one coordinate.
pub fn finite_difference(
    model: &TrainableModel,
    batch: &[TaskInstance],
    t: Tensor,
    idx: (usize, usize),
    step: f64,
) -> Result<f64> {
    let mut plus = model.clone();
    let mut minus = model.clone();
    let missing = || Error::InvalidArgument(format!("model has no {} tensor", t.name()));
    plus.tensor_mut(t).ok_or_else(missing)?[idx] += step;
    minus.tensor_mut(t).ok_or_else(missing)?[idx] -= step;
    Ok((forward_loss(&plus, batch)?.loss - forward_loss(&minus, batch)?.loss) / (2.0 * step))
}

/// Analytic against central-difference gradients on `coords` random
/// coordinates of every trainable tensor.
///
/// A central difference with step h on a loss L carries roundoff of order
/// eps·|L|/h, so coordinates are drawn only from entries whose analytic
/// gradient is at least `resolution` = 1e5·eps·max(|L|, 1)/h, where a 1e-4
/// relative comparison is meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub tensor: Tensor,
    /// Coordinates compared; fewer than requested only if the tensor has no
    /// entry above `resolution`.
    pub coords: usize,
    pub resolution: f64,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

pub fn gradient_check(
    model: &TrainableModel,
    batch: &[TaskInstance],
    coords: usize,
    step: f64,
    rng: &mut impl Rng,
) -> Result<Vec<GradCheck>> {
    let (out, grads) = loss_and_grads(model, batch)?;
    let resolution = 1e5 * f64::EPSILON * out.loss.abs().max(1.0) / step;
    let mut used: Vec<usize> = batch.iter().flat_map(|i| i.sequence.tokens().iter().copied()).collect();
    used.sort_unstable();
    used.dedup();
    model
        .trainable()
        .into_iter()
        .map(|t| {
            let g = grads.tensor(t).expect("trainable tensors have gradients");
            let candidates: Vec<(usize, usize)> = g
                .indexed_iter()
                .filter(|&((r, _), v)| {
                    v.abs() >= resolution && (t != Tensor::Embedding || used.binary_search(&r).is_ok())
                })
                .map(|(idx, _)| idx)
                .collect();
            let (mut rel, mut abs) = (0.0f64, 0.0f64);
            let take = if candidates.is_empty() { 0 } else { coords };
            for _ in 0..take {
                let idx = candidates[rng.random_range(0..candidates.len())];
                let numeric = finite_difference(model, batch, t, idx, step)?;
                let analytic = g[idx];
                abs = abs.max((analytic - numeric).abs());
                rel = rel.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()));
            }
            Ok(GradCheck {
                tensor: t,
                coords: take,
                resolution,
                max_rel_error: rel,
                max_abs_error: abs,
            })
        })
        .collect()
}
