//! Decoder-only attention heads with rotary (RoPE-like) logits.
//!
//! A head scores the key at position `j` against the query at position `i`
//! (`j <= i`) by
//!
//! ```text
//! L(x_q, i, x_k, j) = sum_t < K_t x_k , R(theta_t)^(i - j) Q_t x_q >
//! ```
//!
//! where `Q_t`, `K_t` are the two rows of the query/key matrices belonging to
//! rotation plane `t` and `R(phi)` is the counterclockwise planar rotation.
//! The relative rotation is applied on the query side only; by unitarity this
//! equals rotating both sides by their absolute positions.
//!
//! Positions are 1-based throughout the public API, matching the usual
//! `x_1, ..., x_n` indexing. Vector accessors on [`EmbeddedSequence`] are
//! 0-based like any Rust slice.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Token identifier inside a finite vocabulary.
pub type TokenId = usize;

/// A prompt over a finite vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    vocab_size: usize,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return invalid("vocabulary size must be positive");
        }
        if tokens.is_empty() {
            return invalid("token sequence must contain at least one token");
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab: vocab_size,
            });
        }
        Ok(Self { tokens, vocab_size })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// The final (query) token.
    pub fn last(&self) -> TokenId {
        self.tokens[self.tokens.len() - 1]
    }

    /// Reorders the prefix (every token but the last): the token at 0-based
    /// prefix slot `s` of the result is the original token at `perm[s]`.
    pub fn permute_prefix(&self, perm: &[usize]) -> Result<Self> {
        let m = self.tokens.len() - 1;
        check_permutation(perm, m)?;
        let mut tokens: Vec<TokenId> = perm.iter().map(|&p| self.tokens[p]).collect();
        tokens.push(self.last());
        Ok(Self {
            tokens,
            vocab_size: self.vocab_size,
        })
    }
}

pub(crate) fn check_permutation(perm: &[usize], m: usize) -> Result<()> {
    if perm.len() != m {
        return Err(Error::DimensionMismatch {
            what: "permutation length",
            expected: m,
            got: perm.len(),
        });
    }
    let mut seen = vec![false; m];
    for &p in perm {
        if p >= m || seen[p] {
            return invalid(format!("{perm:?} is not a permutation of 0..{m}"));
        }
        seen[p] = true;
    }
    Ok(())
}

/// A sequence of `n` real vectors of common dimension `d`, stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSequence {
    vectors: Array2<f64>,
}

impl EmbeddedSequence {
    pub fn new(vectors: Array2<f64>) -> Result<Self> {
        if vectors.nrows() == 0 {
            return invalid("embedded sequence must contain at least one vector");
        }
        if vectors.ncols() < 2 {
            return invalid("vector dimension must be at least 2");
        }
        Ok(Self { vectors })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                what: "embedded vector",
                expected: d,
                got: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let vectors =
            Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Self::new(vectors)
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// 0-based access to the vector at slot `k`.
    pub fn vector(&self, k: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(k)
    }

    pub fn as_matrix(&self) -> &Array2<f64> {
        &self.vectors
    }

    /// Reorders the prefix exactly like [`TokenSequence::permute_prefix`].
    pub fn permute_prefix(&self, perm: &[usize]) -> Result<Self> {
        let m = self.len() - 1;
        check_permutation(perm, m)?;
        let mut order: Vec<usize> = perm.to_vec();
        order.push(m);
        Ok(Self {
            vectors: self.vectors.select(Axis(0), &order),
        })
    }
}

/// Rotation angles, one per two-dimensional plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSchedule {
    angles: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base: Option<f64>,
}

impl RotationSchedule {
    pub fn from_angles(angles: Vec<f64>) -> Result<Self> {
        if angles.is_empty() {
            return invalid("rotation schedule needs at least one plane");
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return invalid("rotation angles must be finite");
        }
        Ok(Self { angles, base: None })
    }

    /// Standard geometric schedule `theta_t = base^(-2t/d)` for
    /// `t = 0..d/2`, strictly decreasing in `t` when `base > 1`.
    pub fn from_base(base: f64, d_head: usize) -> Result<Self> {
        if !(base > 0.0 && base.is_finite()) {
            return invalid(format!("RoPE base must be positive, got {base}"));
        }
        if d_head < 2 || !d_head.is_multiple_of(2) {
            return invalid(format!("head dimension must be even, got {d_head}"));
        }
        let angles = (0..d_head / 2)
            .map(|t| base.powf(-2.0 * t as f64 / d_head as f64))
            .collect();
        Ok(Self {
            angles,
            base: Some(base),
        })
    }

    /// All-zero angles (no positional encoding).
    pub fn nope(planes: usize) -> Result<Self> {
        Self::from_angles(vec![0.0; planes])
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn base(&self) -> Option<f64> {
        self.base
    }

    pub fn planes(&self) -> usize {
        self.angles.len()
    }
}

/// Value function applied to keys before averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMap {
    Identity,
    /// `Val(x) = W x` with `W` of shape `d_out x d_in`.
    Linear(Vec<Vec<f64>>),
}

/// Output function `y_i = F(a_i, x_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `y_i = a_i`.
    AttentionOnly,
    /// `y_i` is the first `len` coordinates of `a_i`.
    Projection { len: usize },
    /// `y_i = a_i + x_i`.
    ResidualSum,
}

/// Anything that can score a key against a query.
///
/// [`HeadSpec`] is the rotary implementation; other logit families can be
/// analysed with the behavior predicates by implementing this trait.
pub trait LogitFn {
    /// Logit of key `x_k` at position `j` seen from query `x_q` at position
    /// `i` (1-based, `j <= i`).
    fn logit(&self, x_q: ArrayView1<'_, f64>, i: usize, x_k: ArrayView1<'_, f64>, j: usize) -> Result<f64>;
}

/// One attention head: query/key maps, rotation schedule, value map and
/// activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HeadSpecDoc", into = "HeadSpecDoc")]
pub struct HeadSpec {
    query: Array2<f64>,
    key: Array2<f64>,
    schedule: RotationSchedule,
    value_map: ValueMap,
    activation: Activation,
    value_matrix: Option<Array2<f64>>,
}

impl HeadSpec {
    /// Head with identity values and attention-only output.
    pub fn new(query: Array2<f64>, key: Array2<f64>, schedule: RotationSchedule) -> Result<Self> {
        if query.dim() != key.dim() {
            return invalid(format!(
                "query {:?} and key {:?} matrices must have identical shapes",
                query.dim(),
                key.dim()
            ));
        }
        let d_head = query.nrows();
        if d_head < 2 || !d_head.is_multiple_of(2) {
            return invalid(format!("head dimension must be even and >= 2, got {d_head}"));
        }
        if schedule.planes() != d_head / 2 {
            return Err(Error::DimensionMismatch {
                what: "rotation schedule planes",
                expected: d_head / 2,
                got: schedule.planes(),
            });
        }
        Ok(Self {
            query,
            key,
            schedule,
            value_map: ValueMap::Identity,
            activation: Activation::AttentionOnly,
            value_matrix: None,
        })
    }

    pub fn with_value_map(mut self, value_map: ValueMap) -> Result<Self> {
        self.value_matrix = match &value_map {
            ValueMap::Identity => None,
            ValueMap::Linear(rows) => {
                let m = rows_to_matrix(rows)?;
                if m.ncols() != self.d_in() {
                    return Err(Error::DimensionMismatch {
                        what: "value matrix columns",
                        expected: self.d_in(),
                        got: m.ncols(),
                    });
                }
                Some(m)
            }
        };
        self.value_map = value_map;
        self.check_activation(self.activation)?;
        Ok(self)
    }

    pub fn with_activation(mut self, activation: Activation) -> Result<Self> {
        self.check_activation(activation)?;
        self.activation = activation;
        Ok(self)
    }

    fn check_activation(&self, activation: Activation) -> Result<()> {
        let d_val = self.value_dim();
        match activation {
            Activation::AttentionOnly => Ok(()),
            Activation::Projection { len } if len == 0 || len > d_val => {
                invalid(format!("projection length {len} outside 1..={d_val}"))
            }
            Activation::Projection { .. } => Ok(()),
            Activation::ResidualSum if d_val != self.d_in() => Err(Error::DimensionMismatch {
                what: "residual sum value dimension",
                expected: self.d_in(),
                got: d_val,
            }),
            Activation::ResidualSum => Ok(()),
        }
    }

    pub fn d_in(&self) -> usize {
        self.query.ncols()
    }

    pub fn d_head(&self) -> usize {
        self.query.nrows()
    }

    pub fn planes(&self) -> usize {
        self.schedule.planes()
    }

    pub fn query(&self) -> &Array2<f64> {
        &self.query
    }

    pub fn key(&self) -> &Array2<f64> {
        &self.key
    }

    pub fn schedule(&self) -> &RotationSchedule {
        &self.schedule
    }

    pub fn value_map(&self) -> &ValueMap {
        &self.value_map
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn value_dim(&self) -> usize {
        self.value_matrix.as_ref().map_or(self.d_in(), |m| m.nrows())
    }

    fn check_input(&self, x: ArrayView1<'_, f64>) -> Result<()> {
        if x.len() != self.d_in() {
            return Err(Error::DimensionMismatch {
                what: "head input vector",
                expected: self.d_in(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `Q x`.
    pub fn project_query(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check_input(x)?;
        Ok(self.query.dot(&x))
    }

    /// `K x`.
    pub fn project_key(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check_input(x)?;
        Ok(self.key.dot(&x))
    }

    /// The projected query rotated plane-wise by `theta_t * delta`.
    pub fn rotate_query(&self, q: &Array1<f64>, delta: f64) -> Array1<f64> {
        let mut out = q.clone();
        for (t, &theta) in self.schedule.angles().iter().enumerate() {
            let [a, b] = rotate([q[2 * t], q[2 * t + 1]], theta * delta);
            out[2 * t] = a;
            out[2 * t + 1] = b;
        }
        out
    }

    fn value(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        match &self.value_matrix {
            None => x.to_owned(),
            Some(w) => w.dot(&x),
        }
    }

    fn activate(&self, a: Array1<f64>, x: ArrayView1<'_, f64>) -> Array1<f64> {
        match self.activation {
            Activation::AttentionOnly => a,
            Activation::Projection { len } => a.slice(ndarray::s![..len]).to_owned(),
            Activation::ResidualSum => a + &x,
        }
    }
}

impl LogitFn for HeadSpec {
    fn logit(&self, x_q: ArrayView1<'_, f64>, i: usize, x_k: ArrayView1<'_, f64>, j: usize) -> Result<f64> {
        rope_logit(self, x_q, i, x_k, j)
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let cols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || cols == 0 {
        return invalid("matrix must be non-empty");
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch {
            what: "matrix row",
            expected: cols,
            got: bad.len(),
        });
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn matrix_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// On-disk form of [`HeadSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadSpecDoc {
    pub d_in: usize,
    pub d_head: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub value_map: ValueMap,
    pub activation: Activation,
}

impl From<HeadSpec> for HeadSpecDoc {
    fn from(h: HeadSpec) -> Self {
        let (angles, base) = match h.schedule.base {
            Some(b) => (None, Some(b)),
            None => (Some(h.schedule.angles.clone()), None),
        };
        Self {
            d_in: h.d_in(),
            d_head: h.d_head(),
            angles,
            base,
            q: matrix_to_rows(&h.query),
            k: matrix_to_rows(&h.key),
            value_map: h.value_map,
            activation: h.activation,
        }
    }
}

impl TryFrom<HeadSpecDoc> for HeadSpec {
    type Error = Error;

    fn try_from(doc: HeadSpecDoc) -> Result<Self> {
        let query = rows_to_matrix(&doc.q)?;
        let key = rows_to_matrix(&doc.k)?;
        if query.dim() != (doc.d_head, doc.d_in) {
            return invalid(format!(
                "Q has shape {:?}, document declares ({}, {})",
                query.dim(),
                doc.d_head,
                doc.d_in
            ));
        }
        let schedule = match (doc.angles, doc.base) {
            (Some(angles), None) => RotationSchedule::from_angles(angles)?,
            (None, Some(base)) => RotationSchedule::from_base(base, doc.d_head)?,
            _ => return invalid("exactly one of `angles` or `base` must be given"),
        };
        HeadSpec::new(query, key, schedule)?
            .with_value_map(doc.value_map)?
            .with_activation(doc.activation)
    }
}

/// Counterclockwise rotation of a 2-vector by `angle` radians.
pub fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// `R(theta)^delta v`.
pub fn rotation_apply(theta: f64, delta: i64, v: [f64; 2]) -> [f64; 2] {
    rotate(v, theta * delta as f64)
}

/// Rotary logit between the query `x_q` at position `i` and the key `x_k`
/// at position `j <= i`.
pub fn rope_logit(
    head: &HeadSpec,
    x_q: ArrayView1<'_, f64>,
    i: usize,
    x_k: ArrayView1<'_, f64>,
    j: usize,
) -> Result<f64> {
    if j > i {
        return Err(Error::NonCausal { query: i, key: j });
    }
    let q = head.project_query(x_q)?;
    let k = head.project_key(x_k)?;
    let rq = head.rotate_query(&q, i as f64 - j as f64);
    Ok(k.dot(&rq))
}

/// Logits `lambda_1..lambda_i` from the query at position `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRow {
    query: usize,
    values: Vec<f64>,
}

impl LogitRow {
    pub fn new(query: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != query || query == 0 {
            return Err(Error::DimensionMismatch {
                what: "causal logit row",
                expected: query,
                got: values.len(),
            });
        }
        Ok(Self { query, values })
    }

    pub fn query_index(&self) -> usize {
        self.query
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Causal softmax of a [`LogitRow`].
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    weights: Vec<f64>,
}

impl AttentionRow {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weights that are already normalized (used for projected heads and
    /// tests). Rejects negative or non-finite entries.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("attention weights must be finite and non-negative");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("attention weights sum to {total}, not 1"));
        }
        Ok(Self { weights })
    }
}

fn check_position(pos: usize, len: usize) -> Result<()> {
    if pos == 0 || pos > len {
        return Err(Error::PositionOutOfRange { pos, len });
    }
    Ok(())
}

/// Row of logits from the query at position `i` (1-based) over keys `1..=i`.
pub fn logit_row(head: &HeadSpec, xbar: &EmbeddedSequence, i: usize) -> Result<LogitRow> {
    check_position(i, xbar.len())?;
    let q = head.project_query(xbar.vector(i - 1))?;
    let values = (1..=i)
        .map(|j| {
            let k = head.project_key(xbar.vector(j - 1))?;
            Ok(k.dot(&head.rotate_query(&q, (i - j) as f64)))
        })
        .collect::<Result<Vec<_>>>()?;
    LogitRow::new(i, values)
}

/// Same as [`logit_row`] for any [`LogitFn`].
pub fn logit_row_with<L: LogitFn + ?Sized>(logits: &L, xbar: &EmbeddedSequence, i: usize) -> Result<LogitRow> {
    check_position(i, xbar.len())?;
    let values = (1..=i)
        .map(|j| logits.logit(xbar.vector(i - 1), i, xbar.vector(j - 1), j))
        .collect::<Result<Vec<_>>>()?;
    LogitRow::new(i, values)
}

/// Numerically stable softmax of a logit row.
pub fn attention_row(row: &LogitRow) -> Result<AttentionRow> {
    softmax_weights(row.values()).map(|weights| AttentionRow { weights })
}

pub(crate) fn softmax_weights(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogit(pos + 1));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Attention vector `a_i = sum_j w_j Val(x_j)` for the query at `i`.
fn attention_vector(head: &HeadSpec, xbar: &EmbeddedSequence, i: usize) -> Result<Array1<f64>> {
    let attn = attention_row(&logit_row(head, xbar, i)?)?;
    let mut a = Array1::<f64>::zeros(head.value_dim());
    for (j, &w) in attn.weights().iter().enumerate() {
        a.scaled_add(w, &head.value(xbar.vector(j)));
    }
    Ok(a)
}

/// Output of the head at position `i` only.
pub fn head_output_at(head: &HeadSpec, xbar: &EmbeddedSequence, i: usize) -> Result<Array1<f64>> {
    let a = attention_vector(head, xbar, i)?;
    Ok(head.activate(a, xbar.vector(i - 1)))
}

/// Full head forward pass `y_1..y_n`.
pub fn head_forward(head: &HeadSpec, xbar: &EmbeddedSequence) -> Result<EmbeddedSequence> {
    let n = xbar.len();
    let outputs = (1..=n)
        .map(|i| head_output_at(head, xbar, i).map(|y| y.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let d = outputs[0].len();
    let flat: Vec<f64> = outputs.into_iter().flatten().collect();
    let vectors = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    // Projection to a single coordinate is legal for F but not a valid
    // EmbeddedSequence, so skip the d >= 2 check here.
    Ok(EmbeddedSequence { vectors })
}

/// Token embedding of a one-layer model.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    OneHot {
        vocab_size: usize,
    },
    /// Learned table, one row per token.
    Table(Array2<f64>),
}

impl Embedding {
    pub fn vocab_size(&self) -> usize {
        match self {
            Embedding::OneHot { vocab_size } => *vocab_size,
            Embedding::Table(t) => t.nrows(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedding::OneHot { vocab_size } => *vocab_size,
            Embedding::Table(t) => t.ncols(),
        }
    }

    pub fn embed(&self, seq: &TokenSequence) -> Result<EmbeddedSequence> {
        if seq.vocab_size() > self.vocab_size() {
            return Err(Error::DimensionMismatch {
                what: "embedding vocabulary",
                expected: seq.vocab_size(),
                got: self.vocab_size(),
            });
        }
        let d = self.dim();
        let mut vectors = Array2::<f64>::zeros((seq.len(), d));
        for (row, &tok) in seq.tokens().iter().enumerate() {
            match self {
                Embedding::OneHot { .. } => vectors[[row, tok]] = 1.0,
                Embedding::Table(t) => vectors.row_mut(row).assign(&t.row(tok)),
            }
        }
        EmbeddedSequence::new(vectors)
    }
}

/// Linear readout from the final head output to vocabulary logits.
#[derive(Debug, Clone, PartialEq)]
pub enum Readout {
    /// Output coordinates are the vocabulary logits (one-hot models).
    Identity,
    /// `vocab x d_out` matrix.
    Linear(Array2<f64>),
}

/// One-layer, one-head model `softmax(r(H(Emb(s))_n))`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneLayerModel {
    pub head: HeadSpec,
    pub embedding: Embedding,
    pub readout: Readout,
}

/// Outcome of [`model_predict`]. Ties are reported, never broken.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Unique { token: TokenId, margin: f64 },
    Tied { candidates: Vec<TokenId> },
}

impl Prediction {
    pub fn token(&self) -> Option<TokenId> {
        match self {
            Prediction::Unique { token, .. } => Some(*token),
            Prediction::Tied { .. } => None,
        }
    }

    pub fn is_unique(&self) -> bool {
        matches!(self, Prediction::Unique { .. })
    }

    /// Same predicted token, or the same tie set; margins are ignored.
    pub fn same_outcome(&self, other: &Prediction) -> bool {
        match (self, other) {
            (Prediction::Unique { token: a, .. }, Prediction::Unique { token: b, .. }) => a == b,
            (Prediction::Tied { candidates: a }, Prediction::Tied { candidates: b }) => a == b,
            _ => false,
        }
    }
}

/// Gap below which the two best vocabulary logits count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Argmax over vocabulary logits with explicit tie reporting.
pub fn argmax_prediction(logits: &[f64]) -> Prediction {
    let best = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let candidates: Vec<TokenId> = logits
        .iter()
        .enumerate()
        .filter(|(_, &v)| best - v < TIE_TOLERANCE)
        .map(|(i, _)| i)
        .collect();
    if candidates.len() == 1 {
        let token = candidates[0];
        let margin = logits
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != token)
            .map(|(_, &v)| best - v)
            .fold(f64::INFINITY, f64::min);
        Prediction::Unique { token, margin }
    } else {
        Prediction::Tied { candidates }
    }
}

impl OneLayerModel {
    /// Vocabulary logits `v = r(u_n)`.
    pub fn vocab_logits(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        let xbar = self.embedding.embed(seq)?;
        let u = head_output_at(&self.head, &xbar, xbar.len())?;
        match &self.readout {
            Readout::Identity => {
                if u.len() != seq.vocab_size() {
                    return Err(Error::DimensionMismatch {
                        what: "identity readout",
                        expected: seq.vocab_size(),
                        got: u.len(),
                    });
                }
                Ok(u.to_vec())
            }
            Readout::Linear(w) => {
                if w.ncols() != u.len() || w.nrows() != seq.vocab_size() {
                    return Err(Error::DimensionMismatch {
                        what: "readout matrix",
                        expected: u.len(),
                        got: w.ncols(),
                    });
                }
                Ok(w.dot(&u).to_vec())
            }
        }
    }
}

/// Token predicted by the model, or the tie set when the maximum of
/// `softmax(v)` is not unique.
pub fn model_predict(model: &OneLayerModel, seq: &TokenSequence) -> Result<Prediction> {
    Ok(argmax_prediction(&model.vocab_logits(seq)?))
}

/// Per-plane split of a logit row.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyDecomposition {
    /// One row per rotation plane; they sum to the full row.
    pub rows: Vec<LogitRow>,
    /// Mean norm of the plane's key slices over keys `1..=i`.
    pub key_norms: Vec<f64>,
    /// Norm of the plane's query slice.
    pub query_norms: Vec<f64>,
}

/// Splits the logit row at query `i` into per-plane contributions.
pub fn frequency_decompose(head: &HeadSpec, xbar: &EmbeddedSequence, i: usize) -> Result<FrequencyDecomposition> {
    check_position(i, xbar.len())?;
    let planes = head.planes();
    let q = head.project_query(xbar.vector(i - 1))?;
    let mut rows = vec![Vec::with_capacity(i); planes];
    let mut key_norms = vec![0.0; planes];
    for j in 1..=i {
        let k = head.project_key(xbar.vector(j - 1))?;
        let rq = head.rotate_query(&q, (i - j) as f64);
        for t in 0..planes {
            rows[t].push(k[2 * t] * rq[2 * t] + k[2 * t + 1] * rq[2 * t + 1]);
            key_norms[t] += k[2 * t].hypot(k[2 * t + 1]);
        }
    }
    let query_norms = (0..planes).map(|t| q[2 * t].hypot(q[2 * t + 1])).collect();
    for norm in &mut key_norms {
        *norm /= i as f64;
    }
    let rows = rows
        .into_iter()
        .map(|values| LogitRow::new(i, values))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrequencyDecomposition {
        rows,
        key_norms,
        query_norms,
    })
}

/// Single-plane head extracted from plane `t` of `head`.
pub fn project_plane(head: &HeadSpec, t: usize) -> Result<HeadSpec> {
    if t >= head.planes() {
        return invalid(format!("plane {t} out of range 0..{}", head.planes()));
    }
    let rows = [2 * t, 2 * t + 1];
    let q = head.query.select(Axis(0), &rows);
    let k = head.key.select(Axis(0), &rows);
    let schedule = RotationSchedule::from_angles(vec![head.schedule.angles()[t]])?;
    HeadSpec::new(q, k, schedule)?
        .with_value_map(head.value_map.clone())?
        .with_activation(head.activation)
}
