//! Canonical tasks: Index, Information Retrieval and Partial Induction.
//!
//! Lengths: a task of length `n` has `n - 1` context tokens followed by one
//! query token. The Index query encodes a 0-based position `j` in
//! `0..n-1`; `answer_position` on a [`TaskInstance`] is always the 1-based
//! slot of the answer inside the context.
//!
//! Vocabulary layouts (`m` symbols, `k` integers):
//!
//! * Index: symbols `0..m`, then position tokens `m..m+k` (needs `k >= n-1`).
//! * Retrieval / Partial Induction: pairs `sigma#i` at `sigma*k + i`, query
//!   tokens `sigma#` at `m*k + sigma`, and, under the integer answer
//!   convention only, bare integers at `m*k + m + i`.

use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{EmbeddedSequence, TokenId, TokenSequence};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Index,
    Retrieval,
    PartialInduction,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Index => "index",
            TaskKind::Retrieval => "retrieval",
            TaskKind::PartialInduction => "partial_induction",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "index" => Ok(TaskKind::Index),
            "retrieval" => Ok(TaskKind::Retrieval),
            "partial_induction" | "mix" => Ok(TaskKind::PartialInduction),
            other => invalid(format!("unknown task kind `{other}`")),
        }
    }
}

/// What a Retrieval / Partial Induction instance must output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerConvention {
    /// The whole pair token `sigma#i`.
    #[default]
    Composite,
    /// The bare integer `i`.
    Integer,
}

/// A decoded vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Symbol(usize),
    Position(usize),
    Pair { symbol: usize, int: usize },
    Query(usize),
    Integer(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskVocabulary {
    pub kind: TaskKind,
    pub m_sym: usize,
    pub k_int: usize,
    #[serde(default)]
    pub convention: AnswerConvention,
}

impl TaskVocabulary {
    pub fn new(kind: TaskKind, m_sym: usize, k_int: usize, convention: AnswerConvention) -> Result<Self> {
        if m_sym == 0 || k_int == 0 {
            return invalid("symbol and integer counts must be positive");
        }
        if kind == TaskKind::Index && convention != AnswerConvention::Composite {
            return invalid("the Index task has no integer answer convention");
        }
        Ok(Self {
            kind,
            m_sym,
            k_int,
            convention,
        })
    }

    pub fn index(m_sym: usize, positions: usize) -> Result<Self> {
        Self::new(TaskKind::Index, m_sym, positions, AnswerConvention::Composite)
    }

    pub fn retrieval(m_sym: usize, k_int: usize) -> Result<Self> {
        Self::new(TaskKind::Retrieval, m_sym, k_int, AnswerConvention::Composite)
    }

    pub fn partial_induction(m_sym: usize, k_int: usize) -> Result<Self> {
        Self::new(TaskKind::PartialInduction, m_sym, k_int, AnswerConvention::Composite)
    }

    pub fn with_convention(self, convention: AnswerConvention) -> Result<Self> {
        Self::new(self.kind, self.m_sym, self.k_int, convention)
    }

    pub fn size(&self) -> usize {
        let (m, k) = (self.m_sym, self.k_int);
        match (self.kind, self.convention) {
            (TaskKind::Index, _) => m + k,
            (_, AnswerConvention::Composite) => m * k + m,
            (_, AnswerConvention::Integer) => m * k + m + k,
        }
    }

    pub fn encode(&self, token: Token) -> Result<TokenId> {
        let (m, k) = (self.m_sym, self.k_int);
        let id = match (self.kind, token) {
            (TaskKind::Index, Token::Symbol(s)) if s < m => s,
            (TaskKind::Index, Token::Position(p)) if p < k => m + p,
            (TaskKind::Retrieval | TaskKind::PartialInduction, Token::Pair { symbol, int })
                if symbol < m && int < k =>
            {
                symbol * k + int
            }
            (TaskKind::Retrieval | TaskKind::PartialInduction, Token::Query(s)) if s < m => m * k + s,
            (TaskKind::Retrieval | TaskKind::PartialInduction, Token::Integer(i))
                if i < k && self.convention == AnswerConvention::Integer =>
            {
                m * k + m + i
            }
            _ => return invalid(format!("{token:?} is not part of {:?}", self)),
        };
        Ok(id)
    }

    pub fn decode(&self, id: TokenId) -> Result<Token> {
        if id >= self.size() {
            return Err(Error::TokenOutOfRange {
                token: id,
                vocab: self.size(),
            });
        }
        let (m, k) = (self.m_sym, self.k_int);
        Ok(match self.kind {
            TaskKind::Index if id < m => Token::Symbol(id),
            TaskKind::Index => Token::Position(id - m),
            _ if id < m * k => Token::Pair {
                symbol: id / k,
                int: id % k,
            },
            _ if id < m * k + m => Token::Query(id - m * k),
            _ => Token::Integer(id - m * k - m),
        })
    }

    /// Human-readable token, e.g. `c#4`, `c#` or `7`.
    pub fn render(&self, id: TokenId) -> String {
        match self.decode(id) {
            Ok(Token::Symbol(s)) => symbol_name(s),
            Ok(Token::Position(p)) | Ok(Token::Integer(p)) => p.to_string(),
            Ok(Token::Pair { symbol, int }) => format!("{}#{int}", symbol_name(symbol)),
            Ok(Token::Query(s)) => format!("{}#", symbol_name(s)),
            Err(_) => format!("<{id}>"),
        }
    }

    fn answer_token(&self, symbol: usize, int: usize) -> Result<TokenId> {
        match self.convention {
            AnswerConvention::Composite => self.encode(Token::Pair { symbol, int }),
            AnswerConvention::Integer => self.encode(Token::Integer(int)),
        }
    }
}

fn symbol_name(s: usize) -> String {
    if s < 26 {
        char::from(b'a' + s as u8).to_string()
    } else {
        format!("s{s}")
    }
}

/// A sampled prompt with its exact answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub vocab: TaskVocabulary,
    pub sequence: TokenSequence,
    pub answer: TokenId,
    /// 1-based slot of the answer inside the context.
    pub answer_position: usize,
}

impl TaskInstance {
    /// Context length `n - 1`.
    pub fn context_len(&self) -> usize {
        self.sequence.len() - 1
    }

    /// `"a#3 b#1 b# -> b#1"` style rendering.
    pub fn render(&self) -> String {
        let toks: Vec<String> = self.sequence.tokens().iter().map(|&t| self.vocab.render(t)).collect();
        format!("{} → {}", toks.join(" "), self.vocab.render(self.answer))
    }
}

fn check_length(n: usize, min: usize) -> Result<()> {
    if n < min {
        return invalid(format!("task length must be at least {min}, got {n}"));
    }
    Ok(())
}

fn expect_kind(vocab: &TaskVocabulary, kind: TaskKind) -> Result<()> {
    if vocab.kind != kind {
        return invalid(format!(
            "vocabulary is for {} but a {kind} instance was requested",
            vocab.kind
        ));
    }
    Ok(())
}

fn finish(vocab: TaskVocabulary, tokens: Vec<TokenId>) -> Result<TaskInstance> {
    let sequence = TokenSequence::new(tokens, vocab.size())?;
    let (answer, answer_position) = solve(&vocab, &sequence)?;
    Ok(TaskInstance {
        kind: vocab.kind,
        vocab,
        sequence,
        answer,
        answer_position,
    })
}

/// Index instance: `n - 1` uniform symbols and a uniform query position.
pub fn gen_index(n: usize, vocab: &TaskVocabulary, rng: &mut impl Rng) -> Result<TaskInstance> {
    expect_kind(vocab, TaskKind::Index)?;
    check_length(n, 2)?;
    if vocab.m_sym < 2 {
        return invalid("Index needs at least two symbols");
    }
    if vocab.k_int < n - 1 {
        return Err(Error::Infeasible(format!(
            "{} position tokens cannot address a context of {}",
            vocab.k_int,
            n - 1
        )));
    }
    let mut tokens: Vec<TokenId> = (0..n - 1).map(|_| rng.random_range(0..vocab.m_sym)).collect();
    tokens.push(vocab.encode(Token::Position(rng.random_range(0..n - 1)))?);
    finish(*vocab, tokens)
}

/// Retrieval instance: the query symbol occurs exactly once in the context.
///
/// Draws the query symbol and its slot uniformly, then fills every other slot
/// with a uniform non-query symbol; integers are uniform. Each valid instance
/// has exactly one query slot, so this is uniform over valid instances.
pub fn gen_retrieval(n: usize, vocab: &TaskVocabulary, rng: &mut impl Rng) -> Result<TaskInstance> {
    expect_kind(vocab, TaskKind::Retrieval)?;
    check_length(n, 2)?;
    let ctx = n - 1;
    if vocab.m_sym < 2 && ctx > 1 {
        return Err(Error::Infeasible(
            "a single symbol cannot occur exactly once in a context longer than one".into(),
        ));
    }
    let (m, k) = (vocab.m_sym, vocab.k_int);
    let query = rng.random_range(0..m);
    let slot = rng.random_range(0..ctx);
    let mut tokens = Vec::with_capacity(n);
    for s in 0..ctx {
        let symbol = if s == slot {
            query
        } else {
            let other = rng.random_range(0..m - 1);
            other + usize::from(other >= query)
        };
        tokens.push(vocab.encode(Token::Pair {
            symbol,
            int: rng.random_range(0..k),
        })?);
    }
    tokens.push(vocab.encode(Token::Query(query))?);
    finish(*vocab, tokens)
}

/// Attempts before [`gen_partial_induction`] gives up.
pub const MAX_REJECTION_ATTEMPTS: usize = 100_000;

/// Partial Induction instance by rejection sampling: the query symbol occurs
/// at least twice, with pairwise-distinct integers.
pub fn gen_partial_induction(n: usize, vocab: &TaskVocabulary, rng: &mut impl Rng) -> Result<TaskInstance> {
    expect_kind(vocab, TaskKind::PartialInduction)?;
    check_length(n, 3)?;
    if vocab.k_int < 2 {
        return Err(Error::Infeasible("distinct integers need k_int >= 2".into()));
    }
    let (m, k, ctx) = (vocab.m_sym, vocab.k_int, n - 1);
    let mut pairs = vec![(0usize, 0usize); ctx];
    for _ in 0..MAX_REJECTION_ATTEMPTS {
        for p in pairs.iter_mut() {
            *p = (rng.random_range(0..m), rng.random_range(0..k));
        }
        let query = rng.random_range(0..m);
        let mut ints: Vec<usize> = pairs.iter().filter(|p| p.0 == query).map(|p| p.1).collect();
        if ints.len() < 2 {
            continue;
        }
        ints.sort_unstable();
        if ints.windows(2).any(|w| w[0] == w[1]) {
            continue;
        }
        let mut tokens = pairs
            .iter()
            .map(|&(symbol, int)| vocab.encode(Token::Pair { symbol, int }))
            .collect::<Result<Vec<_>>>()?;
        tokens.push(vocab.encode(Token::Query(query))?);
        return finish(*vocab, tokens);
    }
    Err(Error::Infeasible(format!(
        "no valid Partial Induction instance in {MAX_REJECTION_ATTEMPTS} draws (n={n}, m={m}, k={k})"
    )))
}

/// Draws one instance of the vocabulary's task.
pub fn generate(n: usize, vocab: &TaskVocabulary, rng: &mut impl Rng) -> Result<TaskInstance> {
    match vocab.kind {
        TaskKind::Index => gen_index(n, vocab, rng),
        TaskKind::Retrieval => gen_retrieval(n, vocab, rng),
        TaskKind::PartialInduction => gen_partial_induction(n, vocab, rng),
    }
}

/// `count` instances from a generator seeded by `(seed, stream)`. Distinct
/// streams never share random numbers, which keeps train and validation sets
/// independent.
pub fn generate_dataset(
    n: usize,
    vocab: &TaskVocabulary,
    count: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<TaskInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..count).map(|_| generate(n, vocab, &mut rng)).collect()
}

fn malformed<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::MalformedInstance(msg.into()))
}

/// Exact answer and its 1-based context slot.
fn solve(vocab: &TaskVocabulary, seq: &TokenSequence) -> Result<(TokenId, usize)> {
    if seq.len() < 2 {
        return malformed("instance needs a context and a query");
    }
    let ctx = &seq.tokens()[..seq.len() - 1];
    let decoded = ctx.iter().map(|&t| vocab.decode(t)).collect::<Result<Vec<_>>>()?;
    match (vocab.kind, vocab.decode(seq.last())?) {
        (TaskKind::Index, Token::Position(j)) => {
            if j >= ctx.len() {
                return malformed(format!("queried position {j} outside context of {}", ctx.len()));
            }
            if decoded.iter().any(|t| !matches!(t, Token::Symbol(_))) {
                return malformed("Index context must contain symbols only");
            }
            Ok((ctx[j], j + 1))
        }
        (TaskKind::Retrieval, Token::Query(q)) => {
            let hits = pairs_of(&decoded, q)?;
            match hits.as_slice() {
                [(slot, int)] => Ok((vocab.answer_token(q, *int)?, slot + 1)),
                _ => malformed(format!("query symbol occurs {} times, expected once", hits.len())),
            }
        }
        (TaskKind::PartialInduction, Token::Query(q)) => {
            let hits = pairs_of(&decoded, q)?;
            if hits.len() < 2 {
                return malformed(format!(
                    "query symbol occurs {} times, expected at least twice",
                    hits.len()
                ));
            }
            let mut ints: Vec<usize> = hits.iter().map(|h| h.1).collect();
            ints.sort_unstable();
            if ints.windows(2).any(|w| w[0] == w[1]) {
                return malformed("integers at the query symbol's occurrences repeat");
            }
            let (slot, int) = hits[hits.len() - 1];
            Ok((vocab.answer_token(q, int)?, slot + 1))
        }
        (kind, last) => malformed(format!("{last:?} is not a query token for {kind}")),
    }
}

fn pairs_of(decoded: &[Token], query: usize) -> Result<Vec<(usize, usize)>> {
    let mut hits = Vec::new();
    for (slot, t) in decoded.iter().enumerate() {
        match *t {
            Token::Pair { symbol, int } if symbol == query => hits.push((slot, int)),
            Token::Pair { .. } => {}
            other => return malformed(format!("context token {other:?} is not a pair")),
        }
    }
    Ok(hits)
}

/// Exact task answer, recomputed from the tokens alone.
pub fn oracle(instance: &TaskInstance) -> Result<TokenId> {
    if instance.kind != instance.vocab.kind {
        return malformed("instance kind disagrees with its vocabulary");
    }
    solve(&instance.vocab, &instance.sequence).map(|(answer, _)| answer)
}

/// One-hot embedding: token `t` becomes the `t`-th standard basis vector.
pub fn one_hot_embed(seq: &TokenSequence) -> Result<EmbeddedSequence> {
    crate::attention::Embedding::OneHot {
        vocab_size: seq.vocab_size(),
    }
    .embed(seq)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceRecord {
    kind: TaskKind,
    tokens: Vec<TokenId>,
    answer: TokenId,
    answer_position: usize,
    vocab: VocabRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabRecord {
    m_sym: usize,
    k_int: usize,
    #[serde(default)]
    convention: AnswerConvention,
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(instances: &[TaskInstance], mut w: W) -> Result<()> {
    for inst in instances {
        let rec = InstanceRecord {
            kind: inst.kind,
            tokens: inst.sequence.tokens().to_vec(),
            answer: inst.answer,
            answer_position: inst.answer_position,
            vocab: VocabRecord {
                m_sym: inst.vocab.m_sym,
                k_int: inst.vocab.k_int,
                convention: inst.vocab.convention,
            },
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSONL dataset, re-validating every answer against the oracle.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TaskInstance>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(&line)?;
        let vocab = TaskVocabulary::new(rec.kind, rec.vocab.m_sym, rec.vocab.k_int, rec.vocab.convention)?;
        let inst = finish(vocab, rec.tokens)?;
        if inst.answer != rec.answer || inst.answer_position != rec.answer_position {
            return malformed(format!("stored answer disagrees with the oracle on `{line}`"));
        }
        out.push(inst);
    }
    Ok(out)
}

/// Debug rendering, one instance per line.
pub fn write_debug<W: Write>(instances: &[TaskInstance], mut w: W) -> Result<()> {
    for inst in instances {
        writeln!(w, "{}", inst.render())?;
    }
    Ok(())
}

/// Sampled permutation of `0..len` (test and experiment helper).
pub fn random_permutation(len: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..len).collect();
    p.shuffle(rng);
    p
}
