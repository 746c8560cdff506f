//! Positional/symbolic scores of constructed, checkpointed or random heads.

use std::path::PathBuf;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{EmbeddedSequence, Embedding, HeadSpec, RotationSchedule, TokenSequence};
use crate::error::{invalid, Error, Result};
use crate::heads::{build_h_mix_with, build_h_pos, build_h_sym, h_mix_bound, THEORY_CONVENTION};
use crate::metric::{final_query_attention, per_frequency_ps_scores, prefix_partition, ps_scores, SwapSet};
use crate::tasks::{generate, one_hot_embed, AnswerConvention, TaskKind, TaskVocabulary};
use crate::trainer::Checkpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeadSource {
    /// H_POS, H_SYM^0, a uniform-attention head and H_MIX.
    Theory,
    Checkpoint {
        path: PathBuf,
    },
    /// Gaussian Q and K over Gaussian inputs.
    Random {
        count: usize,
        d_in: usize,
        /// Planes on the standard schedule with base 10000.
        planes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub source: HeadSource,
    /// Sequence length including the query.
    pub n: usize,
    /// Context blocks; the query forms one more block.
    pub blocks: usize,
    /// Blocks taking part in swaps.
    pub swap_blocks: usize,
    /// Inputs averaged per head.
    pub inputs: usize,
    pub tau: Option<f64>,
    pub m_sym: usize,
    pub k_int: usize,
    /// Answer convention of checkpointed Retrieval models.
    pub checkpoint_convention: AnswerConvention,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            source: HeadSource::Theory,
            n: 33,
            blocks: 8,
            swap_blocks: 8,
            inputs: 16,
            tau: None,
            m_sym: 16,
            k_int: 32,
            checkpoint_convention: AnswerConvention::Integer,
        }
    }
}

/// `frequency = None` is the aggregate over the whole head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub head: String,
    pub frequency: Option<usize>,
    pub theta: Option<f64>,
    pub s_pos: f64,
    pub s_sym: f64,
}

/// A head plus the inputs it is scored on.
pub struct ScoredHead {
    pub name: String,
    pub head: HeadSpec,
    pub inputs: Vec<EmbeddedSequence>,
}

type EmbedFn<'a> = &'a dyn Fn(&TokenSequence) -> Result<EmbeddedSequence>;

fn task_inputs(
    vocab: &TaskVocabulary,
    cfg: &ScoreConfig,
    rng: &mut ChaCha8Rng,
    embed: EmbedFn,
) -> Result<Vec<EmbeddedSequence>> {
    (0..cfg.inputs)
        .map(|_| embed(&generate(cfg.n, vocab, rng)?.sequence))
        .collect()
}

pub fn collect_heads(cfg: &ScoreConfig, seed: u64) -> Result<Vec<ScoredHead>> {
    if cfg.inputs == 0 {
        return invalid("score needs at least one input per head");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n;
    let one_hot = |s: &TokenSequence| one_hot_embed(s);
    match &cfg.source {
        HeadSource::Theory => {
            let iv = TaskVocabulary::index(cfg.m_sym, n - 1)?;
            let rv = TaskVocabulary::new(TaskKind::Retrieval, cfg.m_sym, cfg.k_int, THEORY_CONVENTION)?;
            let mv = TaskVocabulary::new(TaskKind::PartialInduction, cfg.m_sym, cfg.k_int, THEORY_CONVENTION)?;
            let retrieval_inputs = task_inputs(&rv, cfg, &mut rng, &one_hot)?;
            let uniform = HeadSpec::new(
                Array2::zeros((2, rv.size())),
                Array2::zeros((2, rv.size())),
                RotationSchedule::nope(1)?,
            )?;
            Ok(vec![
                ScoredHead {
                    name: "h_pos".into(),
                    head: build_h_pos(n, &iv)?,
                    inputs: task_inputs(&iv, cfg, &mut rng, &one_hot)?,
                },
                ScoredHead {
                    name: "h_sym".into(),
                    head: build_h_sym(0.0, &rv, n)?,
                    inputs: retrieval_inputs.clone(),
                },
                ScoredHead {
                    name: "uniform".into(),
                    head: uniform,
                    inputs: retrieval_inputs,
                },
                ScoredHead {
                    name: "h_mix".into(),
                    head: build_h_mix_with(0.5 * h_mix_bound(n, cfg.m_sym), &mv, n, 1.0)?,
                    inputs: task_inputs(&mv, cfg, &mut rng, &one_hot)?,
                },
            ])
        }
        HeadSource::Checkpoint { path } => {
            let text = std::fs::read_to_string(path)?;
            let ck: Checkpoint = serde_json::from_str(&text)?;
            let model = ck.to_model()?;
            let vocab = match ck.task {
                TaskKind::Index => TaskVocabulary::index(cfg.m_sym, cfg.k_int)?,
                kind => TaskVocabulary::new(kind, cfg.m_sym, cfg.k_int, cfg.checkpoint_convention)?,
            };
            if vocab.size() != model.vocab_size() {
                return Err(Error::DimensionMismatch {
                    what: "checkpoint vocabulary",
                    expected: vocab.size(),
                    got: model.vocab_size(),
                });
            }
            let table = Embedding::Table(model.embedding.clone());
            let embed = |s: &TokenSequence| table.embed(s);
            Ok(vec![ScoredHead {
                name: format!("{}@{}", ck.task.name(), ck.base_angle),
                head: model.head_spec()?,
                inputs: task_inputs(&vocab, cfg, &mut rng, &embed)?,
            }])
        }
        HeadSource::Random { count, d_in, planes } => {
            if *count == 0 || *d_in == 0 || *planes == 0 {
                return invalid("random heads need positive count, d_in and planes");
            }
            let normal = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let schedule = RotationSchedule::from_base(10_000.0, 2 * planes)?;
            (0..*count)
                .map(|h| {
                    let scale = 1.0 / (*d_in as f64).sqrt();
                    let q = Array2::from_shape_fn((2 * planes, *d_in), |_| scale * normal.sample(&mut rng));
                    let k = Array2::from_shape_fn((2 * planes, *d_in), |_| scale * normal.sample(&mut rng));
                    let head = HeadSpec::new(q, k, schedule.clone())?;
                    let inputs = (0..cfg.inputs)
                        .map(|_| EmbeddedSequence::new(Array2::from_shape_fn((n, *d_in), |_| normal.sample(&mut rng))))
                        .collect::<Result<_>>()?;
                    Ok(ScoredHead {
                        name: format!("random_{h}"),
                        head,
                        inputs,
                    })
                })
                .collect()
        }
    }
}

/// Aggregate row plus one row per plane for every head, averaged over inputs.
pub fn score_heads(cfg: &ScoreConfig, seed: u64) -> Result<Vec<ScoreRow>> {
    let part = prefix_partition(cfg.n, cfg.blocks)?;
    let swaps = SwapSet::uniformly_spaced(cfg.blocks, cfg.swap_blocks.min(cfg.blocks), part.blocks())?;
    let mut rows = Vec::new();
    for sh in collect_heads(cfg, seed)? {
        let k = sh.inputs.len() as f64;
        let planes = sh.head.planes();
        let (mut agg_p, mut agg_s) = (0.0, 0.0);
        let mut per = vec![(0.0, 0.0); planes];
        for x in &sh.inputs {
            let r = ps_scores(final_query_attention(&sh.head), x, &part, &swaps, cfg.tau)?.score;
            agg_p += r.s_pos / k;
            agg_s += r.s_sym / k;
            let f = per_frequency_ps_scores(&sh.head, x, &part, &swaps, cfg.tau)?;
            for (acc, p) in per.iter_mut().zip(&f.planes) {
                acc.0 += p.score.s_pos / k;
                acc.1 += p.score.s_sym / k;
            }
        }
        rows.push(ScoreRow {
            head: sh.name.clone(),
            frequency: None,
            theta: None,
            s_pos: agg_p,
            s_sym: agg_s,
        });
        for (t, (p, s)) in per.into_iter().enumerate() {
            rows.push(ScoreRow {
                head: sh.name.clone(),
                frequency: Some(t),
                theta: Some(sh.head.schedule().angles()[t]),
                s_pos: p,
                s_sym: s,
            });
        }
    }
    Ok(rows)
}
