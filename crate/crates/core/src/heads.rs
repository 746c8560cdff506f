//! Closed-form solution heads, the n = 3 counterexample and the w_max shape
//! functions.
//!
//! Every builder takes a `sharpness` factor that multiplies the query map.
//! At sharpness 1 the logits are exactly the textbook closed forms
//! (`cos(theta (j - i))` and friends). Under one-hot embeddings the readout
//! sums attention per token, so a token repeated across the context can
//! outweigh a single best-matching position; [`solving_sharpness`] returns a
//! scale at which the best position carries more weight than all other
//! positions together.

use std::f64::consts::{E, PI};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attention::{
    attention_row, head_output_at, logit_row, rotate, Embedding, HeadSpec, OneLayerModel, Prediction, Readout,
    RotationSchedule, TokenId, TokenSequence,
};
use crate::error::{invalid, Error, Result};
use crate::tasks::{one_hot_embed, AnswerConvention, TaskKind, TaskVocabulary, Token};

/// Unit vector on the diagonal; its self inner product is 1 so the H_POS
/// logits are exactly `cos(theta (p - i))`.
pub const DIAGONAL: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

/// Logit scale at which a best position with margin `margin` over every
/// other position out-weighs all `n - 1` other positions combined.
pub fn solving_sharpness(n: usize, margin: f64) -> f64 {
    2.0 * (n.max(2) as f64).ln() / margin
}

/// Smallest logit gap between the answer and any other position for H_POS.
pub fn h_pos_margin(theta: f64) -> f64 {
    1.0 - theta.cos()
}

/// Logit gap of H_SYM^0: matching symbol (1) against the nearest codebook
/// neighbour or the zero query key.
pub fn h_sym_margin(m_sym: usize) -> f64 {
    (1.0 - (2.0 * PI / m_sym as f64).cos()).min(1.0)
}

/// Logit gap of H_MIX: adjacent occurrences at the end of the context are
/// the closest competitors.
pub fn h_mix_margin(theta2: f64, m_sym: usize) -> f64 {
    (theta2.cos() - (2.0 * theta2).cos()).min(h_sym_margin(m_sym))
}

fn set_col(m: &mut Array2<f64>, rows: usize, col: usize, v: [f64; 2]) {
    m[[rows, col]] = v[0];
    m[[rows + 1, col]] = v[1];
}

/// Codebook `v_sigma = R(2 pi / m)^sigma (1, 0)`.
pub fn symbol_code(sigma: usize, m_sym: usize) -> [f64; 2] {
    rotate([1.0, 0.0], 2.0 * PI * sigma as f64 / m_sym as f64)
}

/// H_POS with the default angle `pi / n` and unit sharpness.
pub fn build_h_pos(n: usize, vocab: &TaskVocabulary) -> Result<HeadSpec> {
    build_h_pos_with(n, vocab, PI / n as f64, 1.0)
}

/// H_POS: single plane at angle `theta`. The position token for 0-based
/// `j` queries `R(theta)^(j + 1 - n) v`; every token keys to `v`.
pub fn build_h_pos_with(n: usize, vocab: &TaskVocabulary, theta: f64, sharpness: f64) -> Result<HeadSpec> {
    if vocab.kind != TaskKind::Index {
        return invalid("H_POS needs an Index vocabulary");
    }
    if n < 1 {
        return invalid("H_POS needs n >= 1");
    }
    let d_in = vocab.size();
    let mut q = Array2::zeros((2, d_in));
    let mut k = Array2::zeros((2, d_in));
    for id in 0..d_in {
        set_col(&mut k, 0, id, DIAGONAL);
        if let Token::Position(j) = vocab.decode(id)? {
            let r = rotate(DIAGONAL, theta * (j as f64 + 1.0 - n as f64));
            set_col(&mut q, 0, id, [sharpness * r[0], sharpness * r[1]]);
        }
    }
    HeadSpec::new(q, k, RotationSchedule::from_angles(vec![theta])?)
}

fn pair_vocab(vocab: &TaskVocabulary, what: &str) -> Result<()> {
    if vocab.kind == TaskKind::Index {
        return invalid(format!("{what} needs a Retrieval or Partial Induction vocabulary"));
    }
    if vocab.m_sym < 2 {
        return invalid(format!("{what} needs at least two symbols"));
    }
    Ok(())
}

/// H_SYM^theta with unit sharpness.
pub fn build_h_sym(theta: f64, vocab: &TaskVocabulary, n: usize) -> Result<HeadSpec> {
    build_h_sym_with(theta, vocab, n, 1.0)
}

/// H_SYM^theta: pairs `sigma#i` key to `v_sigma`, query tokens key to zero,
/// and `sigma#` queries `R(theta)^(l - n) v_sigma` with `l = (n - 1) / 2`.
pub fn build_h_sym_with(theta: f64, vocab: &TaskVocabulary, n: usize, sharpness: f64) -> Result<HeadSpec> {
    pair_vocab(vocab, "H_SYM")?;
    if theta < 0.0 || !theta.is_finite() {
        return invalid(format!("H_SYM angle must be non-negative, got {theta}"));
    }
    let d_in = vocab.size();
    let l = (n as f64 - 1.0) / 2.0;
    let mut q = Array2::zeros((2, d_in));
    let mut k = Array2::zeros((2, d_in));
    for id in 0..d_in {
        match vocab.decode(id)? {
            Token::Pair { symbol, .. } => set_col(&mut k, 0, id, symbol_code(symbol, vocab.m_sym)),
            Token::Query(s) => {
                let r = rotate(symbol_code(s, vocab.m_sym), theta * (l - n as f64));
                set_col(&mut q, 0, id, [sharpness * r[0], sharpness * r[1]]);
            }
            _ => {}
        }
    }
    HeadSpec::new(q, k, RotationSchedule::from_angles(vec![theta])?)
}

/// Upper end of the accepted H_MIX angle range: `theta2 * n < 2 pi / (n m)`.
pub fn h_mix_bound(n: usize, m_sym: usize) -> f64 {
    2.0 * PI / ((n * n * m_sym) as f64)
}

/// H_MIX with unit sharpness; rejects `theta2` outside its validity range.
pub fn build_h_mix(theta2: f64, vocab: &TaskVocabulary, n: usize) -> Result<HeadSpec> {
    build_h_mix_with(theta2, vocab, n, 1.0)
}

pub fn build_h_mix_with(theta2: f64, vocab: &TaskVocabulary, n: usize, sharpness: f64) -> Result<HeadSpec> {
    pair_vocab(vocab, "H_MIX")?;
    let bound = h_mix_bound(n, vocab.m_sym);
    if !(theta2 > 0.0 && theta2 < bound) {
        return Err(Error::AngleOutOfRange {
            theta: theta2,
            bound: format!(
                "0 < theta2 * n < 2 pi / (n m), i.e. theta2 in (0, {bound:e}) for n={n}, m={}",
                vocab.m_sym
            ),
        });
    }
    build_h_mix_unchecked(theta2, vocab, sharpness)
}

/// H_MIX without the angle check, for failure-mode sweeps.
pub fn build_h_mix_unchecked(theta2: f64, vocab: &TaskVocabulary, sharpness: f64) -> Result<HeadSpec> {
    pair_vocab(vocab, "H_MIX")?;
    let d_in = vocab.size();
    let mut q = Array2::zeros((4, d_in));
    let mut k = Array2::zeros((4, d_in));
    for id in 0..d_in {
        match vocab.decode(id)? {
            Token::Pair { symbol, .. } => {
                set_col(&mut k, 0, id, symbol_code(symbol, vocab.m_sym));
                set_col(&mut k, 2, id, DIAGONAL);
            }
            Token::Query(s) => {
                let c = symbol_code(s, vocab.m_sym);
                set_col(&mut q, 0, id, [sharpness * c[0], sharpness * c[1]]);
                set_col(&mut q, 2, id, [sharpness * DIAGONAL[0], sharpness * DIAGONAL[1]]);
            }
            _ => {}
        }
    }
    HeadSpec::new(q, k, RotationSchedule::from_angles(vec![0.0, theta2])?)
}

/// One-hot embedding, identity readout.
pub fn one_hot_model(head: HeadSpec, vocab: &TaskVocabulary) -> OneLayerModel {
    OneLayerModel {
        head,
        embedding: Embedding::OneHot {
            vocab_size: vocab.size(),
        },
        readout: Readout::Identity,
    }
}

/// The n = 3 construction: a positional head (angle pi) whose attention
/// vector, read by an exact boolean output map, still solves Retrieval.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub head: HeadSpec,
    pub vocab: TaskVocabulary,
    /// Attention weights `(lambda_1, lambda_2, lambda_3)` at logits `(1, -1, 0)`.
    pub lambdas: [f64; 3],
}

/// Equality tolerance of the counterexample's output map.
pub const COUNTEREXAMPLE_TOL: f64 = 1e-12;

pub fn build_counterexample() -> Result<Counterexample> {
    let vocab = TaskVocabulary::retrieval(2, 2)?;
    let d_in = vocab.size();
    let mut q = Array2::zeros((2, d_in));
    let mut k = Array2::zeros((2, d_in));
    for id in 0..d_in {
        match vocab.decode(id)? {
            Token::Pair { .. } => set_col(&mut k, 0, id, [1.0, 0.0]),
            Token::Query(_) => set_col(&mut q, 0, id, [1.0, 0.0]),
            _ => {}
        }
    }
    let head = HeadSpec::new(q, k, RotationSchedule::from_angles(vec![PI])?)?;
    let sigma = E + 1.0 / E + 1.0;
    Ok(Counterexample {
        head,
        vocab,
        lambdas: [E / sigma, 1.0 / (E * sigma), 1.0 / sigma],
    })
}

impl Counterexample {
    /// Attention vector `gamma`: attention mass per vocabulary token.
    pub fn gamma(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        if seq.len() != 3 {
            return Err(Error::DimensionMismatch {
                what: "counterexample sequence length",
                expected: 3,
                got: seq.len(),
            });
        }
        Ok(head_output_at(&self.head, &one_hot_embed(seq)?, 3)?.to_vec())
    }

    /// `F(gamma)`: the pair `sigma#alpha` is selected iff
    /// `gamma(sigma#) = lambda_3` and `gamma(sigma#alpha)` is `lambda_1` or `lambda_2`.
    pub fn output_map(&self, gamma: &[f64]) -> Result<Vec<bool>> {
        let eq = |a: f64, b: f64| (a - b).abs() <= COUNTEREXAMPLE_TOL;
        let [l1, l2, l3] = self.lambdas;
        (0..self.vocab.size())
            .map(|id| {
                Ok(match self.vocab.decode(id)? {
                    Token::Pair { symbol, .. } => {
                        let query = self.vocab.encode(Token::Query(symbol))?;
                        eq(gamma[query], l3) && (eq(gamma[id], l1) || eq(gamma[id], l2))
                    }
                    _ => false,
                })
            })
            .collect()
    }

    pub fn predict(&self, seq: &TokenSequence) -> Result<Prediction> {
        let selected: Vec<TokenId> = self
            .output_map(&self.gamma(seq)?)?
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(id, _)| id)
            .collect();
        Ok(match selected.as_slice() {
            [token] => Prediction::Unique {
                token: *token,
                margin: 1.0,
            },
            _ => Prediction::Tied { candidates: selected },
        })
    }

    /// Every valid length-3 Retrieval input over `{a, b} x {0, 1}`.
    pub fn valid_inputs(&self) -> Result<Vec<TokenSequence>> {
        let v = &self.vocab;
        let mut out = Vec::new();
        for s1 in 0..2 {
            for s2 in 0..2 {
                for i1 in 0..2 {
                    for i2 in 0..2 {
                        for q in 0..2 {
                            if (s1 == q) as u8 + (s2 == q) as u8 != 1 {
                                continue;
                            }
                            let toks = vec![
                                v.encode(Token::Pair { symbol: s1, int: i1 })?,
                                v.encode(Token::Pair { symbol: s2, int: i2 })?,
                                v.encode(Token::Query(q))?,
                            ];
                            out.push(TokenSequence::new(toks, v.size())?);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Peak attention weight of H_POS (angle `theta`) when the answer sits at
/// `j`: `e / sum_{i=1..n} exp(cos(theta (j - i)))`.
pub fn w_max_pos(j: usize, n: usize, theta: f64) -> Result<f64> {
    if j < 1 || j >= n {
        return Err(Error::PositionOutOfRange {
            pos: j,
            len: n.saturating_sub(1),
        });
    }
    let ceiling = 2.0 * PI / n as f64;
    if !(theta < ceiling) {
        return Err(Error::AngleOutOfRange {
            theta,
            bound: format!("theta < 2 pi / n = {ceiling}"),
        });
    }
    let denom: f64 = (1..=n).map(|i| (theta * (j as f64 - i as f64)).cos().exp()).sum();
    Ok(E / denom)
}

/// `nu_0(j) = exp(cos(pi j / n + pi / 2))`.
pub fn nu0(j: usize, n: usize) -> f64 {
    (PI * j as f64 / n as f64 + PI / 2.0).cos().exp()
}

/// Peak attention weight of the simplified two-token symbolic head with the
/// answer at `l`: `nu_1(l) / (S + nu_1(l) - nu_0(l))`, `nu_1 = 1 / nu_0`.
pub fn w_max_sym_simplified(l: usize, n: usize) -> Result<f64> {
    if n < 5 {
        return invalid(format!("the symbolic w_max formula needs n >= 5, got {n}"));
    }
    if l < 1 || l >= n {
        return Err(Error::PositionOutOfRange { pos: l, len: n - 1 });
    }
    let s: f64 = (1..n).map(|j| nu0(j, n)).sum();
    let (n0, n1) = (nu0(l, n), 1.0 / nu0(l, n));
    Ok(n1 / (s + n1 - n0))
}

/// `w_max_pos(j)` for `j = 1..n-1`.
pub fn w_max_pos_profile(n: usize, theta: f64) -> Result<Vec<f64>> {
    (1..n).map(|j| w_max_pos(j, n, theta)).collect()
}

/// `w_max_sym_simplified(l)` for `l = 1..n-1`.
pub fn w_max_sym_profile(n: usize) -> Result<Vec<f64>> {
    (1..n).map(|l| w_max_sym_simplified(l, n)).collect()
}

/// Measured peak attention weight of the unit-sharpness H_POS on the Index
/// input `seq`.
pub fn measured_peak_attention(head: &HeadSpec, seq: &TokenSequence) -> Result<f64> {
    let x = one_hot_embed(seq)?;
    let attn = attention_row(&logit_row(head, &x, x.len())?)?;
    Ok(attn.weights().iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    UShaped,
    InvertedUShaped,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeVerdict {
    pub kind: ShapeKind,
    /// 1-based index of the first element of the extreme plateau.
    pub breakpoint: Option<usize>,
}

pub const SHAPE_TOL: f64 = 1e-12;

/// Strictly down to one interior plateau of minima, then strictly up.
fn u_breakpoint(values: &[f64], tol: f64) -> Option<usize> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let first = values.iter().position(|&v| v - min <= tol)?;
    let last = values.iter().rposition(|&v| v - min <= tol)?;
    if first == 0 || last == values.len() - 1 {
        return None;
    }
    let plateau_ok = values[first..=last].iter().all(|&v| v - min <= tol);
    let down = values[..=first].windows(2).all(|w| w[1] < w[0] - tol);
    let up = values[last..].windows(2).all(|w| w[1] > w[0] + tol);
    (plateau_ok && down && up).then_some(first + 1)
}

pub fn classify_shape(values: &[f64]) -> Result<ShapeVerdict> {
    classify_shape_with(values, SHAPE_TOL)
}

pub fn classify_shape_with(values: &[f64], tol: f64) -> Result<ShapeVerdict> {
    if values.len() < 3 {
        return invalid(format!(
            "shape classification needs at least 3 values, got {}",
            values.len()
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return invalid("shape classification needs finite values");
    }
    if let Some(b) = u_breakpoint(values, tol) {
        return Ok(ShapeVerdict {
            kind: ShapeKind::UShaped,
            breakpoint: Some(b),
        });
    }
    let neg: Vec<f64> = values.iter().map(|v| -v).collect();
    if let Some(b) = u_breakpoint(&neg, tol) {
        return Ok(ShapeVerdict {
            kind: ShapeKind::InvertedUShaped,
            breakpoint: Some(b),
        });
    }
    Ok(ShapeVerdict {
        kind: ShapeKind::Neither,
        breakpoint: None,
    })
}

/// Shape of a sampled profile: non-increasing to the minimum and
/// non-decreasing after it, each step allowed to move the wrong way by at
/// most `tol`, with both ends more than `tol` above the minimum (mirrored for
/// inverted U). Use `sampling_tolerance` for accuracies estimated from data.
pub fn classify_sampled_shape(values: &[f64], tol: f64) -> Result<ShapeVerdict> {
    if values.len() < 3 {
        return invalid(format!(
            "shape classification needs at least 3 values, got {}",
            values.len()
        ));
    }
    if values.iter().any(|v| !v.is_finite()) || !(tol >= 0.0) {
        return invalid("shape classification needs finite values and tol >= 0");
    }
    let valley = |v: &[f64]| -> Option<usize> {
        let (m, &min) = v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
        let down = v[..=m].windows(2).all(|w| w[1] <= w[0] + tol);
        let up = v[m..].windows(2).all(|w| w[1] >= w[0] - tol);
        let ends = v[0] - min > tol && v[v.len() - 1] - min > tol;
        (down && up && ends).then_some(m + 1)
    };
    if let Some(b) = valley(values) {
        return Ok(ShapeVerdict {
            kind: ShapeKind::UShaped,
            breakpoint: Some(b),
        });
    }
    let neg: Vec<f64> = values.iter().map(|v| -v).collect();
    if let Some(b) = valley(&neg) {
        return Ok(ShapeVerdict {
            kind: ShapeKind::InvertedUShaped,
            breakpoint: Some(b),
        });
    }
    Ok(ShapeVerdict {
        kind: ShapeKind::Neither,
        breakpoint: None,
    })
}

/// Three worst-case binomial standard errors of an accuracy estimated from
/// `samples` draws.
pub fn sampling_tolerance(samples: usize) -> f64 {
    3.0 * 0.5 / (samples.max(1) as f64).sqrt()
}

/// Centered 3-point moving average; the two endpoints average their two
/// available neighbours.
pub fn smooth3(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Answer convention used by every closed-form head.
pub const THEORY_CONVENTION: AnswerConvention = AnswerConvention::Composite;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{frequency_decompose, model_predict};
    use crate::behavior::{is_positional, is_symbolic, logit_matrix, permutation_output_invariance};
    use crate::tasks::{gen_index, gen_partial_induction, gen_retrieval, oracle, random_permutation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn h_pos_logits_are_cosines() {
        let n = 12;
        let vocab = TaskVocabulary::index(4, n - 1).unwrap();
        let head = build_h_pos(n, &vocab).unwrap();
        let theta = PI / n as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let inst = gen_index(n, &vocab, &mut rng).unwrap();
            let p = inst.answer_position;
            let x = one_hot_embed(&inst.sequence).unwrap();
            let row = logit_row(&head, &x, n).unwrap();
            for i in 1..=n {
                let want = (theta * (p as f64 - i as f64)).cos();
                assert!((row.values()[i - 1] - want).abs() <= 1e-12);
            }
            assert!((row.values()[p - 1] - 1.0).abs() <= 1e-15);
            assert!(is_positional(&logit_matrix(&head, &x).unwrap(), 1e-12));
        }
    }

    #[test]
    fn h_pos_solves_index_up_to_64() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [2, 3, 9, 32, 33, 64] {
            let vocab = TaskVocabulary::index(16, n - 1).unwrap();
            let theta = PI / n as f64;
            let head = build_h_pos_with(n, &vocab, theta, solving_sharpness(n, h_pos_margin(theta))).unwrap();
            let model = one_hot_model(head, &vocab);
            for _ in 0..100 {
                let inst = gen_index(n, &vocab, &mut rng).unwrap();
                assert_eq!(
                    model_predict(&model, &inst.sequence).unwrap().token(),
                    Some(inst.answer),
                    "n={n}"
                );
            }
        }
    }

    #[test]
    fn tripled_angle_breaks_h_pos_at_multiples_of_three() {
        // cos(3 pi (p - i) / n) reaches 1 again at |p - i| = 2n/3.
        let n = 33;
        let vocab = TaskVocabulary::index(16, n - 1).unwrap();
        let theta = 3.0 * PI / n as f64;
        let head = build_h_pos_with(n, &vocab, theta, solving_sharpness(n, h_pos_margin(PI / n as f64))).unwrap();
        let model = one_hot_model(head, &vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let wrong = (0..200)
            .filter(|_| {
                let inst = gen_index(n, &vocab, &mut rng).unwrap();
                model_predict(&model, &inst.sequence).unwrap().token() != Some(inst.answer)
            })
            .count();
        assert!(wrong > 0);
    }

    #[test]
    fn h_pos_is_not_symbolic_and_flips_under_swaps() {
        let n = 8;
        let vocab = TaskVocabulary::index(4, n - 1).unwrap();
        let head = build_h_pos_with(
            n,
            &vocab,
            PI / n as f64,
            solving_sharpness(n, h_pos_margin(PI / n as f64)),
        )
        .unwrap();
        let toks: Vec<usize> = vec![0, 1, 2, 3, 0, 1, 2, vocab.encode(Token::Position(2)).unwrap()];
        let seq = TokenSequence::new(toks, vocab.size()).unwrap();
        let x = one_hot_embed(&seq).unwrap();
        assert!(!is_symbolic(&logit_matrix(&head, &x).unwrap(), 1e-9));
        let model = one_hot_model(head, &vocab);
        // Swap slot 2 (symbol c) with slot 1 (symbol b).
        let perm = [0, 2, 1, 3, 4, 5, 6];
        assert!(!permutation_output_invariance(&model, &seq, &perm).unwrap());
        let ident: Vec<usize> = (0..7).collect();
        assert!(permutation_output_invariance(&model, &seq, &ident).unwrap());
    }

    #[test]
    fn h_sym_zero_is_symbolic_and_solves_retrieval() {
        let n = 32;
        let vocab = TaskVocabulary::retrieval(16, 32).unwrap();
        let head = build_h_sym_with(0.0, &vocab, n, solving_sharpness(n, h_sym_margin(16))).unwrap();
        let model = one_hot_model(head.clone(), &vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let inst = gen_retrieval(n, &vocab, &mut rng).unwrap();
            let x = one_hot_embed(&inst.sequence).unwrap();
            assert!(is_symbolic(&logit_matrix(&head, &x).unwrap(), 1e-12));
            assert_eq!(
                model_predict(&model, &inst.sequence).unwrap().token(),
                Some(inst.answer)
            );
            let perm = random_permutation(n - 1, &mut rng);
            assert!(permutation_output_invariance(&model, &inst.sequence, &perm).unwrap());
        }
    }

    #[test]
    fn h_sym_positive_angle_is_not_symbolic() {
        let n = 10;
        let vocab = TaskVocabulary::retrieval(4, 3).unwrap();
        let head = build_h_sym(0.3, &vocab, n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inst = gen_retrieval(n, &vocab, &mut rng).unwrap();
        let x = one_hot_embed(&inst.sequence).unwrap();
        assert!(!is_symbolic(&logit_matrix(&head, &x).unwrap(), 1e-9));
    }

    #[test]
    fn h_mix_solves_partial_induction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [3, 8, 16] {
            let vocab = TaskVocabulary::partial_induction(4, 8).unwrap();
            let theta2 = 0.5 * h_mix_bound(n, 4);
            let head = build_h_mix_with(theta2, &vocab, n, solving_sharpness(n, h_mix_margin(theta2, 4))).unwrap();
            let model = one_hot_model(head.clone(), &vocab);
            for _ in 0..100 {
                let inst = gen_partial_induction(n, &vocab, &mut rng).unwrap();
                assert_eq!(
                    model_predict(&model, &inst.sequence).unwrap().token(),
                    Some(oracle(&inst).unwrap()),
                    "n={n}"
                );
            }
        }
    }

    #[test]
    fn h_mix_rejects_out_of_range_and_mixes_behaviors() {
        let vocab = TaskVocabulary::partial_induction(4, 8).unwrap();
        let n = 16;
        let bound = h_mix_bound(n, 4);
        assert!(matches!(
            build_h_mix(bound, &vocab, n),
            Err(Error::AngleOutOfRange { .. })
        ));
        assert!(matches!(
            build_h_mix(0.0, &vocab, n),
            Err(Error::AngleOutOfRange { .. })
        ));
        let head = build_h_mix(0.5 * bound, &vocab, n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = gen_partial_induction(n, &vocab, &mut rng).unwrap();
        let x = one_hot_embed(&inst.sequence).unwrap();
        let m = logit_matrix(&head, &x).unwrap();
        assert!(!is_positional(&m, 1e-15));
        assert!(!is_symbolic(&m, 1e-15));
    }

    #[test]
    fn h_mix_planes_split_symbol_and_position() {
        let vocab = TaskVocabulary::partial_induction(3, 4).unwrap();
        let n = 6;
        let theta2 = 0.5 * h_mix_bound(n, 3);
        let head = build_h_mix(theta2, &vocab, n).unwrap();
        // Every context token carries symbol b, query b#.
        let mut toks: Vec<usize> = (0..n - 1)
            .map(|i| vocab.encode(Token::Pair { symbol: 1, int: i % 4 }).unwrap())
            .collect();
        toks.push(vocab.encode(Token::Query(1)).unwrap());
        let seq = TokenSequence::new(toks, vocab.size()).unwrap();
        let x = one_hot_embed(&seq).unwrap();
        let dec = frequency_decompose(&head, &x, n).unwrap();
        for k in 1..n {
            assert!((dec.rows[0].values()[k - 1] - 1.0).abs() <= 1e-12);
            let want = (theta2 * (n - k) as f64).cos();
            assert!((dec.rows[1].values()[k - 1] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn counterexample_solves_retrieval_positionally() {
        let ce = build_counterexample().unwrap();
        let inputs = ce.valid_inputs().unwrap();
        assert_eq!(inputs.len(), 16);
        for seq in &inputs {
            let x = one_hot_embed(seq).unwrap();
            let row = logit_row(&ce.head, &x, 3).unwrap();
            for (got, want) in row.values().iter().zip([1.0, -1.0, 0.0]) {
                assert!((got - want).abs() <= 1e-12);
            }
            assert!(is_positional(&logit_matrix(&ce.head, &x).unwrap(), 1e-12));
            let answer = crate::tasks::TaskInstance {
                kind: TaskKind::Retrieval,
                vocab: ce.vocab,
                sequence: seq.clone(),
                answer: 0,
                answer_position: 0,
            };
            assert_eq!(ce.predict(seq).unwrap().token(), Some(oracle(&answer).unwrap()));
        }
        // (a#1, b#0, a#) selects a#1.
        let v = ce.vocab;
        let seq = TokenSequence::new(
            vec![
                v.encode(Token::Pair { symbol: 0, int: 1 }).unwrap(),
                v.encode(Token::Pair { symbol: 1, int: 0 }).unwrap(),
                v.encode(Token::Query(0)).unwrap(),
            ],
            v.size(),
        )
        .unwrap();
        assert_eq!(v.render(ce.predict(&seq).unwrap().token().unwrap()), "a#1");
        // A twice-occurring pair collects (e + 1/e) / sigma.
        let twice = TokenSequence::new(vec![seq.tokens()[0], seq.tokens()[0], seq.tokens()[2]], v.size()).unwrap();
        let g = ce.gamma(&twice).unwrap();
        let sigma = E + 1.0 / E + 1.0;
        assert!((g[seq.tokens()[0]] - (E + 1.0 / E) / sigma).abs() <= 1e-15);
    }

    #[test]
    fn w_max_pos_examples() {
        let got = w_max_pos(1, 2, PI / 2.0).unwrap();
        assert!((got - E / (E + 1.0)).abs() <= 1e-15);
        let n = 33;
        let theta = PI / 33.0;
        assert!(w_max_pos(17, n, theta).unwrap() < w_max_pos(1, n, theta).unwrap());
        assert!(w_max_pos(1, 8, 2.0 * PI / 8.0).is_err());
        assert!(w_max_pos(8, 8, 0.1).is_err());
    }

    #[test]
    fn w_max_pos_matches_measured_peak() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 5, 16, 33, 64] {
            let vocab = TaskVocabulary::index(5, n - 1).unwrap();
            let head = build_h_pos(n, &vocab).unwrap();
            for _ in 0..10 {
                let inst = gen_index(n, &vocab, &mut rng).unwrap();
                let want = w_max_pos(inst.answer_position, n, PI / n as f64).unwrap();
                assert!((measured_peak_attention(&head, &inst.sequence).unwrap() - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn w_max_sym_identities() {
        for n in [5, 8, 33] {
            for l in 1..n {
                assert!((nu0(l, n) * (1.0 / nu0(l, n)) - 1.0).abs() <= 1e-15);
            }
        }
        // Term-by-term oracle at n = 5, l = 1.
        let nu = |j: f64| (-(PI * j / 5.0).sin()).exp();
        let s = nu(1.0) + nu(2.0) + nu(3.0) + nu(4.0);
        let want = (1.0 / nu(1.0)) / (s + 1.0 / nu(1.0) - nu(1.0));
        assert!((w_max_sym_simplified(1, 5).unwrap() - want).abs() <= 1e-15);
        assert!(w_max_sym_simplified(1, 4).is_err());
        let prof = w_max_sym_profile(33).unwrap();
        assert!(prof[..16].windows(2).all(|w| w[1] > w[0]));
        assert!(prof[16..].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn shape_examples() {
        let u = classify_shape(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(
            u,
            ShapeVerdict {
                kind: ShapeKind::UShaped,
                breakpoint: Some(2)
            }
        );
        assert_eq!(
            classify_shape(&[1.0, 3.0, 1.0]).unwrap().kind,
            ShapeKind::InvertedUShaped
        );
        assert_eq!(classify_shape(&[1.0; 6]).unwrap().kind, ShapeKind::Neither);
        assert_eq!(classify_shape(&[1.0, 2.0, 3.0]).unwrap().kind, ShapeKind::Neither);
        assert_eq!(classify_shape(&[3.0, 1.0, 2.0, 1.5]).unwrap().kind, ShapeKind::Neither);
        // Interior plateau is fine.
        let p = classify_shape(&[4.0, 2.0, 1.0, 1.0, 3.0]).unwrap();
        assert_eq!(
            p,
            ShapeVerdict {
                kind: ShapeKind::UShaped,
                breakpoint: Some(3)
            }
        );
        assert!(classify_shape(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn sampled_shapes_tolerate_small_wiggles() {
        let u = [0.6, 0.5, 0.2, 0.17, 0.18, 0.16, 0.17, 0.2, 0.5, 0.6];
        assert_eq!(classify_shape(&u).unwrap().kind, ShapeKind::Neither);
        assert_eq!(
            classify_sampled_shape(&u, 0.02).unwrap(),
            ShapeVerdict {
                kind: ShapeKind::UShaped,
                breakpoint: Some(6)
            }
        );
        assert_eq!(classify_sampled_shape(&u, 0.005).unwrap().kind, ShapeKind::Neither);
        let inv: Vec<f64> = u.iter().map(|v| 1.0 - v).collect();
        assert_eq!(
            classify_sampled_shape(&inv, 0.02).unwrap().kind,
            ShapeKind::InvertedUShaped
        );
        // Ends must clear the trough by more than the tolerance.
        assert_eq!(
            classify_sampled_shape(&[0.21, 0.2, 0.2, 0.21], 0.02).unwrap().kind,
            ShapeKind::Neither
        );
        assert_eq!(
            classify_sampled_shape(&[0.3; 8], 0.02).unwrap().kind,
            ShapeKind::Neither
        );
        assert_eq!(
            classify_sampled_shape(&[0.1, 0.2, 0.3, 0.4], 0.02).unwrap().kind,
            ShapeKind::Neither
        );
        assert!(classify_sampled_shape(&[0.1, 0.2, 0.3], -1.0).is_err());
        assert!((sampling_tolerance(10_000) - 0.015).abs() < 1e-15);
    }

    #[test]
    fn closed_form_shapes_on_odd_grid() {
        for n in [5, 9, 17, 33, 65] {
            let pos = classify_shape(&w_max_pos_profile(n, PI / n as f64).unwrap()).unwrap();
            assert_eq!(pos.kind, ShapeKind::UShaped, "n={n}");
            assert_eq!(pos.breakpoint, Some((n + 1) / 2));
            let sym = classify_shape(&w_max_sym_profile(n).unwrap()).unwrap();
            assert_eq!(sym.kind, ShapeKind::InvertedUShaped, "n={n}");
        }
    }

    #[test]
    fn smoothing() {
        assert_eq!(smooth3(&[0.0, 3.0, 0.0, 3.0]), vec![1.5, 1.0, 2.0, 1.5]);
        assert_eq!(smooth3(&[2.0]), vec![2.0]);
    }
}
