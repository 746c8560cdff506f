//! Theorem-level property suite behind `verify-theory`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{model_predict, HeadSpec, TokenSequence};
use crate::behavior::{
    delta_pos_norm_sq, delta_sym_norm_sq, enumerated_delta_norms, exclusion_fuzz, is_positional, is_symbolic,
    logit_matrix, random_logit_matrix, FuzzRecord,
};
use crate::error::{invalid, Result};
use crate::heads::{
    build_counterexample, build_h_mix_with, build_h_pos_with, build_h_sym_with, classify_shape, h_mix_bound,
    h_mix_margin, h_pos_margin, h_sym_margin, measured_peak_attention, one_hot_model, solving_sharpness, w_max_pos,
    w_max_pos_profile, w_max_sym_profile, ShapeKind,
};
use crate::tasks::{generate, one_hot_embed, oracle, TaskInstance, TaskKind, TaskVocabulary, Token};

/// Tolerance of the behaviour predicates on constructed heads.
pub const PREDICATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub fuzz_samples: usize,
    pub fuzz_min_prefix: usize,
    pub fuzz_max_prefix: usize,
    pub enumeration_max_prefix: usize,
    pub enumeration_samples: usize,
    pub instances: usize,
    /// Lengths at which H_POS must solve Index.
    pub pos_lengths: Vec<usize>,
    pub sym_length: usize,
    pub mix_length: usize,
    pub m_sym: usize,
    pub k_int: usize,
    pub shape_lengths: Vec<usize>,
    /// Replace H_POS's angle with `3 pi / n`, beyond its validity ceiling.
    pub corrupt_h_pos: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            fuzz_samples: 10_000,
            fuzz_min_prefix: 2,
            fuzz_max_prefix: 12,
            enumeration_max_prefix: 6,
            enumeration_samples: 20,
            instances: 100,
            pos_lengths: vec![9, 32, 33, 64],
            sym_length: 32,
            mix_length: 16,
            m_sym: 16,
            k_int: 32,
            shape_lengths: vec![5, 9, 17, 33, 65],
            corrupt_h_pos: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Nothing was checked; counts as not passing.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    pub checked: usize,
    pub failures: usize,
    pub detail: String,
}

impl CheckResult {
    fn tally(name: &str, checked: usize, failures: usize, detail: String) -> Self {
        let status = match (checked, failures) {
            (0, _) => CheckStatus::Skipped,
            (_, 0) => CheckStatus::Pass,
            _ => CheckStatus::Fail,
        };
        Self {
            name: name.into(),
            status,
            checked,
            failures,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    #[serde(skip)]
    pub fuzz: Vec<FuzzRecord>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status == CheckStatus::Pass)
    }

    /// Names of checks that failed or were skipped.
    pub fn not_passed(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.status != CheckStatus::Pass)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn verify_theory(cfg: &VerifyConfig, seed: u64) -> Result<VerifyReport> {
    if cfg.fuzz_min_prefix == 0 || cfg.fuzz_min_prefix > cfg.fuzz_max_prefix {
        return invalid("fuzz prefix range must be non-empty and positive");
    }
    let mut checks = Vec::new();
    let fuzz = exclusion_fuzz(seed, cfg.fuzz_samples, cfg.fuzz_min_prefix..=cfg.fuzz_max_prefix)?;
    let worst = fuzz
        .iter()
        .map(|r| r.var_lambda - r.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(CheckResult::tally(
        "exclusion_fuzz",
        fuzz.len(),
        fuzz.iter().filter(|r| !r.holds).count(),
        format!("max(var - bound) = {worst:e}"),
    ));
    checks.push(enumeration_check(cfg, seed)?);
    checks.push(h_pos_check(cfg, seed)?);
    checks.push(h_sym_check(cfg, seed)?);
    checks.push(h_mix_check(cfg, seed)?);
    checks.push(counterexample_check()?);
    checks.extend(shape_checks(cfg)?);
    Ok(VerifyReport { checks, fuzz })
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
}

fn enumeration_check(cfg: &VerifyConfig, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (mut checked, mut failures) = (0, 0);
    for s in 1..=cfg.enumeration_max_prefix {
        for _ in 0..cfg.enumeration_samples {
            let m = random_logit_matrix(&mut rng, s);
            let (pos, sym) = enumerated_delta_norms(&m)?;
            checked += 1;
            failures += usize::from(!(rel_close(pos, delta_pos_norm_sq(&m)) && rel_close(sym, delta_sym_norm_sq(&m))));
        }
    }
    Ok(CheckResult::tally(
        "exclusion_enumeration",
        checked,
        failures,
        format!("prefixes 1..={}", cfg.enumeration_max_prefix),
    ))
}

/// Accuracy and behaviour-predicate outcomes of a one-hot head over random
/// instances.
struct Solve {
    wrong: usize,
    positional: usize,
    symbolic: usize,
    total: usize,
}

fn solve(head: &HeadSpec, vocab: &TaskVocabulary, n: usize, count: usize, rng: &mut impl Rng) -> Result<Solve> {
    let model = one_hot_model(head.clone(), vocab);
    let mut s = Solve {
        wrong: 0,
        positional: 0,
        symbolic: 0,
        total: count,
    };
    for _ in 0..count {
        let inst = generate(n, vocab, rng)?;
        let pred = model_predict(&model, &inst.sequence)?;
        s.wrong += usize::from(pred.token() != Some(oracle(&inst)?));
        let m = logit_matrix(head, &one_hot_embed(&inst.sequence)?)?;
        s.positional += usize::from(is_positional(&m, PREDICATE_TOL));
        s.symbolic += usize::from(is_symbolic(&m, PREDICATE_TOL));
    }
    Ok(s)
}

fn h_pos_check(cfg: &VerifyConfig, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let (mut checked, mut failures, mut notes) = (0, 0, Vec::new());
    for &n in &cfg.pos_lengths {
        let vocab = TaskVocabulary::index(cfg.m_sym, n - 1)?;
        let theta = PI / n as f64;
        let used = if cfg.corrupt_h_pos { 3.0 * theta } else { theta };
        let head = build_h_pos_with(n, &vocab, used, solving_sharpness(n, h_pos_margin(theta)))?;
        let s = solve(&head, &vocab, n, cfg.instances, &mut rng)?;
        // Positional on every input; symbolic only on constant contexts,
        // which occur with negligible probability.
        let bad = s.wrong + (s.total - s.positional) + s.symbolic;
        checked += s.total;
        failures += bad.min(s.total);
        notes.push(format!(
            "n={n}: wrong={} non_positional={} symbolic={}",
            s.wrong,
            s.total - s.positional,
            s.symbolic
        ));
    }
    Ok(CheckResult::tally(
        "h_pos_solves_index",
        checked,
        failures,
        notes.join("; "),
    ))
}

fn h_sym_check(cfg: &VerifyConfig, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let n = cfg.sym_length;
    let vocab = TaskVocabulary::retrieval(cfg.m_sym, cfg.k_int)?;
    let head = build_h_sym_with(0.0, &vocab, n, solving_sharpness(n, h_sym_margin(cfg.m_sym)))?;
    let s = solve(&head, &vocab, n, cfg.instances, &mut rng)?;
    let bad = s.wrong + (s.total - s.symbolic) + s.positional;
    Ok(CheckResult::tally(
        "h_sym_solves_retrieval",
        s.total,
        bad.min(s.total),
        format!(
            "n={n}: wrong={} non_symbolic={} positional={}",
            s.wrong,
            s.total - s.symbolic,
            s.positional
        ),
    ))
}

fn h_mix_check(cfg: &VerifyConfig, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    let n = cfg.mix_length;
    let vocab = TaskVocabulary::partial_induction(cfg.m_sym, cfg.k_int)?;
    let theta2 = 0.5 * h_mix_bound(n, cfg.m_sym);
    let head = build_h_mix_with(theta2, &vocab, n, solving_sharpness(n, h_mix_margin(theta2, cfg.m_sym)))?;
    let s = solve(&head, &vocab, n, cfg.instances, &mut rng)?;
    let bad = s.wrong + s.positional + s.symbolic;
    Ok(CheckResult::tally(
        "h_mix_solves_partial_induction",
        s.total,
        bad.min(s.total),
        format!(
            "n={n} theta2={theta2:e}: wrong={} positional={} symbolic={}",
            s.wrong, s.positional, s.symbolic
        ),
    ))
}

fn counterexample_check() -> Result<CheckResult> {
    let ce = build_counterexample()?;
    let inputs = ce.valid_inputs()?;
    let mut failures = 0;
    for seq in &inputs {
        let probe = TaskInstance {
            kind: TaskKind::Retrieval,
            vocab: ce.vocab,
            sequence: seq.clone(),
            answer: 0,
            answer_position: 0,
        };
        let m = logit_matrix(&ce.head, &one_hot_embed(seq)?)?;
        let ok = ce.predict(seq)?.token() == Some(oracle(&probe)?) && is_positional(&m, PREDICATE_TOL);
        failures += usize::from(!ok);
    }
    Ok(CheckResult::tally(
        "counterexample",
        inputs.len(),
        failures,
        "n=3 positional head with exact output map".into(),
    ))
}

/// Index sequence of length `n` whose answer sits at 1-based `j`.
fn index_probe(vocab: &TaskVocabulary, n: usize, j: usize) -> Result<TokenSequence> {
    let mut toks: Vec<usize> = (0..n - 1).map(|s| s % vocab.m_sym).collect();
    toks.push(vocab.encode(Token::Position(j - 1))?);
    TokenSequence::new(toks, vocab.size())
}

fn shape_checks(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let odd: Vec<usize> = cfg.shape_lengths.iter().copied().filter(|n| n % 2 == 1).collect();
    let even: Vec<usize> = cfg.shape_lengths.iter().copied().filter(|n| n % 2 == 0).collect();
    let note = if even.is_empty() {
        String::new()
    } else {
        format!("; even n outside the proved regime, not checked: {even:?}")
    };
    let (mut u_fail, mut inv_fail, mut peak_fail, mut peaks) = (0, 0, 0, 0);
    for &n in &odd {
        let theta = PI / n as f64;
        u_fail += usize::from(classify_shape(&w_max_pos_profile(n, theta)?)?.kind != ShapeKind::UShaped);
        inv_fail += usize::from(classify_shape(&w_max_sym_profile(n)?)?.kind != ShapeKind::InvertedUShaped);
        let vocab = TaskVocabulary::index(cfg.m_sym.max(2), n - 1)?;
        let head = build_h_pos_with(n, &vocab, theta, 1.0)?;
        for j in 1..n {
            let measured = measured_peak_attention(&head, &index_probe(&vocab, n, j)?)?;
            peaks += 1;
            peak_fail += usize::from((measured - w_max_pos(j, n, theta)?).abs() > 1e-12);
        }
    }
    Ok(vec![
        CheckResult::tally("w_max_pos_u_shaped", odd.len(), u_fail, format!("n in {odd:?}{note}")),
        CheckResult::tally(
            "w_max_sym_inverted_u_shaped",
            odd.len(),
            inv_fail,
            format!("n in {odd:?}{note}"),
        ),
        CheckResult::tally("w_max_pos_matches_head", peaks, peak_fail, "tolerance 1e-12".into()),
    ])
}
