//! The closed-form heads solving Index, Retrieval and Partial Induction, and
//! the n = 3 positional head that still solves Retrieval.

use std::f64::consts::PI;

use posym::attention::model_predict;
use posym::behavior::{is_positional, is_symbolic, logit_matrix};
use posym::heads::{
    build_counterexample, build_h_mix_with, build_h_pos_with, build_h_sym_with, h_mix_bound, h_mix_margin,
    h_pos_margin, h_sym_margin, one_hot_model, solving_sharpness,
};
use posym::tasks::{generate, one_hot_embed, oracle, TaskVocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn accuracy(
    head: &posym::attention::HeadSpec,
    vocab: &TaskVocabulary,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> posym::Result<(f64, bool, bool)> {
    let model = one_hot_model(head.clone(), vocab);
    let (mut hits, mut pos, mut sym) = (0, true, true);
    for _ in 0..100 {
        let inst = generate(n, vocab, rng)?;
        hits += usize::from(model_predict(&model, &inst.sequence)?.token() == Some(oracle(&inst)?));
        let m = logit_matrix(head, &one_hot_embed(&inst.sequence)?)?;
        pos &= is_positional(&m, 1e-12);
        sym &= is_symbolic(&m, 1e-12);
    }
    Ok((hits as f64 / 100.0, pos, sym))
}

fn main() -> posym::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let n = 32;
    let iv = TaskVocabulary::index(16, n - 1)?;
    let theta = PI / n as f64;
    let h_pos = build_h_pos_with(n, &iv, theta, solving_sharpness(n, h_pos_margin(theta)))?;
    let (acc, p, s) = accuracy(&h_pos, &iv, n, &mut rng)?;
    println!("H_POS   on Index      n={n}: accuracy {acc:.2} positional={p} symbolic={s}");

    let rv = TaskVocabulary::retrieval(16, 32)?;
    let h_sym = build_h_sym_with(0.0, &rv, n, solving_sharpness(n, h_sym_margin(16)))?;
    let (acc, p, s) = accuracy(&h_sym, &rv, n, &mut rng)?;
    println!("H_SYM^0 on Retrieval  n={n}: accuracy {acc:.2} positional={p} symbolic={s}");

    let n = 16;
    let mv = TaskVocabulary::partial_induction(16, 32)?;
    let theta2 = 0.5 * h_mix_bound(n, 16);
    let h_mix = build_h_mix_with(theta2, &mv, n, solving_sharpness(n, h_mix_margin(theta2, 16)))?;
    let (acc, p, s) = accuracy(&h_mix, &mv, n, &mut rng)?;
    println!("H_MIX   on Partial    n={n}: accuracy {acc:.2} positional={p} symbolic={s} (theta2 = {theta2:.3e})");

    let ce = build_counterexample()?;
    for seq in ce.valid_inputs()?.iter().take(4) {
        let pred = ce.predict(seq)?.token().map(|t| ce.vocab.render(t));
        let shown: Vec<String> = seq.tokens().iter().map(|&t| ce.vocab.render(t)).collect();
        println!("counterexample {:?} -> {:?}", shown, pred);
    }
    Ok(())
}
