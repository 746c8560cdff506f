use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use posym::attention::{
    attention_row, frequency_decompose, logit_row, EmbeddedSequence, HeadSpec, LogitRow, RotationSchedule,
};
use posym::behavior::{delta_pos_norm_sq, delta_sym_norm_sq, is_positional, is_symbolic, LogitMatrix};
use posym::metric::{
    apply_block_swap, equal_partition, final_query_attention, ps_scores, swap_weights, BlockAverages, BlockPartition,
    SwapSet,
};
use posym::tasks::{generate, oracle, random_permutation, AnswerConvention, TaskKind, TaskVocabulary};

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn random_head(rng: &mut ChaCha8Rng, planes: usize, d_in: usize, nope: bool) -> HeadSpec {
    let schedule = if nope {
        RotationSchedule::nope(planes).unwrap()
    } else {
        RotationSchedule::from_angles((0..planes).map(|_| rng.random_range(0.0..3.0)).collect()).unwrap()
    };
    HeadSpec::new(
        gaussian_matrix(rng, 2 * planes, d_in),
        gaussian_matrix(rng, 2 * planes, d_in),
        schedule,
    )
    .unwrap()
}

fn random_sequence(rng: &mut ChaCha8Rng, n: usize, d_in: usize) -> EmbeddedSequence {
    EmbeddedSequence::new(gaussian_matrix(rng, n, d_in)).unwrap()
}

proptest! {
    #[test]
    fn softmax_normalized_and_shift_invariant(
        values in proptest::collection::vec(-50.0f64..50.0, 1..40),
        shift in -100.0f64..100.0,
    ) {
        let row = LogitRow::new(values.len(), values.clone()).unwrap();
        let w = attention_row(&row).unwrap();
        prop_assert!((w.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted = LogitRow::new(values.len(), values.iter().map(|v| v + shift).collect()).unwrap();
        let w2 = attention_row(&shifted).unwrap();
        for (a, b) in w.weights().iter().zip(w2.weights()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_rows_sum_to_full_row(seed in any::<u64>(), planes in 1usize..5, n in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = random_head(&mut rng, planes, 6, false);
        let x = random_sequence(&mut rng, n, 6);
        let full = logit_row(&head, &x, n).unwrap();
        let parts = frequency_decompose(&head, &x, n).unwrap();
        for j in 0..n {
            let sum: f64 = parts.rows.iter().map(|r| r.values()[j]).sum();
            prop_assert!((sum - full.values()[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn nope_logits_travel_with_their_vectors(seed in any::<u64>(), n in 2usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = random_head(&mut rng, 2, 5, true);
        let x = random_sequence(&mut rng, n, 5);
        let perm = random_permutation(n - 1, &mut rng);
        let y = x.permute_prefix(&perm).unwrap();
        let a = logit_row(&head, &x, n).unwrap();
        let b = logit_row(&head, &y, n).unwrap();
        for (slot, &src) in perm.iter().enumerate() {
            prop_assert!((b.values()[slot] - a.values()[src]).abs() < 1e-12);
        }
    }

    #[test]
    fn sym_norm_is_pos_norm_of_transpose(seed in any::<u64>(), s in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = LogitMatrix::new(gaussian_matrix(&mut rng, s, s)).unwrap();
        prop_assert_eq!(delta_sym_norm_sq(&m), delta_pos_norm_sq(&m.transpose()));
    }

    #[test]
    fn positional_and_symbolic_forces_flat_diagonal(seed in any::<u64>(), s in 1usize..10, c in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((s, s), |_| c + rng.random_range(-4e-13..4e-13));
        let m = LogitMatrix::new(a).unwrap();
        prop_assume!(is_positional(&m, 1e-12) && is_symbolic(&m, 1e-12));
        let d = m.diagonal();
        let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        prop_assert!(hi - lo <= 2e-12);
    }

    #[test]
    fn swap_weights_are_a_distribution(
        d in proptest::collection::vec(0.0f64..1.0, 3..10),
        tau in 1e-3f64..10.0,
    ) {
        let blocks = d.len();
        let swaps = SwapSet::all_pairs(&(1..=blocks).collect::<Vec<_>>(), blocks).unwrap();
        let alpha = swap_weights(&BlockAverages { d }, &swaps, tau).unwrap();
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scores_in_unit_interval_and_nope_is_symbolic(seed in any::<u64>(), blocks in 2usize..6, size in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = blocks * size;
        let part = equal_partition(n, blocks).unwrap();
        let swaps = SwapSet::all_pairs(&(1..=blocks).collect::<Vec<_>>(), blocks).unwrap();
        let x = random_sequence(&mut rng, n, 4);
        let rope = random_head(&mut rng, 2, 4, false);
        let s = ps_scores(final_query_attention(&rope), &x, &part, &swaps, None).unwrap().score;
        for v in [s.s_pos, s.s_sym] {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
        // A NoPE head attends by vector, so block mass follows its block.
        // The query sits in the last block; keep swaps away from it.
        prop_assume!(blocks >= 3);
        let nope = random_head(&mut rng, 2, 4, true);
        let inner = SwapSet::all_pairs(&(1..blocks).collect::<Vec<_>>(), blocks).unwrap();
        let s = ps_scores(final_query_attention(&nope), &x, &part, &inner, None).unwrap().score;
        prop_assert!((s.s_sym - 1.0).abs() < 1e-9, "s_sym = {}", s.s_sym);
    }

    #[test]
    fn double_swap_restores_bits(
        sizes in proptest::collection::vec(1usize..5, 2..7),
        a in 0usize..7,
        b in 0usize..7,
        seed in any::<u64>(),
    ) {
        let blocks = sizes.len();
        let (i, j) = (a % blocks + 1, b % blocks + 1);
        prop_assume!(i != j);
        let part = BlockPartition::from_sizes(&sizes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_sequence(&mut rng, part.len(), 3);
        let (y, p2) = apply_block_swap(&x, &part, i, j).unwrap();
        let (z, p3) = apply_block_swap(&y, &p2, i, j).unwrap();
        prop_assert_eq!(z.as_matrix(), x.as_matrix());
        prop_assert_eq!(p3, part);
    }

    #[test]
    fn generated_instances_agree_with_oracle(seed in any::<u64>(), kind_ix in 0usize..3, n in 4usize..24) {
        let kind = [TaskKind::Index, TaskKind::Retrieval, TaskKind::PartialInduction][kind_ix];
        let vocab = match kind {
            TaskKind::Index => TaskVocabulary::index(6, 32).unwrap(),
            k => TaskVocabulary::new(k, 6, 8, AnswerConvention::Composite).unwrap(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = generate(n, &vocab, &mut rng).unwrap();
        prop_assert_eq!(inst.sequence.len(), n);
        prop_assert!(inst.sequence.tokens().iter().all(|&t| t < vocab.size()));
        prop_assert!((1..n).contains(&inst.answer_position));
        prop_assert_eq!(oracle(&inst).unwrap(), inst.answer);
    }
}

#[test]
fn token_tables_round_trip() {
    for kind in [TaskKind::Retrieval, TaskKind::PartialInduction] {
        for conv in [AnswerConvention::Composite, AnswerConvention::Integer] {
            let vocab = TaskVocabulary::new(kind, 5, 7, conv).unwrap();
            for id in 0..vocab.size() {
                assert_eq!(vocab.encode(vocab.decode(id).unwrap()).unwrap(), id);
            }
        }
    }
    let vocab = TaskVocabulary::index(5, 12).unwrap();
    for id in 0..vocab.size() {
        assert_eq!(vocab.encode(vocab.decode(id).unwrap()).unwrap(), id);
    }
}
