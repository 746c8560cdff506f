//! Block-permutation positional/symbolic scores.
//!
//! The attention row of the final query is averaged over contiguous blocks.
//! For every swap of two blocks the input is rebuilt with the two blocks
//! exchanged (boundaries follow the moved blocks, so unequal blocks shift
//! everything in between), attention is recomputed, and the new pair of
//! block averages is compared against the original pair in place (`s_pos`)
//! and against the original pair transported with the blocks (`s_sym`).
//!
//! Block indices are 1-based, like positions.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{
    attention_row, frequency_decompose, logit_row, project_plane, AttentionRow, EmbeddedSequence, HeadSpec,
};
use crate::error::{invalid, Error, Result};

/// Contiguous cover of `1..=n` by inclusive intervals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    intervals: Vec<(usize, usize)>,
}

impl BlockPartition {
    pub fn from_intervals(intervals: Vec<(usize, usize)>) -> Result<Self> {
        let mut next = 1;
        for &(a, b) in &intervals {
            if a != next || b < a {
                return invalid(format!(
                    "intervals {intervals:?} are not a contiguous cover starting at 1"
                ));
            }
            next = b + 1;
        }
        if intervals.is_empty() {
            return invalid("partition needs at least one block");
        }
        Ok(Self { intervals })
    }

    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut intervals = Vec::with_capacity(sizes.len());
        let mut a = 1;
        for &s in sizes {
            if s == 0 {
                return invalid("blocks must be non-empty");
            }
            intervals.push((a, a + s - 1));
            a += s;
        }
        Self::from_intervals(intervals)
    }

    pub fn intervals(&self) -> &[(usize, usize)] {
        &self.intervals
    }

    pub fn blocks(&self) -> usize {
        self.intervals.len()
    }

    /// Total length `n`.
    pub fn len(&self) -> usize {
        self.intervals.last().map_or(0, |b| b.1)
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.intervals.iter().map(|(a, b)| b - a + 1).collect()
    }

    fn check_block(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.blocks() {
            return invalid(format!("block {k} outside 1..={}", self.blocks()));
        }
        Ok(())
    }
}

/// `m` contiguous blocks over `1..=n`, sizes differing by at most one with
/// the larger blocks first.
pub fn equal_partition(n: usize, m: usize) -> Result<BlockPartition> {
    if m == 0 || m > n {
        return invalid(format!("cannot split {n} positions into {m} blocks"));
    }
    let (q, r) = (n / m, n % m);
    let sizes: Vec<usize> = (0..m).map(|k| q + usize::from(k < r)).collect();
    BlockPartition::from_sizes(&sizes)
}

/// `m` equal blocks over the context `1..=n-1` plus a singleton block for the
/// query at `n`. The query block is the last one and should not be swapped.
pub fn prefix_partition(n: usize, m: usize) -> Result<BlockPartition> {
    if n < 2 {
        return invalid("prefix partition needs n >= 2");
    }
    let mut sizes = equal_partition(n - 1, m)?.sizes();
    sizes.push(1);
    BlockPartition::from_sizes(&sizes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAverages {
    pub d: Vec<f64>,
}

pub fn block_averages(row: &AttentionRow, part: &BlockPartition) -> Result<BlockAverages> {
    if row.len() != part.len() {
        return Err(Error::DimensionMismatch {
            what: "attention row versus partition",
            expected: part.len(),
            got: row.len(),
        });
    }
    let w = row.weights();
    let d = part
        .intervals()
        .iter()
        .map(|&(a, b)| w[a - 1..b].iter().sum::<f64>() / (b - a + 1) as f64)
        .collect();
    Ok(BlockAverages { d })
}

/// Exchanges blocks `i` and `j`; the new partition gives each slot the
/// length of the block that moved into it.
pub fn apply_block_swap(
    xbar: &EmbeddedSequence,
    part: &BlockPartition,
    i: usize,
    j: usize,
) -> Result<(EmbeddedSequence, BlockPartition)> {
    part.check_block(i)?;
    part.check_block(j)?;
    if i == j {
        return invalid("a swap needs two distinct blocks");
    }
    if xbar.len() != part.len() {
        return Err(Error::DimensionMismatch {
            what: "sequence versus partition",
            expected: part.len(),
            got: xbar.len(),
        });
    }
    let mut order: Vec<usize> = (0..part.blocks()).collect();
    order.swap(i - 1, j - 1);
    let ivs = part.intervals();
    let rows: Vec<usize> = order.iter().flat_map(|&k| ivs[k].0 - 1..ivs[k].1).collect();
    let sizes: Vec<usize> = order.iter().map(|&k| ivs[k].1 - ivs[k].0 + 1).collect();
    let swapped: Array2<f64> = xbar.as_matrix().select(Axis(0), &rows);
    Ok((EmbeddedSequence::new(swapped)?, BlockPartition::from_sizes(&sizes)?))
}

/// Transpositions of blocks, `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapSet {
    pairs: Vec<(usize, usize)>,
}

impl SwapSet {
    pub fn new(pairs: Vec<(usize, usize)>, blocks: usize) -> Result<Self> {
        if pairs.is_empty() {
            return invalid("swap set must not be empty");
        }
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &pairs {
            if !(1 <= i && i < j && j <= blocks) {
                return invalid(format!("swap ({i}, {j}) needs 1 <= i < j <= {blocks}"));
            }
            if !seen.insert((i, j)) {
                return invalid(format!("duplicate swap ({i}, {j})"));
            }
        }
        Ok(Self { pairs })
    }

    /// All pairs among the given blocks.
    pub fn all_pairs(selected: &[usize], blocks: usize) -> Result<Self> {
        let mut s = selected.to_vec();
        s.sort_unstable();
        s.dedup();
        let pairs = s
            .iter()
            .enumerate()
            .flat_map(|(a, &i)| s[a + 1..].iter().map(move |&j| (i, j)))
            .collect();
        Self::new(pairs, blocks)
    }

    /// All pairs among `count` blocks spread evenly over `1..=eligible`.
    pub fn uniformly_spaced(eligible: usize, count: usize, blocks: usize) -> Result<Self> {
        if count < 2 || count > eligible {
            return invalid(format!("cannot pick {count} of {eligible} blocks for swaps"));
        }
        let picks: Vec<usize> = (0..count)
            .map(|c| 1 + (c * (eligible - 1) + (count - 1) / 2) / (count - 1))
            .collect();
        Self::all_pairs(&picks, blocks)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Default swap-selection size.
pub const DEFAULT_SWAP_BLOCKS: usize = 9;

/// Default temperature: population standard deviation of `d`, at least 1e-6.
pub fn default_tau(d: &BlockAverages) -> f64 {
    let n = d.d.len() as f64;
    let mean = d.d.iter().sum::<f64>() / n;
    let var = d.d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt().max(1e-6)
}

/// `alpha(i, j) = softmax(|d_i - d_j| / tau)` over the swap set.
pub fn swap_weights(d: &BlockAverages, swaps: &SwapSet, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return invalid(format!("temperature must be positive, got {tau}"));
    }
    if swaps.is_empty() {
        return invalid("swap set must not be empty");
    }
    let z: Vec<f64> = swaps
        .pairs()
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (d.d.get(i - 1), d.d.get(j - 1));
            match (a, b) {
                (Some(a), Some(b)) => Ok((a - b).abs() / tau),
                _ => invalid(format!("swap ({i}, {j}) outside {} blocks", d.d.len())),
            }
        })
        .collect::<Result<_>>()?;
    crate::attention::softmax_weights(&z)
}

/// Cosine similarity with the degenerate cases pinned: two zero vectors are
/// identical (1), one zero vector is orthogonal to anything (0).
pub fn cos_sim(u: [f64; 2], v: [f64; 2]) -> f64 {
    let nu = u[0].hypot(u[1]);
    let nv = v[0].hypot(v[1]);
    match (nu == 0.0, nv == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (u[0] * v[0] + u[1] * v[1]) / (nu * nv),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PSScore {
    pub s_pos: f64,
    pub s_sym: f64,
}

/// Score together with what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PSReport {
    pub score: PSScore,
    pub tau: f64,
    pub alpha: Vec<f64>,
    pub averages: BlockAverages,
}

/// Scores an attention function on one input. `tau = None` picks
/// [`default_tau`].
pub fn ps_scores<F>(
    attn_fn: F,
    xbar: &EmbeddedSequence,
    part: &BlockPartition,
    swaps: &SwapSet,
    tau: Option<f64>,
) -> Result<PSReport>
where
    F: Fn(&EmbeddedSequence) -> Result<AttentionRow> + Sync,
{
    let averages = block_averages(&attn_fn(xbar)?, part)?;
    let tau = tau.unwrap_or_else(|| default_tau(&averages));
    let alpha = swap_weights(&averages, swaps, tau)?;
    let d = &averages.d;
    let cosines: Vec<(f64, f64)> = swaps
        .pairs()
        .par_iter()
        .map(|&(i, j)| {
            let (x2, p2) = apply_block_swap(xbar, part, i, j)?;
            let d2 = block_averages(&attn_fn(&x2)?, &p2)?.d;
            let now = [d2[i - 1], d2[j - 1]];
            Ok((cos_sim(now, [d[i - 1], d[j - 1]]), cos_sim(now, [d[j - 1], d[i - 1]])))
        })
        .collect::<Result<_>>()?;
    let (mut s_pos, mut s_sym) = (0.0, 0.0);
    for (a, (cp, cs)) in alpha.iter().zip(cosines) {
        s_pos += a * cp;
        s_sym += a * cs;
    }
    Ok(PSReport {
        score: PSScore { s_pos, s_sym },
        tau,
        alpha,
        averages,
    })
}

/// Attention function of `head` at the final query.
pub fn final_query_attention(head: &HeadSpec) -> impl Fn(&EmbeddedSequence) -> Result<AttentionRow> + Sync + '_ {
    move |x: &EmbeddedSequence| attention_row(&logit_row(head, x, x.len())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneScore {
    pub plane: usize,
    pub theta: f64,
    pub score: PSScore,
    /// Mean key norm of the plane on the scored input.
    pub key_norm: f64,
    /// Key norm as a share of all planes.
    pub key_norm_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyScores {
    pub planes: Vec<PlaneScore>,
    /// Unweighted mean over planes.
    pub raw: PSScore,
    /// Mean weighted by key-norm mass.
    pub norm_weighted: PSScore,
}

/// Scores each rotation plane on its own: the projected attention is the
/// softmax of that plane's logit row.
pub fn per_frequency_ps_scores(
    head: &HeadSpec,
    xbar: &EmbeddedSequence,
    part: &BlockPartition,
    swaps: &SwapSet,
    tau: Option<f64>,
) -> Result<FrequencyScores> {
    let dec = frequency_decompose(head, xbar, xbar.len())?;
    let total: f64 = dec.key_norms.iter().sum();
    let planes = (0..head.planes())
        .map(|t| {
            let plane = project_plane(head, t)?;
            let report = ps_scores(final_query_attention(&plane), xbar, part, swaps, tau)?;
            Ok(PlaneScore {
                plane: t,
                theta: head.schedule().angles()[t],
                score: report.score,
                key_norm: dec.key_norms[t],
                key_norm_mass: if total > 0.0 {
                    dec.key_norms[t] / total
                } else {
                    1.0 / head.planes() as f64
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = planes.len() as f64;
    let raw = PSScore {
        s_pos: planes.iter().map(|p| p.score.s_pos).sum::<f64>() / k,
        s_sym: planes.iter().map(|p| p.score.s_sym).sum::<f64>() / k,
    };
    let norm_weighted = PSScore {
        s_pos: planes.iter().map(|p| p.key_norm_mass * p.score.s_pos).sum(),
        s_sym: planes.iter().map(|p| p.key_norm_mass * p.score.s_sym).sum(),
    };
    Ok(FrequencyScores {
        planes,
        raw,
        norm_weighted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::RotationSchedule;
    use crate::heads::{build_h_mix, build_h_pos, build_h_sym, h_mix_bound};
    use crate::tasks::{gen_index, gen_partial_induction, gen_retrieval, one_hot_embed, TaskVocabulary};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_partition_examples() {
        assert_eq!(equal_partition(9, 3).unwrap().intervals(), &[(1, 3), (4, 6), (7, 9)]);
        assert_eq!(equal_partition(10, 3).unwrap().intervals(), &[(1, 4), (5, 7), (8, 10)]);
        assert_eq!(equal_partition(5, 5).unwrap().sizes(), vec![1; 5]);
        assert!(equal_partition(3, 4).is_err());
        assert_eq!(prefix_partition(9, 4).unwrap().sizes(), vec![2, 2, 2, 2, 1]);
    }

    #[test]
    fn block_average_examples() {
        let uniform = AttentionRow::from_weights(vec![0.125; 8]).unwrap();
        let part = equal_partition(8, 4).unwrap();
        assert_eq!(block_averages(&uniform, &part).unwrap().d, vec![0.125; 4]);
        let mut one = vec![0.0; 8];
        one[0] = 1.0;
        let hot = AttentionRow::from_weights(one).unwrap();
        assert_eq!(block_averages(&hot, &part).unwrap().d, vec![0.5, 0.0, 0.0, 0.0]);
        assert!(block_averages(&hot, &equal_partition(7, 2).unwrap()).is_err());
    }

    #[test]
    fn block_averages_match_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let raw: Vec<f64> = (0..11).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let row = AttentionRow::from_weights(raw.iter().map(|v| v / total).collect()).unwrap();
        let part = BlockPartition::from_sizes(&[3, 1, 4, 3]).unwrap();
        let d = block_averages(&row, &part).unwrap().d;
        let w = row.weights();
        let direct = [
            (w[0] + w[1] + w[2]) / 3.0,
            w[3],
            (w[4] + w[5] + w[6] + w[7]) / 4.0,
            (w[8] + w[9] + w[10]) / 3.0,
        ];
        for (a, b) in d.iter().zip(direct) {
            assert!((a - b).abs() <= 1e-15);
        }
        let mass: f64 = d.iter().zip(part.sizes()).map(|(d, s)| d * s as f64).sum();
        assert!((mass - 1.0).abs() <= 1e-10);
    }

    fn numbered(n: usize) -> EmbeddedSequence {
        EmbeddedSequence::from_rows(&(0..n).map(|i| vec![i as f64, 0.0]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn unequal_swap_moves_boundaries() {
        let x = numbered(5);
        let part = BlockPartition::from_sizes(&[2, 3]).unwrap();
        let (y, p) = apply_block_swap(&x, &part, 1, 2).unwrap();
        assert_eq!(p.intervals(), &[(1, 3), (4, 5)]);
        let firsts: Vec<f64> = (0..5).map(|i| y.vector(i)[0]).collect();
        assert_eq!(firsts, vec![2.0, 3.0, 4.0, 0.0, 1.0]);
        let eq = equal_partition(6, 3).unwrap();
        let (_, same) = apply_block_swap(&numbered(6), &eq, 1, 3).unwrap();
        assert_eq!(same, eq);
        assert!(apply_block_swap(&x, &part, 1, 1).is_err());
        assert!(apply_block_swap(&x, &part, 1, 3).is_err());
    }

    proptest! {
        #[test]
        fn swap_is_an_involution(sizes in proptest::collection::vec(1usize..5, 2..7), a in 0usize..7, b in 0usize..7) {
            let m = sizes.len();
            let (i, j) = (a % m + 1, b % m + 1);
            prop_assume!(i != j);
            let part = BlockPartition::from_sizes(&sizes).unwrap();
            let x = numbered(part.len());
            let (y, p) = apply_block_swap(&x, &part, i, j).unwrap();
            let (z, q) = apply_block_swap(&y, &p, i, j).unwrap();
            prop_assert_eq!(z, x);
            prop_assert_eq!(q, part);
        }

        #[test]
        fn alpha_sums_to_one(d in proptest::collection::vec(0.0f64..1.0, 3..10), tau in 1e-6f64..10.0) {
            let swaps = SwapSet::all_pairs(&(1..=d.len()).collect::<Vec<_>>(), d.len()).unwrap();
            let alpha = swap_weights(&BlockAverages { d }, &swaps, tau).unwrap();
            prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn scores_in_unit_interval_and_nope_symbolic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = Array2::from_shape_fn((2, 4), |_| rng.random_range(-2.0..2.0));
            let k = Array2::from_shape_fn((2, 4), |_| rng.random_range(-2.0..2.0));
            let x = EmbeddedSequence::new(Array2::from_shape_fn((13, 4), |_| rng.random_range(-1.0..1.0))).unwrap();
            let part = prefix_partition(13, 4).unwrap();
            let swaps = SwapSet::all_pairs(&[1, 2, 3, 4], 5).unwrap();
            let rot = HeadSpec::new(q.clone(), k.clone(), RotationSchedule::from_angles(vec![rng.random_range(0.0..3.0)]).unwrap()).unwrap();
            let r = ps_scores(final_query_attention(&rot), &x, &part, &swaps, None).unwrap().score;
            prop_assert!((0.0..=1.0 + 1e-12).contains(&r.s_pos) && (0.0..=1.0 + 1e-12).contains(&r.s_sym));
            let nope = HeadSpec::new(q, k, RotationSchedule::nope(1).unwrap()).unwrap();
            let r = ps_scores(final_query_attention(&nope), &x, &part, &swaps, None).unwrap().score;
            prop_assert!((r.s_sym - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn swap_weight_examples() {
        let d = BlockAverages { d: vec![0.5, 0.3, 0.2] };
        let swaps = SwapSet::new(vec![(1, 2), (1, 3), (2, 3)], 3).unwrap();
        let alpha = swap_weights(&d, &swaps, 0.1).unwrap();
        let z = [2.0f64, 3.0, 1.0];
        let s: f64 = z.iter().map(|v| v.exp()).sum();
        for (a, zz) in alpha.iter().zip(z) {
            assert!((a - zz.exp() / s).abs() <= 1e-12);
        }
        let flat = swap_weights(&BlockAverages { d: vec![0.2; 3] }, &swaps, 0.1).unwrap();
        assert!(flat.iter().all(|a| (a - 1.0 / 3.0).abs() <= 1e-15));
        let single = SwapSet::new(vec![(1, 3)], 3).unwrap();
        assert_eq!(swap_weights(&d, &single, 0.1).unwrap(), vec![1.0]);
        assert!(SwapSet::new(vec![], 3).is_err());
        assert!(SwapSet::new(vec![(2, 1)], 3).is_err());
    }

    #[test]
    fn uniformly_spaced_picks() {
        let s = SwapSet::uniformly_spaced(256, 9, 257).unwrap();
        assert_eq!(s.len(), 36);
        assert_eq!(s.pairs()[0], (1, 33));
        assert_eq!(s.pairs()[7], (1, 256));
        let tiny = SwapSet::uniformly_spaced(3, 3, 4).unwrap();
        assert_eq!(tiny.pairs(), &[(1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn cosine_conventions() {
        assert_eq!(cos_sim([0.0, 0.0], [0.0, 0.0]), 1.0);
        assert_eq!(cos_sim([0.0, 0.0], [1.0, 0.0]), 0.0);
        assert!((cos_sim([1.0, 1.0], [2.0, 2.0]) - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn constructed_heads_land_in_their_corners() {
        let n = 33;
        let part = prefix_partition(n, 8).unwrap();
        let swaps = SwapSet::uniformly_spaced(8, 8, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);

        let iv = TaskVocabulary::index(16, n - 1).unwrap();
        let pos = build_h_pos(n, &iv).unwrap();
        let x = one_hot_embed(&gen_index(n, &iv, &mut rng).unwrap().sequence).unwrap();
        let r = ps_scores(final_query_attention(&pos), &x, &part, &swaps, None)
            .unwrap()
            .score;
        assert!((r.s_pos - 1.0).abs() <= 1e-9, "{r:?}");

        let rv = TaskVocabulary::retrieval(16, 32).unwrap();
        let sym = build_h_sym(0.0, &rv, n).unwrap();
        let x = one_hot_embed(&gen_retrieval(n, &rv, &mut rng).unwrap().sequence).unwrap();
        let r = ps_scores(final_query_attention(&sym), &x, &part, &swaps, None)
            .unwrap()
            .score;
        assert!((r.s_sym - 1.0).abs() <= 1e-9, "{r:?}");

        let flat = HeadSpec::new(
            Array2::zeros((2, rv.size())),
            Array2::zeros((2, rv.size())),
            RotationSchedule::nope(1).unwrap(),
        )
        .unwrap();
        let r = ps_scores(final_query_attention(&flat), &x, &part, &swaps, None)
            .unwrap()
            .score;
        assert!(r.s_pos >= 1.0 - 1e-12 && r.s_sym >= 1.0 - 1e-12, "{r:?}");
    }

    #[test]
    fn per_frequency_scores() {
        let n = 13;
        let part = prefix_partition(n, 4).unwrap();
        let swaps = SwapSet::all_pairs(&[1, 2, 3, 4], 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);

        let rv = TaskVocabulary::retrieval(4, 3).unwrap();
        let sym = build_h_sym(0.2, &rv, n).unwrap();
        let x = one_hot_embed(&gen_retrieval(n, &rv, &mut rng).unwrap().sequence).unwrap();
        let full = ps_scores(final_query_attention(&sym), &x, &part, &swaps, None)
            .unwrap()
            .score;
        let per = per_frequency_ps_scores(&sym, &x, &part, &swaps, None).unwrap();
        assert_eq!(per.planes.len(), 1);
        assert_eq!(per.planes[0].score, full);
        assert_eq!(per.raw, full);

        let mv = TaskVocabulary::partial_induction(4, 8).unwrap();
        let mix = build_h_mix(0.5 * h_mix_bound(n, 4), &mv, n).unwrap();
        let x = one_hot_embed(&gen_partial_induction(n, &mv, &mut rng).unwrap().sequence).unwrap();
        let per = per_frequency_ps_scores(&mix, &x, &part, &swaps, None).unwrap();
        assert!((per.planes[0].score.s_sym - 1.0).abs() <= 1e-9, "{per:?}");
        assert!(per.planes[1].score.s_pos >= 0.99, "{per:?}");
        let mass: f64 = per.planes.iter().map(|p| p.key_norm_mass).sum();
        assert!((mass - 1.0).abs() <= 1e-12);

        // A plane with zero keys attends uniformly.
        let mut k = mix.key().clone();
        k.row_mut(2).fill(0.0);
        k.row_mut(3).fill(0.0);
        let dead = HeadSpec::new(mix.query().clone(), k, mix.schedule().clone()).unwrap();
        let per = per_frequency_ps_scores(&dead, &x, &part, &swaps, None).unwrap();
        assert!(per.planes[1].score.s_pos >= 1.0 - 1e-12 && per.planes[1].score.s_sym >= 1.0 - 1e-12);
    }
}
