//! Positional and symbolic behavior of a head at the final query.
//!
//! Everything here works on the logit matrix `a[k][j] = L(x_n, n, x_k, j)`
//! for `k, j` in the prefix. The diagonal holds the actual logits; an
//! off-diagonal entry is what key vector `x_k` would score if it sat at
//! position `j`.
//!
//! The deviation norms use the pair-averaging identity: over a uniformly
//! random permutation `pi` and slot `j`, the pair `(j, pi(j))` is uniform on
//! the prefix squared, so the permutation average collapses to a mean over
//! all ordered pairs.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{check_permutation, model_predict, EmbeddedSequence, LogitFn, OneLayerModel, TokenSequence};
use crate::error::{invalid, Error, Result};

/// Default absolute tolerance for the behavior predicates.
pub const DEFAULT_BEHAVIOR_TOL: f64 = 1e-9;

/// Square matrix of cross logits from the final query.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    a: Array2<f64>,
}

impl LogitMatrix {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return invalid(format!("logit matrix must be square and non-empty, got {:?}", a.dim()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return invalid("logit matrix entries must be finite");
        }
        Ok(Self { a })
    }

    /// Prefix length `n - 1`.
    pub fn size(&self) -> usize {
        self.a.nrows()
    }

    /// 0-based entry `(k, j)`.
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.a[[k, j]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.a.diag().to_vec()
    }

    pub fn transpose(&self) -> Self {
        Self {
            a: self.a.t().to_owned(),
        }
    }
}

/// Cross logits of the final query against every (vector, position) pair.
pub fn logit_matrix<L: LogitFn + ?Sized>(head: &L, xbar: &EmbeddedSequence) -> Result<LogitMatrix> {
    let n = xbar.len();
    if n < 2 {
        return invalid("logit matrix needs n >= 2");
    }
    let xq = xbar.vector(n - 1);
    let mut a = Array2::<f64>::zeros((n - 1, n - 1));
    for k in 0..n - 1 {
        for j in 0..n - 1 {
            a[[k, j]] = head.logit(xq, n, xbar.vector(k), j + 1)?;
        }
    }
    LogitMatrix::new(a)
}

/// `||delta_pos||^2 / ((n-1)! (n-1))`: mean over pairs of `(a[k][j] - a[j][j])^2`.
pub fn delta_pos_norm_sq(m: &LogitMatrix) -> f64 {
    let s = m.size();
    let mut total = 0.0;
    for j in 0..s {
        let d = m.a[[j, j]];
        for k in 0..s {
            let e = m.a[[k, j]] - d;
            total += e * e;
        }
    }
    total / (s * s) as f64
}

/// `||delta_sym||^2 / ((n-1)! (n-1))`: mean over pairs of `(a[j][k] - a[j][j])^2`.
pub fn delta_sym_norm_sq(m: &LogitMatrix) -> f64 {
    // Same summation order as `delta_pos_norm_sq` on the transpose, so the
    // two agree bit for bit.
    let s = m.size();
    let mut total = 0.0;
    for j in 0..s {
        let d = m.a[[j, j]];
        for k in 0..s {
            let e = m.a[[j, k]] - d;
            total += e * e;
        }
    }
    total / (s * s) as f64
}

/// The two normalized norms by walking every permutation of the prefix
/// (Heap's algorithm). Factorial cost; meant for prefixes up to about 8.
pub fn enumerated_delta_norms(m: &LogitMatrix) -> Result<(f64, f64)> {
    let s = m.size();
    if s > 10 {
        return invalid(format!("permutation enumeration over {s} slots is too large"));
    }
    let mut perm: Vec<usize> = (0..s).collect();
    let mut c = vec![0usize; s];
    let (mut pos, mut sym, mut count) = (0.0, 0.0, 0usize);
    let mut visit = |perm: &[usize]| {
        for (j, &p) in perm.iter().enumerate() {
            let dp = m.a[[p, j]] - m.a[[j, j]];
            let ds = m.a[[j, p]] - m.a[[j, j]];
            pos += dp * dp;
            sym += ds * ds;
        }
        count += s;
    };
    visit(&perm);
    let mut i = 0;
    while i < s {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((pos / count as f64, sym / count as f64))
}

/// Population variance of the logits versus the normalized deviation bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub var_lambda: f64,
    pub pos_norm_sq_normalized: f64,
    pub sym_norm_sq_normalized: f64,
    pub bound: f64,
    pub holds: bool,
}

pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

pub fn exclusion_check(m: &LogitMatrix) -> ExclusionReport {
    let var_lambda = population_variance(&m.diagonal());
    let pos = delta_pos_norm_sq(m);
    let sym = delta_sym_norm_sq(m);
    let bound = pos + sym;
    ExclusionReport {
        var_lambda,
        pos_norm_sq_normalized: pos,
        sym_norm_sq_normalized: sym,
        bound,
        holds: var_lambda <= bound + 1e-12 * (1.0 + bound.abs()),
    }
}

/// Logits unchanged when key vectors are permuted over fixed positions.
pub fn is_positional(m: &LogitMatrix, tol: f64) -> bool {
    let s = m.size();
    (0..s).all(|j| (0..s).all(|k| (m.a[[k, j]] - m.a[[j, j]]).abs() <= tol))
}

/// Each logit travels with its key vector when positions are permuted.
pub fn is_symbolic(m: &LogitMatrix, tol: f64) -> bool {
    let s = m.size();
    (0..s).all(|j| (0..s).all(|k| (m.a[[j, k]] - m.a[[j, j]]).abs() <= tol))
}

/// Whether the model predicts the same outcome on `seq` and on `seq` with its
/// prefix permuted by `perm` (slot `s` receives original slot `perm[s]`).
pub fn permutation_output_invariance(model: &OneLayerModel, seq: &TokenSequence, perm: &[usize]) -> Result<bool> {
    check_permutation(perm, seq.len() - 1)?;
    let permuted = seq.permute_prefix(perm)?;
    Ok(model_predict(model, seq)?.same_outcome(&model_predict(model, &permuted)?))
}

/// One fuzzing sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzRecord {
    pub seed: u64,
    pub n: usize,
    pub var_lambda: f64,
    pub pos_norm: f64,
    pub sym_norm: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Random logit matrix with prefix size `s`. Entries mix a positional part,
/// a symbolic part and noise so every corner of the plane gets exercised.
pub fn random_logit_matrix(rng: &mut impl Rng, s: usize) -> LogitMatrix {
    let scale: f64 = 10f64.powf(rng.random_range(-3.0..2.0));
    let (wp, ws, wn): (f64, f64, f64) = (rng.random(), rng.random(), rng.random::<f64>().powi(3));
    let col: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
    let row: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a = Array2::from_shape_fn((s, s), |(k, j)| {
        scale * (wp * col[j] + ws * row[k] + wn * rng.random_range(-1.0..1.0))
    });
    LogitMatrix { a }
}

/// Exclusion fuzzing over prefix sizes `sizes`, one record per sample. Each
/// sample draws from its own generator seeded by `root_seed + index`.
pub fn exclusion_fuzz(
    root_seed: u64,
    samples: usize,
    sizes: std::ops::RangeInclusive<usize>,
) -> Result<Vec<FuzzRecord>> {
    use rayon::prelude::*;
    if sizes.is_empty() || *sizes.start() == 0 {
        return invalid("fuzz sizes must be a non-empty range of positive prefix lengths");
    }
    let (lo, hi) = (*sizes.start(), *sizes.end());
    Ok((0..samples as u64)
        .into_par_iter()
        .map(|idx| {
            let seed = root_seed.wrapping_add(idx);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = rng.random_range(lo..=hi);
            let m = random_logit_matrix(&mut rng, s);
            let r = exclusion_check(&m);
            FuzzRecord {
                seed,
                n: s + 1,
                var_lambda: r.var_lambda,
                pos_norm: r.pos_norm_sq_normalized,
                sym_norm: r.sym_norm_sq_normalized,
                bound: r.bound,
                holds: r.holds,
            }
        })
        .collect())
}

/// Writes fuzz records as CSV with the stable column order
/// `seed,n,var_lambda,pos_norm,sym_norm,bound,holds`.
pub fn write_fuzz_csv<W: std::io::Write>(records: &[FuzzRecord], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::Io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{HeadSpec, RotationSchedule};
    use itertools::Itertools;
    use ndarray::array;
    use proptest::prelude::*;

    /// Brute-force norms: average over every permutation of the prefix and
    /// every slot.
    fn enumerated_norms(m: &LogitMatrix) -> (f64, f64) {
        let s = m.size();
        let (mut pos, mut sym, mut count) = (0.0, 0.0, 0usize);
        for pi in (0..s).permutations(s) {
            for j in 0..s {
                // Positional: vector pi(j) placed at slot j.
                let dp = m.get(pi[j], j) - m.get(j, j);
                // Symbolic: vector j placed at slot pi(j).
                let ds = m.get(j, pi[j]) - m.get(j, j);
                pos += dp * dp;
                sym += ds * ds;
            }
            count += s;
        }
        (pos / count as f64, sym / count as f64)
    }

    fn rel_close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn hand_enumerated_two_by_two() {
        let m = LogitMatrix::new(array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert_eq!(delta_pos_norm_sq(&m), 0.5);
        assert_eq!(delta_sym_norm_sq(&m), 0.0);
        let one = LogitMatrix::new(array![[3.0]]).unwrap();
        assert_eq!(delta_pos_norm_sq(&one), 0.0);
    }

    #[test]
    fn pair_average_equals_permutation_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for s in 1..=6 {
            for _ in 0..5 {
                let m = random_logit_matrix(&mut rng, s);
                let (pos, sym) = enumerated_norms(&m);
                assert!(rel_close(delta_pos_norm_sq(&m), pos, 1e-12), "s={s}");
                assert!(rel_close(delta_sym_norm_sq(&m), sym, 1e-12), "s={s}");
                let (hp, hs) = enumerated_delta_norms(&m).unwrap();
                assert!(rel_close(hp, pos, 1e-12) && rel_close(hs, sym, 1e-12), "s={s}");
            }
        }
    }

    #[test]
    fn constant_columns_and_rows() {
        let cols = LogitMatrix::new(array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(delta_pos_norm_sq(&cols), 0.0);
        assert!(is_positional(&cols, 0.0));
        assert!(!is_symbolic(&cols, 1e-9));
        let rows = cols.transpose();
        assert_eq!(delta_sym_norm_sq(&rows), 0.0);
        assert!(is_symbolic(&rows, 0.0));
    }

    #[test]
    fn both_behaviors_force_uniform_logits() {
        let m = LogitMatrix::new(Array2::from_elem((4, 4), 0.37)).unwrap();
        assert!(is_positional(&m, 1e-12) && is_symbolic(&m, 1e-12));
        let r = exclusion_check(&m);
        assert_eq!(r.bound, 0.0);
        assert_eq!(r.var_lambda, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn nope_head_matrix_has_constant_rows() {
        let q = array![[1.0, 0.5, -0.3], [0.2, -1.0, 0.7]];
        let k = array![[0.4, 0.1, 0.9], [-0.6, 0.3, 0.2]];
        let head = HeadSpec::new(q, k, RotationSchedule::nope(1).unwrap()).unwrap();
        let xbar = EmbeddedSequence::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.3, 0.3, 0.3],
        ])
        .unwrap();
        let m = logit_matrix(&head, &xbar).unwrap();
        assert!(is_symbolic(&m, 1e-12));
        assert!(!is_positional(&m, 1e-9));
        // A rotating head is not symbolic on the same input.
        let q = array![[1.0, 0.5, -0.3], [0.2, -1.0, 0.7]];
        let k = array![[0.4, 0.1, 0.9], [-0.6, 0.3, 0.2]];
        let rot = HeadSpec::new(q, k, RotationSchedule::from_angles(vec![0.4]).unwrap()).unwrap();
        assert!(!is_symbolic(&logit_matrix(&rot, &xbar).unwrap(), 1e-9));
    }

    #[test]
    fn constant_input_is_positional() {
        let q = array![[1.0, 0.5], [0.2, -1.0]];
        let k = array![[0.4, 0.1], [-0.6, 0.3]];
        let head = HeadSpec::new(q, k, RotationSchedule::from_angles(vec![0.9]).unwrap()).unwrap();
        let xbar = EmbeddedSequence::from_rows(&vec![vec![0.3, -0.8]; 6]).unwrap();
        assert!(is_positional(&logit_matrix(&head, &xbar).unwrap(), 1e-12));
    }

    #[test]
    fn logit_matrix_needs_two_tokens() {
        let head = HeadSpec::new(
            array![[1.0, 0.0], [0.0, 1.0]],
            array![[1.0, 0.0], [0.0, 1.0]],
            RotationSchedule::nope(1).unwrap(),
        )
        .unwrap();
        let one = EmbeddedSequence::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(logit_matrix(&head, &one).is_err());
        let two = EmbeddedSequence::from_rows(&[vec![2.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let m = logit_matrix(&head, &two).unwrap();
        assert_eq!(m.size(), 1);
        assert_eq!(m.get(0, 0), 2.0);
    }

    #[test]
    fn fuzz_is_deterministic_and_holds() {
        let a = exclusion_fuzz(99, 500, 2..=12).unwrap();
        let b = exclusion_fuzz(99, 500, 2..=12).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.holds));
        assert!(a.iter().all(|r| (3..=13).contains(&r.n)));
        let mut buf = Vec::new();
        write_fuzz_csv(&a[..2], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("seed,n,var_lambda,pos_norm,sym_norm,bound,holds\n"));
        assert!(!text.contains('\r'));
    }

    proptest! {
        #[test]
        fn exclusion_holds(seed in any::<u64>(), s in 2usize..=12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_logit_matrix(&mut rng, s);
            prop_assert!(exclusion_check(&m).holds);
        }

        #[test]
        fn sym_is_pos_of_transpose(seed in any::<u64>(), s in 1usize..=10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_logit_matrix(&mut rng, s);
            prop_assert_eq!(delta_sym_norm_sq(&m), delta_pos_norm_sq(&m.transpose()));
        }

        #[test]
        fn exact_behaviors_pin_the_diagonal(base in -5.0f64..5.0, seed in any::<u64>(), s in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = 10f64.powf(rng.random_range(-14.0..-11.0));
            let m = LogitMatrix::new(Array2::from_shape_fn((s, s), |_| base + noise * rng.random_range(-1.0..1.0))).unwrap();
            if is_positional(&m, 1e-12) && is_symbolic(&m, 1e-12) {
                let d = m.diagonal();
                let spread = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - d.iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert!(spread <= 2e-12);
            }
        }
    }
}
