//! Positional and symbolic deviations of logit matrices, and a fuzzing run of
//! the variance bound.

use ndarray::array;
use posym::behavior::{
    delta_pos_norm_sq, delta_sym_norm_sq, enumerated_delta_norms, exclusion_check, exclusion_fuzz, is_positional,
    is_symbolic, LogitMatrix,
};

fn main() -> posym::Result<()> {
    // Columns constant: logits depend on the slot only.
    let positional = LogitMatrix::new(array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])?;
    let symbolic = positional.transpose();
    for (name, m) in [("positional", &positional), ("symbolic", &symbolic)] {
        let r = exclusion_check(m);
        println!(
            "{name:<11} positional={} symbolic={} pos={:.3} sym={:.3} var={:.3} bound={:.3}",
            is_positional(m, 1e-12),
            is_symbolic(m, 1e-12),
            delta_pos_norm_sq(m),
            delta_sym_norm_sq(m),
            r.var_lambda,
            r.bound
        );
    }
    let (p, s) = enumerated_delta_norms(&positional)?;
    println!("by permutation enumeration: pos={p:.3} sym={s:.3}");

    let records = exclusion_fuzz(7, 10_000, 2..=12)?;
    let held = records.iter().filter(|r| r.holds).count();
    let tightest = records
        .iter()
        .map(|r| r.var_lambda / r.bound.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    println!(
        "fuzz: {held}/{} samples satisfy the bound, tightest ratio {tightest:.4}",
        records.len()
    );
    Ok(())
}
