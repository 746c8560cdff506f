//! Closed-form peak attention of the positional and symbolic heads as the
//! answer moves through the context.

use std::f64::consts::PI;

use posym::heads::{classify_shape, w_max_pos_profile, w_max_sym_profile};

fn main() -> posym::Result<()> {
    for n in [5, 9, 17, 33, 65] {
        let pos = w_max_pos_profile(n, PI / n as f64)?;
        let sym = w_max_sym_profile(n)?;
        println!(
            "n={n:<3} positional {:?} (min at {:?})  symbolic {:?}",
            classify_shape(&pos)?.kind,
            classify_shape(&pos)?.breakpoint,
            classify_shape(&sym)?.kind
        );
    }
    let prof = w_max_pos_profile(9, PI / 9.0)?;
    println!("n=9 positional profile: {prof:.4?}");
    Ok(())
}
