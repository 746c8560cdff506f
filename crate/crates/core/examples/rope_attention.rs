//! Build a two-plane rotary head, inspect its logits, attention and the
//! per-frequency decomposition.

use ndarray::array;
use posym::attention::{attention_row, frequency_decompose, logit_row, EmbeddedSequence, HeadSpec, RotationSchedule};

fn main() -> posym::Result<()> {
    // Two planes: a NoPE plane and a plane turning by pi/8 per position.
    let q = array![[1.0, 0.0, 0.5], [0.0, 1.0, 0.0], [0.3, 0.0, 1.0], [0.0, 0.2, 0.0]];
    let k = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.5, 0.5, 0.0]];
    let head = HeadSpec::new(
        q,
        k,
        RotationSchedule::from_angles(vec![0.0, std::f64::consts::PI / 8.0])?,
    )?;

    let x = EmbeddedSequence::from_rows(&[
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![1.0, 1.0, 0.0],
        vec![0.2, 0.1, 0.9],
    ])?;
    let n = x.len();
    let logits = logit_row(&head, &x, n)?;
    let attn = attention_row(&logits)?;
    println!("logits of the final query: {:?}", logits.values());
    println!("attention weights:         {:?}", attn.weights());

    let dec = frequency_decompose(&head, &x, n)?;
    for (t, row) in dec.rows.iter().enumerate() {
        println!("plane {t}: logits {row:?} mean key norm {:.3}", dec.key_norms[t]);
    }
    println!("{}", serde_json::to_string_pretty(&head)?);
    Ok(())
}
