//! Positional/symbolic scores of the constructed heads, overall and per
//! frequency.

use posym::experiments::score::{score_heads, HeadSource, ScoreConfig};

fn main() -> posym::Result<()> {
    let rows = score_heads(&ScoreConfig::default(), 0)?;
    for r in &rows {
        let freq = r.frequency.map_or("all".to_string(), |f| format!("plane {f}"));
        println!("{:<8} {:<8} s_pos={:+.4} s_sym={:+.4}", r.head, freq, r.s_pos, r.s_sym);
    }
    let random = ScoreConfig {
        source: HeadSource::Random {
            count: 3,
            d_in: 16,
            planes: 4,
        },
        inputs: 4,
        ..ScoreConfig::default()
    };
    for r in score_heads(&random, 1)?.iter().filter(|r| r.frequency.is_none()) {
        println!("{:<8} all      s_pos={:+.4} s_sym={:+.4}", r.head, r.s_pos, r.s_sym);
    }
    Ok(())
}
