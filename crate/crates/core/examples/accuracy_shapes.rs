//! Per-position accuracy of partially trained models: low-frequency Index
//! and high-frequency Retrieval.

use posym::experiments::shapes::{trained_shape, TrainedShapeConfig};

fn main() -> posym::Result<()> {
    for cfg in [
        TrainedShapeConfig::low_frequency_index(),
        TrainedShapeConfig::high_frequency_retrieval(),
    ] {
        let s = trained_shape(&cfg)?;
        println!(
            "{} at base angle {}: epoch {:?}, val acc {:.3}, verdict {:?} (expected {:?})",
            s.task,
            s.base_angle,
            s.epoch,
            s.val_acc,
            s.verdict.map(|v| v.kind),
            s.expected
        );
        let pct: Vec<i64> = s.smoothed.iter().map(|v| (100.0 * v).round() as i64).collect();
        println!("  smoothed per-position accuracy (%): {pct:?}");
    }
    Ok(())
}
