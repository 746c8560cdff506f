//! Partial Induction with one plane versus two planes (one of them NoPE).

use posym::tasks::TaskKind;
use posym::trainer::{train, two_frequency_variant, TrainConfig};

fn main() -> posym::Result<()> {
    let cfg = TrainConfig {
        task: TaskKind::PartialInduction,
        epochs: 20,
        ..TrainConfig::default()
    };
    for base in [0.1, 1.0] {
        let one = train(&TrainConfig {
            base_angle: base,
            ..cfg.clone()
        })?;
        let two = two_frequency_variant(&cfg, 0.0, base)?;
        println!(
            "base angle {base}: one plane {:.3}, planes (0, {base}) {:.3}",
            one.final_record().val_acc,
            two.final_record().val_acc
        );
    }
    Ok(())
}
