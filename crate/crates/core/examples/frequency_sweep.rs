//! A reduced frequency sweep over both tasks. The full protocol is
//! `posym sweep`; this one trains for a few epochs on a coarse grid.

use posym::experiments::sweep::{summarize, SweepConfig};
use posym::tasks::TaskKind;
use posym::trainer::{frequency_sweep, TrainConfig};

fn main() -> posym::Result<()> {
    let cfg = SweepConfig {
        base_angles: vec![0.0, 0.25, 1.0, 2.0],
        train: TrainConfig {
            epochs: 5,
            train_size: 8192,
            val_size: 2048,
            ..TrainConfig::default()
        },
        ..SweepConfig::default()
    };
    let result = frequency_sweep(&cfg.base_angles, &cfg.tasks, &cfg.template()?, 1)?;
    let summary = summarize(&result, &cfg);
    for task in [TaskKind::Index, TaskKind::Retrieval] {
        let accs: Vec<String> = summary
            .final_val_acc
            .iter()
            .filter(|(t, _, _)| *t == task)
            .map(|(_, a, acc)| format!("{a}:{acc:.2}"))
            .collect();
        println!("{task:<10} {}", accs.join("  "));
    }
    println!(
        "best angles {:?}, tension holds: {:?}",
        summary.best_angle, summary.tension_holds
    );
    Ok(())
}
