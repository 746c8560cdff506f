//! Train the single-frequency model on Index and report its accuracy per
//! epoch. Pass `--epochs <k>` and `--base-angle <b>` to change the run.

use posym::tasks::TaskKind;
use posym::trainer::{train_observed, TrainConfig};

fn arg(name: &str) -> Option<String> {
    let args: Vec<String> = std::env::args().collect();
    args.iter()
        .position(|a| a == name)
        .and_then(|i| args.get(i + 1).cloned())
}

fn main() -> posym::Result<()> {
    let cfg = TrainConfig {
        task: arg("--task").map_or(Ok(TaskKind::Index), |t| t.parse())?,
        base_angle: arg("--base-angle").and_then(|v| v.parse().ok()).unwrap_or(1.0),
        epochs: arg("--epochs").and_then(|v| v.parse().ok()).unwrap_or(20),
        ..TrainConfig::default()
    };
    println!(
        "{} at base angle {} (theta = {:.4}), {} epochs",
        cfg.task,
        cfg.base_angle,
        cfg.angles()[0],
        cfg.epochs
    );
    let run = train_observed(&cfg, &cfg.train_data()?, &cfg.val_data()?, |r, _| {
        println!(
            "epoch {:>3}  loss {:.4}  train {:.3}  val {:.3}",
            r.epoch, r.train_loss, r.train_acc, r.val_acc
        );
    })?;
    let ck = run.checkpoint()?;
    println!("checkpoint: d_model={} planes={}", ck.d_model, run.model.planes());
    Ok(())
}
