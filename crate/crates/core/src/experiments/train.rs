//! `train`: one training run with history, checkpoint and trajectories.

use super::output::num;
use super::svg::{Chart, ChartKind, Series};
use super::{CommandOutcome, ExitStatus, RunContext, Table};
use crate::error::{Error, Result};
use crate::trainer::{train, EpochRecord, QkSnapshot, TrainConfig};

pub fn history_table(history: &[EpochRecord], context_len: usize) -> Table {
    let mut header: Vec<String> = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
        .into_iter()
        .map(String::from)
        .collect();
    header.extend((1..=context_len).map(|p| format!("pos_{p}")));
    let mut t = Table::new(header);
    for r in history {
        let mut row = vec![
            r.epoch.to_string(),
            num(r.train_loss),
            num(r.train_acc),
            num(r.val_loss),
            num(r.val_acc),
        ];
        row.extend(r.per_position_val_acc.iter().map(|&v| num(v)));
        t.push(row);
    }
    t
}

/// Rows `epoch, token, role, x, y`.
pub fn trajectory_table(snaps: &[QkSnapshot]) -> Table {
    let mut t = Table::new(["epoch", "token", "role", "x", "y"]);
    for s in snaps {
        for (role, pts) in [("query", &s.queries), ("key", &s.keys)] {
            for (tok, p) in pts.iter().enumerate() {
                t.push(vec![
                    s.epoch.to_string(),
                    tok.to_string(),
                    role.into(),
                    num(p[0]),
                    num(p[1]),
                ]);
            }
        }
    }
    t
}

pub fn run_train(cfg: &TrainConfig, ctx: &RunContext) -> Result<CommandOutcome> {
    let cfg = TrainConfig {
        seed: ctx.seed,
        ..cfg.clone()
    };
    cfg.validate()?;
    let mut out = ctx.output("train", &cfg)?;
    let run = match train(&cfg) {
        Ok(run) => run,
        Err(e @ Error::Diverged { .. }) => {
            return Ok(CommandOutcome::new(ExitStatus::Violation, vec![e.to_string()], &out));
        }
        Err(e) => return Err(e),
    };
    out.csv("history.csv", &history_table(&run.history, cfg.n - 1))?;
    out.raw_json("checkpoint.json", &run.checkpoint()?)?;
    if cfg.log_qk {
        out.csv("qk_trajectory.csv", &trajectory_table(&run.trajectory))?;
    }
    let curve = |f: fn(&EpochRecord) -> f64| run.history.iter().map(|r| (r.epoch as f64, f(r))).collect();
    let chart = Chart::new(
        ChartKind::Line,
        format!("{} at base angle {}", cfg.task.name(), cfg.base_angle),
        "epoch",
        "accuracy",
    )
    .with_y_range(0.0, 1.0)
    .with_series(Series::new("train", curve(|r| r.train_acc)))
    .with_series(Series::new("val", curve(|r| r.val_acc)));
    out.svg("accuracy.svg", &chart)?;
    let last = run.final_record();
    let summary = vec![format!(
        "{} base_angle={} epochs={} final train_acc={:.4} val_acc={:.4} val_loss={:.4}",
        cfg.task.name(),
        cfg.base_angle,
        last.epoch,
        last.train_acc,
        last.val_acc,
        last.val_loss
    )];
    Ok(CommandOutcome::new(ExitStatus::Pass, summary, &out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::TaskKind;
    use crate::trainer::Checkpoint;

    #[test]
    fn writes_history_checkpoint_and_trajectory() {
        let cfg = TrainConfig {
            task: TaskKind::Index,
            n: 9,
            m_sym: 4,
            k_int: 8,
            epochs: 2,
            batch_size: 16,
            train_size: 64,
            val_size: 32,
            d_model: 8,
            log_qk: true,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let o = run_train(&cfg, &RunContext::new(7, dir.path(), 1)).unwrap();
        assert_eq!(o.status, ExitStatus::Pass);
        let hist = super::super::output::read_table(&dir.path().join("history.csv")).unwrap();
        assert_eq!(hist.rows.len(), 2);
        let traj = super::super::output::read_table(&dir.path().join("qk_trajectory.csv")).unwrap();
        // Three snapshots, two roles, 12 tokens.
        assert_eq!(traj.rows.len(), 3 * 2 * 12);
        let ck: Checkpoint =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("checkpoint.json")).unwrap()).unwrap();
        assert_eq!(ck.seed, 7);
        assert_eq!(ck.d_model, 8);
    }
}
