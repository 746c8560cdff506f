//! `sweep`: accuracy over the base-angle grid.

use serde::{Deserialize, Serialize};

use super::output::num;
use super::svg::{Chart, ChartKind, Series};
use super::{CommandOutcome, ExitStatus, RunContext, Table};
use crate::error::{invalid, Result};
use crate::tasks::TaskKind;
use crate::trainer::{frequency_sweep, SweepResult, TrainConfig, DEFAULT_BASE_ANGLES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub base_angles: Vec<f64>,
    pub tasks: Vec<TaskKind>,
    /// 2 sweeps a second plane while the first stays at `first_base_angle`.
    pub planes: usize,
    pub first_base_angle: f64,
    pub train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            base_angles: DEFAULT_BASE_ANGLES.to_vec(),
            tasks: vec![TaskKind::Index, TaskKind::Retrieval],
            planes: 1,
            first_base_angle: 0.0,
            train: TrainConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn template(&self) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        match self.planes {
            1 => t.second_base_angle = None,
            2 => {
                t.base_angle = self.first_base_angle;
                t.second_base_angle = Some(0.0);
            }
            p => return invalid(format!("sweep supports 1 or 2 planes, got {p}")),
        }
        Ok(t)
    }
}

/// Headline numbers of a finished sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub final_val_acc: Vec<(TaskKind, f64, f64)>,
    pub best_angle: Vec<(TaskKind, f64)>,
    /// Best Index angle strictly above the best Retrieval angle; `None`
    /// unless both tasks were swept.
    pub tension_holds: Option<bool>,
    pub failed_cells: usize,
}

pub fn summarize(result: &SweepResult, cfg: &SweepConfig) -> SweepSummary {
    let mut final_val_acc = Vec::new();
    let mut best_angle = Vec::new();
    for &task in &cfg.tasks {
        for &a in &cfg.base_angles {
            if let Some(acc) = result.final_val_acc(task, a) {
                final_val_acc.push((task, a, acc));
            }
        }
        if let Some(a) = result.best_angle(task) {
            best_angle.push((task, a));
        }
    }
    let best = |t: TaskKind| best_angle.iter().find(|(k, _)| *k == t).map(|&(_, a)| a);
    let tension_holds = match (best(TaskKind::Index), best(TaskKind::Retrieval)) {
        (Some(i), Some(r)) => Some(i > r),
        _ => None,
    };
    SweepSummary {
        final_val_acc,
        best_angle,
        tension_holds,
        failed_cells: result.failures.len(),
    }
}

/// Rows `base_angle, laps, task, epoch, train_acc, val_acc, pos_1..pos_{n-1}`.
pub fn sweep_table(result: &SweepResult, context_len: usize) -> Table {
    let mut header: Vec<String> = ["base_angle", "laps", "task", "epoch", "train_acc", "val_acc"]
        .into_iter()
        .map(String::from)
        .collect();
    header.extend((1..=context_len).map(|p| format!("pos_{p}")));
    let mut t = Table::new(header);
    for r in &result.rows {
        let mut row = vec![
            num(r.base_angle),
            num(r.laps),
            r.task.name().to_string(),
            r.epoch.to_string(),
            num(r.train_acc),
            num(r.val_acc),
        ];
        row.extend(r.per_position_val_acc.iter().map(|&v| num(v)));
        t.push(row);
    }
    t
}

pub fn accuracy_chart(summary: &SweepSummary, cfg: &SweepConfig) -> Chart {
    let mut chart = Chart::new(
        ChartKind::Line,
        "Final validation accuracy by base angle",
        "base angle",
        "accuracy",
    )
    .with_y_range(0.0, 1.0);
    for &task in &cfg.tasks {
        let pts = summary
            .final_val_acc
            .iter()
            .filter(|(t, _, _)| *t == task)
            .map(|&(_, a, acc)| (a, acc))
            .collect();
        chart = chart.with_series(Series::new(task.name(), pts));
    }
    chart
}

pub fn run_sweep(cfg: &SweepConfig, ctx: &RunContext) -> Result<CommandOutcome> {
    let mut cfg = cfg.clone();
    cfg.train.seed = ctx.seed;
    let template = cfg.template()?;
    template.validate()?;
    let mut out = ctx.output("sweep", &cfg)?;
    let result = frequency_sweep(&cfg.base_angles, &cfg.tasks, &template, ctx.workers)?;
    out.csv("sweep.csv", &sweep_table(&result, template.n - 1))?;
    let summary = summarize(&result, &cfg);
    out.json("sweep_summary.json", &summary)?;
    if !result.failures.is_empty() {
        out.json("sweep_failures.json", &result.failures)?;
    }
    out.svg("accuracy_vs_angle.svg", &accuracy_chart(&summary, &cfg))?;

    let mut lines: Vec<String> = summary
        .final_val_acc
        .iter()
        .map(|(t, a, acc)| format!("{:<18} base_angle={a:<5} final_val_acc={acc:.4}", t.name()))
        .collect();
    for f in &result.failures {
        lines.push(format!(
            "FAILED {} base_angle={}: {}",
            f.task.name(),
            f.base_angle,
            f.error
        ));
    }
    if let Some(t) = summary.tension_holds {
        lines.push(format!("best angles {:?} tension_holds={t}", summary.best_angle));
    }
    let ok = result.failures.is_empty() && summary.tension_holds != Some(false);
    let status = if ok { ExitStatus::Pass } else { ExitStatus::Violation };
    Ok(CommandOutcome::new(status, lines, &out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SweepConfig {
        SweepConfig {
            base_angles: vec![0.0, 1.0],
            train: TrainConfig {
                n: 9,
                m_sym: 4,
                k_int: 8,
                epochs: 2,
                batch_size: 16,
                train_size: 128,
                val_size: 64,
                d_model: 8,
                ..TrainConfig::default()
            },
            ..SweepConfig::default()
        }
    }

    #[test]
    fn single_cell_emits_one_row_per_epoch() {
        let cfg = SweepConfig {
            base_angles: vec![1.0],
            tasks: vec![TaskKind::Index],
            ..tiny()
        };
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext::new(3, dir.path(), 1);
        run_sweep(&cfg, &ctx).unwrap();
        let t = super::super::output::read_table(&dir.path().join("sweep.csv")).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.header.len(), 6 + 8);
    }

    #[test]
    fn rerun_reproduces_bytes() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let a = run_sweep(&tiny(), &RunContext::new(5, dir1.path(), 1)).unwrap();
        let b = run_sweep(&tiny(), &RunContext::new(5, dir2.path(), 2)).unwrap();
        assert_eq!(a.files.len(), b.files.len());
        for name in ["sweep.csv", "sweep_summary.json", "accuracy_vs_angle.svg"] {
            assert_eq!(
                std::fs::read(dir1.path().join(name)).unwrap(),
                std::fs::read(dir2.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn bad_plane_count_is_rejected() {
        assert!(SweepConfig { planes: 3, ..tiny() }.template().is_err());
        let two = SweepConfig {
            planes: 2,
            first_base_angle: 0.0,
            ..tiny()
        }
        .template()
        .unwrap();
        assert_eq!(two.second_base_angle, Some(0.0));
    }
}
