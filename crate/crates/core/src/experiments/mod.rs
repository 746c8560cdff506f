//! Reproducible experiments with CSV, JSON and SVG outputs. Each `run_*`
//! function backs one subcommand of the `posym` binary.

pub mod output;
pub mod score;
pub mod shapes;
pub mod svg;
pub mod sweep;
pub mod train;
pub mod verify;

use std::path::PathBuf;

use serde::Serialize;

use crate::error::Result;
pub use output::{ExitStatus, OutputDir, Provenance, Table};

/// Settings shared by every command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunContext {
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
}

impl RunContext {
    pub fn new(seed: u64, out: impl Into<PathBuf>, workers: usize) -> Self {
        Self {
            seed,
            out: out.into(),
            workers: workers.max(1),
        }
    }

    /// Output directory stamped with `command` and its config.
    pub fn output<C: Serialize>(&self, command: &str, config: &C) -> Result<OutputDir> {
        let prov = Provenance::new(&serde_json::json!({ "command": command, "config": config }), self.seed)?;
        OutputDir::create(&self.out, prov)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub status: ExitStatus,
    /// One line per check or headline number.
    pub summary: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl CommandOutcome {
    fn new(status: ExitStatus, summary: Vec<String>, out: &OutputDir) -> Self {
        Self {
            status,
            summary,
            files: out.written().to_vec(),
        }
    }
}

/// `verify-theory`: report JSON, fuzz CSV, per-check table.
pub fn run_verify_theory(cfg: &verify::VerifyConfig, ctx: &RunContext) -> Result<CommandOutcome> {
    let mut out = ctx.output("verify-theory", cfg)?;
    let report = verify::verify_theory(cfg, ctx.seed)?;
    let mut fuzz = Table::new(["seed", "n", "var_lambda", "pos_norm", "sym_norm", "bound", "holds"]);
    for r in &report.fuzz {
        fuzz.push(vec![
            r.seed.to_string(),
            r.n.to_string(),
            output::num(r.var_lambda),
            output::num(r.pos_norm),
            output::num(r.sym_norm),
            output::num(r.bound),
            r.holds.to_string(),
        ]);
    }
    out.csv("exclusion_fuzz.csv", &fuzz)?;
    out.json("verify_report.json", &report)?;
    let summary = report
        .checks
        .iter()
        .map(|c| {
            format!(
                "{:<32} {:?} checked={} failures={} {}",
                c.name, c.status, c.checked, c.failures, c.detail
            )
        })
        .collect();
    let status = if report.passed() {
        ExitStatus::Pass
    } else {
        ExitStatus::Violation
    };
    Ok(CommandOutcome::new(status, summary, &out))
}

/// `score`: per-head and per-plane scores, plane scatter and per-plane lines.
pub fn run_score(cfg: &score::ScoreConfig, ctx: &RunContext) -> Result<CommandOutcome> {
    use svg::{Chart, ChartKind, Series};
    let mut out = ctx.output("score", cfg)?;
    let rows = score::score_heads(cfg, ctx.seed)?;
    let mut t = Table::new(["head", "frequency", "theta", "s_pos", "s_sym"]);
    for r in &rows {
        t.push(vec![
            r.head.clone(),
            r.frequency.map_or_else(|| "all".into(), |f| f.to_string()),
            r.theta.map_or_else(String::new, output::num),
            output::num(r.s_pos),
            output::num(r.s_sym),
        ]);
    }
    out.csv("scores.csv", &t)?;

    let mut plane = Chart::new(ChartKind::Scatter, "Positional-symbolic plane", "s_pos", "s_sym")
        .with_x_range(-1.0, 1.0)
        .with_y_range(-1.0, 1.0);
    let mut per_freq = Chart::new(ChartKind::Line, "Per-frequency scores", "plane", "score").with_y_range(-1.0, 1.0);
    let mut heads: Vec<&str> = rows.iter().map(|r| r.head.as_str()).collect();
    heads.dedup();
    for h in heads {
        let agg: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.head == h && r.frequency.is_none())
            .map(|r| (r.s_pos, r.s_sym))
            .collect();
        plane = plane.with_series(Series::new(h, agg));
        let planes: Vec<&score::ScoreRow> = rows.iter().filter(|r| r.head == h && r.frequency.is_some()).collect();
        if planes.len() > 1 {
            let pts = |f: fn(&score::ScoreRow) -> f64| {
                planes.iter().map(|r| (r.frequency.unwrap_or(0) as f64, f(r))).collect()
            };
            per_freq = per_freq
                .with_series(Series::new(format!("{h} s_pos"), pts(|r| r.s_pos)))
                .with_series(Series::new(format!("{h} s_sym"), pts(|r| r.s_sym)));
        }
    }
    out.svg("ps_plane.svg", &plane)?;
    if !per_freq.series.is_empty() {
        out.svg("per_frequency.svg", &per_freq)?;
    }
    let summary = rows
        .iter()
        .filter(|r| r.frequency.is_none())
        .map(|r| format!("{:<16} s_pos={:.4} s_sym={:.4}", r.head, r.s_pos, r.s_sym))
        .collect();
    Ok(CommandOutcome::new(ExitStatus::Pass, summary, &out))
}

pub use shapes::run_shapes;
pub use sweep::run_sweep;
pub use train::run_train;
