//! Text emitters: training reports (with the effective-config echo),
//! metrics rows, and skewness curves. All files carry a format-version
//! header line and render deterministically.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use viewrank_core::train::TrainReport;

pub fn render_report(echo: &[(&'static str, String)], report: &TrainReport) -> String {
    let mut out = String::from("#viewrank report v1\n");
    for (key, value) in echo {
        out.push_str(&format!("# {key} = {value}\n"));
    }
    out.push_str(&format!("# best_epoch = {}\n", report.best_epoch));
    out.push_str("epoch\tsteps\ttrain_loss\tval_loss\thr\tndcg\tseconds\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.epoch, row.steps, row.train_loss, row.val_loss, row.hr, row.ndcg, row.seconds
        ));
    }
    out
}

pub fn write_report(
    path: &Path,
    echo: &[(&'static str, String)],
    report: &TrainReport,
) -> Result<()> {
    fs::write(path, render_report(echo, report))
        .with_context(|| format!("writing report {}", path.display()))
}

/// One evaluation result row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub label: String,
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
}

pub fn render_metrics(rows: &[MetricsRow]) -> String {
    let mut out = String::from("#viewrank metrics v1\nmodel\tk\thr\tndcg\n");
    for row in rows {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", row.label, row.k, row.hr, row.ndcg));
    }
    out
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    fs::write(path, render_metrics(rows))
        .with_context(|| format!("writing metrics {}", path.display()))
}

/// Evaluation grid for a skewness curve: the decade points 0.001, 0.01,
/// 0.1, 1.0 plus every per-item breakpoint for small item universes.
pub fn skew_grid(breakpoints: &[(f64, f64)]) -> Vec<(f64, f64)> {
    const DECADES: [f64; 4] = [0.001, 0.01, 0.1, 1.0];
    const SMALL_ITEM_LIMIT: usize = 10_000;

    let n = breakpoints.len();
    let mut grid: Vec<(f64, f64)> = Vec::new();
    if n == 0 {
        return grid;
    }

    // Step-function value at x: the share carried by the top floor(x*n)
    // items.
    let value_at = |x: f64| -> f64 {
        let k = (x * n as f64).floor() as usize;
        if k == 0 {
            0.0
        } else {
            breakpoints[k.min(n) - 1].1
        }
    };

    for &x in &DECADES {
        grid.push((x, value_at(x)));
    }
    if n <= SMALL_ITEM_LIMIT {
        grid.extend_from_slice(breakpoints);
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    grid.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    grid
}

pub fn render_skew(behavior: &str, points: &[(f64, f64)]) -> String {
    let mut out = format!("#viewrank skew v1\t{behavior}\nx\ty\n");
    for (x, y) in points {
        out.push_str(&format!("{x}\t{y}\n"));
    }
    out
}

pub fn write_skew(path: &Path, behavior: &str, points: &[(f64, f64)]) -> Result<()> {
    fs::write(path, render_skew(behavior, points))
        .with_context(|| format!("writing skew curve {}", path.display()))
}
