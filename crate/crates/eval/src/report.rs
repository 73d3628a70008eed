//! Text reports and line-delimited summaries.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use taskpilot_server::SessionMode;

use crate::instruct::InstructReport;
use crate::metrics::{relative_reduction, ModeAggregate};

const BAR_WIDTH: usize = 20;

pub const TABLE_HEADER: &str =
    "Interaction approach |  n | min, s | max, s | mean, s |  sd, s | wrong actions";

/// Reference rows (min, max, mean) the study table was modelled on, and
/// the reductions its text quotes for mean and max time.
pub const REFERENCE_BASELINE: (f64, f64, f64) = (53.2, 164.4, 112.6);
pub const REFERENCE_DIALOGUE: (f64, f64, f64) = (56.5, 142.2, 96.8);
pub const REFERENCE_QUOTED_REDUCTIONS: (f64, f64) = (0.137, 0.208);

pub fn table_row(a: &ModeAggregate) -> String {
    let mut row = format!(
        "{:<20} | {:>2} | {:>6.1} | {:>6.1} | {:>7.1} | {:>6.2} | {:>13.1}",
        a.mode.as_str(),
        a.completed,
        a.min,
        a.max,
        a.mean,
        a.sd,
        a.mean_wrong
    );
    if a.low_n {
        row.push_str("  (low n)");
    }
    row
}

fn percent(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

/// Execution-time table, one row per mode, plus the relative reductions
/// when both modes are present.
pub fn render_study(aggregates: &[ModeAggregate]) -> String {
    let mut out = String::new();
    out.push_str(TABLE_HEADER);
    out.push('\n');
    out.push_str(&"-".repeat(TABLE_HEADER.len()));
    out.push('\n');
    for a in aggregates {
        out.push_str(&table_row(a));
        out.push('\n');
    }
    let find = |m: SessionMode| aggregates.iter().find(|a| a.mode == m);
    if let (Some(b), Some(d)) = (find(SessionMode::BaselineText), find(SessionMode::AssistantDialogue)) {
        out.push('\n');
        if let Some(r) = relative_reduction(b.mean, d.mean) {
            let _ = writeln!(out, "Mean time reduction, dialogue vs baseline: {}", percent(r));
        }
        if let Some(r) = relative_reduction(b.max, d.max) {
            let _ = writeln!(out, "Max time reduction, dialogue vs baseline: {}", percent(r));
        }
    }
    out.push('\n');
    out.push_str(&discrepancy_note());
    out
}

/// Reductions recomputed from the reference rows next to the quoted ones.
pub fn discrepancy_note() -> String {
    let (_, b_max, b_mean) = REFERENCE_BASELINE;
    let (_, d_max, d_mean) = REFERENCE_DIALOGUE;
    let mean = relative_reduction(b_mean, d_mean).unwrap_or(f64::NAN);
    let max = relative_reduction(b_max, d_max).unwrap_or(f64::NAN);
    format!(
        "Note: the reference study's table rows give a mean reduction of {} ({b_mean} vs {d_mean}) \
         and a max reduction of {} ({b_max} vs {d_max}), while its text quotes {} and {}. \
         Reductions in this report are computed from the raw values.\n",
        percent(mean),
        percent(max),
        percent(REFERENCE_QUOTED_REDUCTIONS.0),
        percent(REFERENCE_QUOTED_REDUCTIONS.1),
    )
}

/// Success-rate bars per (environment, familiarity).
pub fn render_instruct(report: &InstructReport) -> String {
    let mut out = format!("Instructing success rate, backend `{}`\n", report.backend);
    for r in &report.rates {
        let filled = (r.success_rate * BAR_WIDTH as f64).round() as usize;
        let _ = writeln!(
            out,
            "{:<10} {:<10} |{}{}| {:>4} ({}/{})",
            r.environment,
            r.familiarity.as_str(),
            "#".repeat(filled),
            " ".repeat(BAR_WIDTH - filled.min(BAR_WIDTH)),
            format!("{:.0}%", r.success_rate * 100.0),
            r.matched,
            r.total
        );
    }
    out
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("serializable record") + "\n")
        .collect()
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> io::Result<()> {
    fs::write(path, to_jsonl(items))
}
