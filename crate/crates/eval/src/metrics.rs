//! Per-mode execution-time statistics over completed sessions.

use serde::{Deserialize, Serialize};
use taskpilot_server::protocol::Summary;
use taskpilot_server::SessionMode;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no completed runs for {0}")]
    NoCompletedRuns(String),
}

impl MetricsError {
    pub fn code(&self) -> &'static str {
        "NO_COMPLETED_RUNS"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub mode: SessionMode,
    /// Runs seen for this mode, completed or not.
    pub runs: usize,
    pub completed: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd: f64,
    pub mean_wrong: f64,
    pub low_n: bool,
}

/// Mean and sample sd in one pass (Welford). Values are sorted first so the
/// result does not depend on input order.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, x) in sorted.iter().enumerate() {
        let d = x - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (x - mean);
    }
    let sd = if sorted.len() > 1 {
        (m2 / (sorted.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Aggregates for each mode present in `summaries`, in BASELINE_TEXT,
/// ASSISTANT_DIALOGUE order. Only completed runs with an elapsed time count.
pub fn study_metrics(summaries: &[Summary]) -> Result<Vec<ModeAggregate>, MetricsError> {
    if summaries.is_empty() {
        return Err(MetricsError::NoCompletedRuns("any mode".into()));
    }
    let mut out = Vec::new();
    for mode in SessionMode::ALL {
        let runs: Vec<&Summary> = summaries.iter().filter(|s| s.mode == mode).collect();
        if runs.is_empty() {
            continue;
        }
        let done: Vec<(f64, u32)> = runs
            .iter()
            .filter(|s| s.completed)
            .filter_map(|s| s.elapsed_seconds.map(|e| (e, s.wrong_action_count)))
            .collect();
        if done.is_empty() {
            return Err(MetricsError::NoCompletedRuns(mode.to_string()));
        }
        let elapsed: Vec<f64> = done.iter().map(|d| d.0).collect();
        let wrong: Vec<f64> = done.iter().map(|d| d.1 as f64).collect();
        let (mean, sd) = mean_sd(&elapsed);
        out.push(ModeAggregate {
            mode,
            runs: runs.len(),
            completed: done.len(),
            min: elapsed.iter().copied().fold(f64::INFINITY, f64::min),
            max: elapsed.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean,
            sd,
            mean_wrong: mean_sd(&wrong).0,
            low_n: done.len() < 2,
        });
    }
    Ok(out)
}

/// `(a - b) / a`; `None` unless `a` is positive and both are finite.
pub fn relative_reduction(a_mean: f64, b_mean: f64) -> Option<f64> {
    (a_mean > 0.0 && a_mean.is_finite() && b_mean.is_finite()).then(|| (a_mean - b_mean) / a_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(mode: SessionMode, elapsed: f64, wrong: u32) -> Summary {
        Summary {
            scenario: "kitchen".into(),
            task: "kitchen_fruit".into(),
            mode,
            completed: true,
            elapsed_seconds: Some(elapsed),
            wrong_action_count: wrong,
        }
    }

    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        (mean, if xs.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 })
    }

    #[test]
    fn one_two_three() {
        let s: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&e| run(SessionMode::BaselineText, e, 1)).collect();
        let agg = study_metrics(&s).unwrap();
        assert_eq!(agg.len(), 1);
        assert_eq!((agg[0].mean, agg[0].sd, agg[0].min, agg[0].max), (2.0, 1.0, 1.0, 3.0));
        assert!(!agg[0].low_n);
    }

    #[test]
    fn single_run_is_low_n() {
        let agg = study_metrics(&[run(SessionMode::AssistantDialogue, 9.5, 2)]).unwrap();
        assert_eq!((agg[0].sd, agg[0].low_n, agg[0].mean_wrong), (0.0, true, 2.0));
    }

    #[test]
    fn incomplete_runs_are_excluded() {
        let mut quit = run(SessionMode::BaselineText, 1000.0, 9);
        quit.completed = false;
        quit.elapsed_seconds = None;
        let agg = study_metrics(&[quit.clone(), run(SessionMode::BaselineText, 4.0, 1)]).unwrap();
        assert_eq!((agg[0].runs, agg[0].completed, agg[0].max, agg[0].mean_wrong), (2, 1, 4.0, 1.0));

        let err = study_metrics(&[quit, run(SessionMode::AssistantDialogue, 3.0, 0)]).unwrap_err();
        assert_eq!(err.code(), "NO_COMPLETED_RUNS");
        assert_eq!(study_metrics(&[]).unwrap_err().code(), "NO_COMPLETED_RUNS");
    }

    #[test]
    fn reductions() {
        assert!((relative_reduction(112.6, 96.8).unwrap() - 0.1403).abs() < 1e-4);
        assert_eq!(relative_reduction(7.0, 7.0), Some(0.0));
        assert_eq!(relative_reduction(100.0, 50.0), Some(0.5));
        assert_eq!(relative_reduction(0.0, 1.0), None);
    }

    proptest! {
        #[test]
        fn welford_agrees_with_two_pass(xs in prop::collection::vec(0.0f64..1000.0, 1..60)) {
            let (m1, s1) = mean_sd(&xs);
            let (m2, s2) = two_pass(&xs);
            prop_assert!((m1 - m2).abs() <= 1e-9 * m2.abs().max(1e-300));
            prop_assert!((s1 - s2).abs() <= 1e-9 * s2.abs().max(1e-12));
            prop_assert!(s1 >= 0.0);
        }

        #[test]
        fn order_does_not_matter(mut xs in prop::collection::vec(0.0f64..1000.0, 1..40), seed in any::<u64>()) {
            let before = mean_sd(&xs);
            let n = xs.len();
            xs.rotate_left((seed as usize) % n);
            xs.reverse();
            prop_assert_eq!(before, mean_sd(&xs));
        }
    }
}
