use diffpogan_core::trainer::{read_eval_scores, METRICS_FILE, METRICS_HEADER};
use diffpogan_core::{Error, Result};
use std::path::{Path, PathBuf};

/// Trailing evaluations averaged into a run's summary score.
pub const DEFAULT_WINDOW: usize = 3;

/// One line of a report.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub run_dir: PathBuf,
    pub final_step: u64,
    pub evals: usize,
    pub final_normalized_score: f64,
    pub best_normalized_score: f64,
}

/// Mean of the last `window` scores.
pub fn final_score(scores: &[(u64, f64)], window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::Usage("summary window must be at least 1".into()));
    }
    if scores.is_empty() {
        return Err(Error::Usage("run has no evaluations to summarize".into()));
    }
    let tail = &scores[scores.len().saturating_sub(window)..];
    Ok(tail.iter().map(|(_, s)| s).sum::<f64>() / tail.len() as f64)
}

/// Summarizes the metrics file of `run_dir`.
pub fn read_run(run_dir: &Path, window: usize) -> Result<RunReport> {
    let path = run_dir.join(METRICS_FILE);
    let scores = read_eval_scores(&path)?;
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let final_step = text
        .lines()
        .rfind(|l| *l != METRICS_HEADER)
        .and_then(|l| l.split(',').next())
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    Ok(RunReport {
        run_dir: run_dir.to_path_buf(),
        final_step,
        evals: scores.len(),
        final_normalized_score: final_score(&scores, window)?,
        best_normalized_score: scores
            .iter()
            .map(|(_, s)| *s)
            .fold(f64::NEG_INFINITY, f64::max),
    })
}
