use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First index `i` such that `kl[i..i + window]` are all `≤ tol`.
pub fn exploration_end(kl: &[f64], tol: f64, window: usize) -> Result<Option<usize>> {
    if !(tol > 0.0) || window == 0 {
        return Err(Error::Config("exploration_end needs tol > 0 and window ≥ 1".into()));
    }
    let mut run = 0;
    for (i, &x) in kl.iter().enumerate() {
        run = if x <= tol { run + 1 } else { 0 };
        if run == window {
            return Ok(Some(i + 1 - window));
        }
    }
    Ok(None)
}

/// Inclusive step range of a maximal constant segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub symbol: usize,
    pub start: usize,
    pub end: usize,
}

impl Run {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Commitment to `abandoned` for a run, later replaced by a run of `adopted`,
/// which is also the final answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacktrackEvent {
    pub abandoned: usize,
    pub adopted: usize,
    pub a_run: (usize, usize),
    pub b_run: (usize, usize),
    pub final_answer: usize,
}

pub fn maximal_runs(series: &[usize]) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for (i, &s) in series.iter().enumerate() {
        match runs.last_mut() {
            Some(r) if r.symbol == s => r.end = i,
            _ => runs.push(Run {
                symbol: s,
                start: i,
                end: i,
            }),
        }
    }
    runs
}

/// Every pair of maximal runs `(a-run, later b-run)` with both at least
/// `min_run` long, `a ≠ b`, and `b` the final entry of the series. Ordered by
/// a-run start, then b-run start.
pub fn detect_backtracks(series: &[usize], min_run: usize) -> Vec<BacktrackEvent> {
    let Some(&final_answer) = series.last() else {
        return Vec::new();
    };
    let runs: Vec<Run> = maximal_runs(series)
        .into_iter()
        .filter(|r| r.len() >= min_run.max(1))
        .collect();
    let mut out = Vec::new();
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            if a.symbol != b.symbol && b.symbol == final_answer {
                out.push(BacktrackEvent {
                    abandoned: a.symbol,
                    adopted: b.symbol,
                    a_run: (a.start, a.end),
                    b_run: (b.start, b.end),
                    final_answer,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exploration_examples() {
        assert_eq!(exploration_end(&[0.5, 0.2, 0.009, 0.008, 0.007], 0.01, 3).unwrap(), Some(2));
        assert_eq!(exploration_end(&[0.02; 10], 0.01, 3).unwrap(), None);
        assert_eq!(
            exploration_end(&[0.009, 0.009, 0.5, 0.001, 0.001, 0.001], 0.01, 3).unwrap(),
            Some(3)
        );
        assert_eq!(exploration_end(&[0.001, 0.001], 0.01, 3).unwrap(), None);
        assert!(exploration_end(&[0.1], 0.0, 3).is_err());
    }

    #[test]
    fn backtrack_examples() {
        let ev = detect_backtracks(&[0, 0, 0, 1, 1, 1], 3);
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].abandoned, ev[0].adopted, ev[0].a_run, ev[0].b_run), (0, 1, (0, 2), (3, 5)));
        assert!(detect_backtracks(&[0, 0, 1, 1, 1, 1], 3).is_empty());
        let ev = detect_backtracks(&[0, 0, 0, 1, 1, 1, 0, 0, 0], 3);
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].abandoned, ev[0].adopted), (1, 0));
        assert!(detect_backtracks(&[], 3).is_empty());
    }
}
