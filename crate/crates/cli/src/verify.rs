//! Self-consistency of a finished output directory.

use std::collections::BTreeMap;
use std::path::Path;

use latent_trace::metrics::{aggregate_stats, BeliefTrajectory, BootstrapCI, SimilarityMode};
use latent_trace::task::Variant;

use crate::manifest::Manifest;
use crate::pipeline::{instances, load_benchmark, load_params, load_summary, load_trajectories, CONFIG_FILE};
use crate::report::{find_row, from_csv, SummaryRow};
use crate::{ExperimentConfig, PipelineError};

const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn compare(&mut self, name: String, expected: Option<f64>, found: Option<f64>) {
        let passed = match (expected, found) {
            (Some(a), Some(b)) => (a - b).abs() <= TOLERANCE * a.abs().max(1.0),
            (None, None) => true,
            _ => false,
        };
        self.push(name, passed, format!("recomputed {expected:?}, reported {found:?}"));
    }
}

fn final_symbol_backtracks(series: &[usize], min_run: usize) -> bool {
    let Some(&last) = series.last() else { return false };
    let mut committed_elsewhere = false;
    let mut i = 0;
    while i < series.len() {
        let mut j = i;
        while j + 1 < series.len() && series[j + 1] == series[i] {
            j += 1;
        }
        if j + 1 - i >= min_run.max(1) {
            if series[i] != last {
                committed_elsewhere = true;
            } else if committed_elsewhere {
                return true;
            }
        }
        i = j + 1;
    }
    false
}

fn settle_step(kl: &[f64], tol: f64, window: usize) -> Option<usize> {
    (0..kl.len().saturating_sub(window - 1)).find(|&i| kl[i..i + window].iter().all(|&x| x <= tol))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean over option orders of the per-order mean, skipping `None`s.
fn per_order_mean(trajs: &[&BeliefTrajectory], f: impl Fn(&BeliefTrajectory) -> Option<f64>) -> Option<f64> {
    let mut by_order: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for t in trajs {
        if let Some(x) = f(t) {
            by_order.entry(t.id.perm_index).or_default().push(x);
        }
    }
    let per: Vec<f64> = by_order.values().filter_map(|v| mean(v)).collect();
    mean(&per)
}

/// Checks the manifest, recomputes the summary from the benchmark and
/// trajectory files, and compares the reported point estimates against
/// plain per-order means taken straight from the trajectories.
pub fn verify_dir(dir: &Path) -> Result<VerifyReport, PipelineError> {
    let mut report = VerifyReport::default();
    match Manifest::read(dir) {
        Ok(m) => {
            let bad = m.mismatches(dir);
            report.push("manifest", bad.is_empty(), format!("{} files, mismatched: {bad:?}", m.files.len()));
        }
        Err(e) => {
            report.push("manifest", false, e.to_string());
            return Ok(report);
        }
    }
    let config = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let bench = load_benchmark(dir)?;
    let trajs = load_trajectories(dir)?;
    let summary = load_summary(dir)?;
    let csv_rows: Vec<SummaryRow> = from_csv(&std::fs::read_to_string(dir.join(crate::pipeline::SUMMARY_CSV)).map_err(
        |e| PipelineError::io("verify", &dir.join(crate::pipeline::SUMMARY_CSV), e),
    )?)?;

    let params = match config.metrics.similarity {
        SimilarityMode::Embedding => Some(load_params(dir)?),
        SimilarityMode::Constructed => None,
    };
    let inst = instances(&config, &bench, &trajs, params.as_ref())?;
    let recomputed = aggregate_stats(&inst, &config.metrics, config.metrics_seed())
        .map_err(|e| PipelineError::stage("verify", e.to_string()))?;
    report.push("summary recomputation", recomputed == summary, "summary.json against a fresh aggregation");
    report.push(
        "summary.csv",
        csv_rows == crate::report::summary_rows(&summary),
        "summary.csv against summary.json",
    );

    let expected_count = bench.items.len() * config.benchmark.n_permutations;
    report.push(
        "trajectory count",
        trajs.len() == expected_count,
        format!("{} trajectories, expected {expected_count}", trajs.len()),
    );

    let mp = &config.metrics;
    let explore = |t: &BeliefTrajectory| settle_step(&t.kl, mp.tol, mp.window).map(|e| e as f64);
    let mut explore_means = BTreeMap::new();
    let mut entropy_means = BTreeMap::new();
    for v in Variant::ALL {
        let mine: Vec<&BeliefTrajectory> = trajs.iter().filter(|t| t.id.variant == v).collect();
        let s = summary.variant(v);
        let point = |c: &Option<BootstrapCI>| c.map(|c| c.point);
        let accuracy = per_order_mean(&mine, |t| t.final_correct().map(|c| f64::from(u8::from(c))));
        let prevalence = per_order_mean(&mine, |t| {
            Some(f64::from(u8::from(final_symbol_backtracks(&t.argmax, mp.min_run))))
        });
        let entropy = per_order_mean(&mine, |t| Some(t.final_entropy()));
        report.compare(format!("{v} accuracy"), accuracy, point(&s.accuracy));
        report.compare(format!("{v} prevalence"), prevalence, point(&s.prevalence));
        report.compare(format!("{v} final entropy"), entropy, point(&s.final_entropy));
        let settled: Vec<f64> = mine.iter().filter_map(|t| explore(t)).collect();
        explore_means.insert(v, mean(&settled));
        entropy_means.insert(v, mean(&mine.iter().map(|t| t.final_entropy()).collect::<Vec<_>>()));
        report.compare(format!("{v} exploration mean"), explore_means[&v], point(&s.exploration_mean));
        let csv_acc = find_row(&csv_rows, "accuracy", v.as_str()).and_then(|r| r.point);
        report.compare(format!("{v} accuracy in summary.csv"), accuracy, csv_acc);
    }
    let diff = |m: &BTreeMap<Variant, Option<f64>>, a: Variant, b: Variant| Some(m[&a]? - m[&b]?);
    report.compare(
        "exploration difference".into(),
        diff(&explore_means, Variant::Base, Variant::Easy),
        summary.exploration_difference.map(|c| c.point),
    );
    report.compare(
        "entropy difference".into(),
        diff(&entropy_means, Variant::NoCorrect, Variant::Base),
        summary.entropy_difference.map(|c| c.point),
    );
    Ok(report)
}
