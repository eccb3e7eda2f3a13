//! CSV tables derived from a [`Summary`].

use latent_trace::metrics::{BootstrapCI, Summary, VariantSummary};
use serde::{Deserialize, Serialize};

use crate::{AtStage, PipelineError};

/// One statistic of `summary.csv`. Counts fill `point` only; statistics
/// that are undefined for the data leave every value column empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub statistic: String,
    pub variant: String,
    pub point: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// One row of the `backtrack_ranks.csv` histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCsvRow {
    pub variant: String,
    pub row: String,
    pub count: usize,
    pub frac_all_events: Option<f64>,
    pub frac_all_lower: Option<f64>,
    pub frac_all_upper: Option<f64>,
    pub frac_distractor_events: Option<f64>,
    pub frac_distractor_lower: Option<f64>,
    pub frac_distractor_upper: Option<f64>,
}

/// One row of `entropy_curves.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCsvRow {
    pub variant: String,
    pub step: usize,
    pub mean_nats: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Histogram rows in output order; `third` only exists for NoCorrect.
pub const RANK_ROWS: [&str; 6] = [
    "most_similar",
    "second",
    "third",
    "least_similar",
    "adopted_correct",
    "abandoned_correct",
];

fn ci_row(statistic: &str, variant: &str, ci: &Option<BootstrapCI>) -> SummaryRow {
    SummaryRow {
        statistic: statistic.to_string(),
        variant: variant.to_string(),
        point: ci.map(|c| c.point),
        lower: ci.map(|c| c.lower),
        upper: ci.map(|c| c.upper),
    }
}

fn count_row(statistic: &str, variant: &str, n: usize) -> SummaryRow {
    SummaryRow {
        statistic: statistic.to_string(),
        variant: variant.to_string(),
        point: Some(n as f64),
        lower: None,
        upper: None,
    }
}

fn variant_rows(s: &VariantSummary) -> Vec<SummaryRow> {
    let v = s.variant.as_str();
    let adopted = s.rank_row("adopted_correct").and_then(|r| r.frac_all_events);
    let most = s.rank_row("most_similar").and_then(|r| r.frac_distractor_events);
    vec![
        count_row("n_instances", v, s.n_instances),
        count_row("n_stems", v, s.n_stems),
        count_row("n_backtracking", v, s.n_backtracking),
        count_row("n_events", v, s.n_events),
        count_row("n_exploration_none", v, s.n_exploration_none),
        ci_row("accuracy", v, &s.accuracy),
        ci_row("prevalence", v, &s.prevalence),
        ci_row("accuracy_backtracking", v, &s.accuracy_backtracking),
        ci_row("accuracy_non_backtracking", v, &s.accuracy_non_backtracking),
        ci_row("uplift", v, &s.uplift),
        ci_row("uplift_relative", v, &s.uplift_relative),
        ci_row("exploration_mean", v, &s.exploration_mean),
        ci_row("final_entropy_nats", v, &s.final_entropy),
        ci_row("adopted_correct_fraction", v, &adopted),
        ci_row("most_similar_fraction", v, &most),
    ]
}

/// Every row of `summary.csv` in file order.
pub fn summary_rows(summary: &Summary) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = summary.variants.iter().flat_map(variant_rows).collect();
    rows.push(ci_row("exploration_difference", "base-easy", &summary.exploration_difference));
    rows.push(ci_row("exploration_ratio", "base/easy-1", &summary.exploration_ratio));
    rows.push(ci_row("final_entropy_difference_nats", "no_correct-base", &summary.entropy_difference));
    rows
}

pub fn rank_rows(summary: &Summary) -> Vec<RankCsvRow> {
    let mut rows = Vec::new();
    for s in &summary.variants {
        for label in RANK_ROWS {
            let Some(r) = s.rank_row(label) else { continue };
            let all = r.frac_all_events;
            let dis = r.frac_distractor_events;
            rows.push(RankCsvRow {
                variant: s.variant.as_str().to_string(),
                row: label.to_string(),
                count: r.count,
                frac_all_events: all.map(|c| c.point),
                frac_all_lower: all.map(|c| c.lower),
                frac_all_upper: all.map(|c| c.upper),
                frac_distractor_events: dis.map(|c| c.point),
                frac_distractor_lower: dis.map(|c| c.lower),
                frac_distractor_upper: dis.map(|c| c.upper),
            });
        }
    }
    rows
}

pub fn curve_rows(summary: &Summary) -> Vec<CurveCsvRow> {
    summary
        .variants
        .iter()
        .flat_map(|s| {
            s.entropy_curve.iter().map(|p| CurveCsvRow {
                variant: s.variant.as_str().to_string(),
                step: p.step,
                mean_nats: p.mean,
                lower: p.lower,
                upper: p.upper,
            })
        })
        .collect()
}

pub fn to_csv<R: Serialize>(rows: &[R]) -> Result<String, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).at("report")?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::stage("report", e.to_string()))?;
    String::from_utf8(bytes).at("report")
}

pub fn from_csv<R: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<R>, PipelineError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .at("report")
}

/// Looks up one statistic of a parsed `summary.csv`.
pub fn find_row<'a>(rows: &'a [SummaryRow], statistic: &str, variant: &str) -> Option<&'a SummaryRow> {
    rows.iter().find(|r| r.statistic == statistic && r.variant == variant)
}

/// Writes `summary.csv` and `backtrack_ranks.csv` into `dir`.
pub fn export_summary(summary: &Summary, dir: &std::path::Path) -> Result<(), PipelineError> {
    for (name, text) in [
        (crate::pipeline::SUMMARY_CSV, to_csv(&summary_rows(summary))?),
        (crate::pipeline::RANKS_CSV, to_csv(&rank_rows(summary))?),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| PipelineError::io("report", &path, e))?;
    }
    Ok(())
}

