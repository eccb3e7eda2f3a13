//! Static SVG line charts for belief trajectories and entropy curves.

use std::fmt::Write;

use latent_trace::metrics::{bootstrap_ci, BeliefTrajectory, CurvePoint};
use latent_trace::seed::derive_seed;
use latent_trace::task::{QuestionItem, N_OPTIONS};

use crate::PipelineError;

const PALETTE: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];
const LEGEND_ROW: f64 = 18.0;

/// Plot area inside an SVG canvas and the affine map from data to pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub width: f64,
    pub height: f64,
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Frame {
    pub fn new(steps: usize, y_min: f64, y_max: f64) -> Self {
        Self {
            width: 720.0,
            height: 420.0,
            left: 60.0,
            right: 170.0,
            top: 40.0,
            bottom: 50.0,
            x_min: 1.0,
            x_max: steps.max(2) as f64,
            y_min,
            y_max,
        }
    }

    pub fn plot_width(&self) -> f64 {
        self.width - self.left - self.right
    }

    pub fn plot_height(&self) -> f64 {
        self.height - self.top - self.bottom
    }

    pub fn x(&self, step: f64) -> f64 {
        self.left + (step - self.x_min) / (self.x_max - self.x_min) * self.plot_width()
    }

    pub fn y(&self, value: f64) -> f64 {
        self.top + (self.y_max - value) / (self.y_max - self.y_min) * self.plot_height()
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn points(frame: &Frame, xy: impl Iterator<Item = (f64, f64)>) -> String {
    xy.map(|(x, y)| format!("{:.2},{:.2}", frame.x(x), frame.y(y)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn header(out: &mut String, frame: &Frame, title: &str, x_label: &str, y_label: &str) {
    let (w, h) = (frame.width, frame.height);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        frame.left + frame.plot_width() / 2.0,
        escape(title)
    );
    let (x0, x1) = (frame.left, frame.left + frame.plot_width());
    let (y0, y1) = (frame.top + frame.plot_height(), frame.top);
    let _ = writeln!(out, r#"<line class="axis" x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line class="axis" x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#);

    let steps = frame.x_max as usize;
    let stride = if steps <= 10 { 1 } else { 5 };
    for s in (1..=steps).filter(|s| *s == 1 || s % stride == 0) {
        let x = frame.x(s as f64);
        let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 4.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{s}</text>"#, y0 + 17.0);
    }
    for i in 0..=4 {
        let v = frame.y_min + (frame.y_max - frame.y_min) * f64::from(i) / 4.0;
        let y = frame.y(v);
        let _ = writeln!(out, r##"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#, x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        frame.left + frame.plot_width() / 2.0,
        frame.height - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        frame.top + frame.plot_height() / 2.0,
        frame.top + frame.plot_height() / 2.0,
        escape(y_label)
    );
}

fn legend_entry(out: &mut String, frame: &Frame, row: usize, color: &str, label: &str) {
    let x = frame.left + frame.plot_width() + 14.0;
    let y = frame.top + 8.0 + LEGEND_ROW * row as f64;
    let _ = writeln!(
        out,
        r#"<g class="legend"><rect x="{x:.2}" y="{:.2}" width="14" height="4" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
        y - 2.0,
        x + 20.0,
        y + 4.0,
        escape(label)
    );
}

fn band(out: &mut String, frame: &Frame, color: &str, lower: &[(f64, f64)], upper: &[(f64, f64)]) {
    let outline = points(frame, upper.iter().copied().chain(lower.iter().rev().copied()));
    let _ = writeln!(
        out,
        r#"<polygon class="band" points="{outline}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#
    );
}

/// Per-step option probabilities of one question, in canonical option
/// order, with an optional interval band per option.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPlot {
    pub title: String,
    pub labels: [String; N_OPTIONS],
    pub correct: Option<usize>,
    pub mean: Vec<[f64; N_OPTIONS]>,
    pub band: Option<Vec<[(f64, f64); N_OPTIONS]>>,
}

impl TrajectoryPlot {
    /// Averages the trajectories of one item over its option orders. With
    /// more than one order each step also gets a percentile bootstrap band.
    pub fn from_permutations(
        item: &QuestionItem,
        trajs: &[&BeliefTrajectory],
        resamples: usize,
        level: f64,
        seed: u64,
    ) -> Result<Self, PipelineError> {
        let first = trajs.first().ok_or_else(|| PipelineError::stage("plot", "no trajectories for item"))?;
        let steps = first.steps;
        if trajs.iter().any(|t| t.steps != steps || t.id.stem_id != item.stem_id || t.id.variant != item.variant) {
            return Err(PipelineError::stage("plot", "trajectories do not belong to one item"));
        }
        let canonical: Vec<Vec<[f64; N_OPTIONS]>> = trajs
            .iter()
            .map(|t| {
                t.option_probs
                    .iter()
                    .map(|row| {
                        let mut c = [0.0; N_OPTIONS];
                        for (slot, &p) in row.iter().enumerate() {
                            c[t.permutation[slot]] = p;
                        }
                        c
                    })
                    .collect()
            })
            .collect();
        let n = trajs.len() as f64;
        let mean = (0..steps)
            .map(|s| std::array::from_fn(|j| canonical.iter().map(|c| c[s][j]).sum::<f64>() / n))
            .collect();
        let band = if trajs.len() > 1 {
            let mut rows = Vec::with_capacity(steps);
            for s in 0..steps {
                let mut row = [(0.0, 0.0); N_OPTIONS];
                for (j, slot) in row.iter_mut().enumerate() {
                    let values: Vec<f64> = canonical.iter().map(|c| c[s][j]).collect();
                    let ci = bootstrap_ci(&values, resamples, level, derive_seed(seed, &format!("band-{s}-{j}")))
                        .map_err(|e| PipelineError::stage("plot", e.to_string()))?;
                    *slot = (ci.lower, ci.upper);
                }
                rows.push(row);
            }
            Some(rows)
        } else {
            None
        };
        let labels = std::array::from_fn(|j| {
            let tag = (b'A' + j as u8) as char;
            if item.correct_index == Some(j) {
                format!("{tag}: token {} (correct)", item.options[j].token)
            } else {
                format!("{tag}: token {}", item.options[j].token)
            }
        });
        Ok(Self {
            title: format!("Stem {} ({}), mean over {} orders", item.stem_id, item.variant, trajs.len()),
            labels,
            correct: item.correct_index,
            mean,
            band,
        })
    }
}

/// One polyline per option, x = step, y = probability on a fixed [0, 1]
/// axis. The correct option is drawn thick and solid, the others thin and
/// dashed.
pub fn emit_trajectory_plot(plot: &TrajectoryPlot) -> String {
    let steps = plot.mean.len();
    let frame = Frame::new(steps, 0.0, 1.0);
    let mut out = String::new();
    header(&mut out, &frame, &plot.title, "recurrence step", "option probability");
    let xs = |s: usize| (s + 1) as f64;
    if let Some(rows) = &plot.band {
        for j in 0..N_OPTIONS {
            let lower: Vec<(f64, f64)> = rows.iter().enumerate().map(|(s, r)| (xs(s), r[j].0)).collect();
            let upper: Vec<(f64, f64)> = rows.iter().enumerate().map(|(s, r)| (xs(s), r[j].1)).collect();
            band(&mut out, &frame, PALETTE[j], &lower, &upper);
        }
    }
    for j in 0..N_OPTIONS {
        let pts = points(&frame, plot.mean.iter().enumerate().map(|(s, r)| (xs(s), r[j])));
        let style = if plot.correct == Some(j) {
            r#"class="option correct" stroke-width="3.5""#
        } else {
            r#"class="option" stroke-width="1.5" stroke-dasharray="5 3""#
        };
        let _ = writeln!(
            out,
            r#"<polyline {style} data-option="{j}" points="{pts}" fill="none" stroke="{}"/>"#,
            PALETTE[j]
        );
    }
    for (j, label) in plot.labels.iter().enumerate() {
        legend_entry(&mut out, &frame, j, PALETTE[j], label);
    }
    out.push_str("</svg>\n");
    out
}

/// A labelled mean curve with its interval, one point per step.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyCurve {
    pub label: String,
    pub points: Vec<CurvePoint>,
}

/// One mean polyline and one shaded band per curve, plus a legend.
pub fn emit_entropy_plot(title: &str, curves: &[EntropyCurve]) -> Result<String, PipelineError> {
    let first = curves.first().ok_or_else(|| PipelineError::stage("plot", "no entropy curves"))?;
    let steps = first.points.len();
    if steps == 0 {
        return Err(PipelineError::stage("plot", "empty entropy curve"));
    }
    if let Some(c) = curves.iter().find(|c| c.points.len() != steps) {
        return Err(PipelineError::stage(
            "plot",
            format!("curve {} has {} points, expected {steps}", c.label, c.points.len()),
        ));
    }
    let top = curves
        .iter()
        .flat_map(|c| &c.points)
        .map(|p| p.upper.max(p.mean))
        .fold(0.0_f64, f64::max);
    let y_max = if top > 0.0 { (top * 1.1 * 2.0).ceil() / 2.0 } else { 1.0 };
    let frame = Frame::new(steps, 0.0, y_max);
    let mut out = String::new();
    header(&mut out, &frame, title, "recurrence step", "entropy (nats)");
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let lower: Vec<(f64, f64)> = c.points.iter().map(|p| (p.step as f64, p.lower)).collect();
        let upper: Vec<(f64, f64)> = c.points.iter().map(|p| (p.step as f64, p.upper)).collect();
        band(&mut out, &frame, color, &lower, &upper);
    }
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts = points(&frame, c.points.iter().map(|p| (p.step as f64, p.mean)));
        let _ = writeln!(
            out,
            r#"<polyline class="mean" points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>"#
        );
    }
    for (i, c) in curves.iter().enumerate() {
        legend_entry(&mut out, &frame, i, PALETTE[i % PALETTE.len()], &c.label);
    }
    out.push_str("</svg>\n");
    Ok(out)
}
