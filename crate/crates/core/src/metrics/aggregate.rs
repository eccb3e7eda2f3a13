use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LoopedModelParams;
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::task::{QuestionItem, Variant};

use super::bootstrap::{cluster_bootstrap, BootstrapCI};
use super::events::{detect_backtracks, exploration_end, BacktrackEvent};
use super::similarity::{rank_among_distractors, similarity_scores, SimilarityMode, SimilarityRank};
use super::trajectory::{BeliefTrajectory, InstanceId};

/// Detection thresholds and bootstrap settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    pub tol: f64,
    pub window: usize,
    pub min_run: usize,
    pub n_resamples: usize,
    /// Resamples for each per-step point of the entropy curves.
    pub curve_resamples: usize,
    pub level: f64,
    pub similarity: SimilarityMode,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            tol: 0.01,
            window: 3,
            min_run: 3,
            n_resamples: 10_000,
            curve_resamples: 1_000,
            level: 0.95,
            similarity: SimilarityMode::Constructed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAnalysis {
    pub event: BacktrackEvent,
    /// Canonical option indices.
    pub abandoned: usize,
    pub adopted: usize,
    pub rank: SimilarityRank,
    pub adopted_correct: bool,
}

/// Everything aggregation needs from one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnalysis {
    pub id: InstanceId,
    /// Final argmax is the correct option; `None` without a correct option.
    pub correct: Option<bool>,
    pub exploration_end: Option<usize>,
    pub final_entropy: f64,
    pub entropy: Vec<f64>,
    pub events: Vec<EventAnalysis>,
}

pub fn analyze_instance<T: Scalar>(
    traj: &BeliefTrajectory,
    item: &QuestionItem,
    mp: &MetricParams,
    model: Option<&LoopedModelParams<T>>,
) -> Result<InstanceAnalysis> {
    if item.stem_id != traj.id.stem_id || item.variant != traj.id.variant {
        return Err(Error::Config(format!(
            "trajectory {:?} paired with item {} ({})",
            traj.id, item.stem_id, item.variant
        )));
    }
    let scores = similarity_scores(item, mp.similarity, model)?;
    let events = detect_backtracks(&traj.argmax, mp.min_run)
        .into_iter()
        .map(|event| {
            let abandoned = traj.permutation[event.abandoned];
            let adopted = traj.permutation[event.adopted];
            let rank = if item.correct_index == Some(abandoned) {
                SimilarityRank::Correct
            } else {
                SimilarityRank::Rank(rank_among_distractors(&scores, item.correct_index, abandoned))
            };
            EventAnalysis {
                event,
                abandoned,
                adopted,
                rank,
                adopted_correct: item.correct_index == Some(adopted),
            }
        })
        .collect();
    Ok(InstanceAnalysis {
        id: traj.id,
        correct: traj.final_correct(),
        exploration_end: exploration_end(&traj.kl, mp.tol, mp.window)?,
        final_entropy: traj.final_entropy(),
        entropy: traj.entropy.clone(),
        events,
    })
}

/// One Table-1 style row: a count over backtracking events and its share of
/// all events and of events whose abandoned option was a distractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub label: String,
    pub count: usize,
    pub frac_all_events: Option<BootstrapCI>,
    pub frac_distractor_events: Option<BootstrapCI>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub n_instances: usize,
    pub n_stems: usize,
    pub n_backtracking: usize,
    pub n_events: usize,
    pub accuracy: Option<BootstrapCI>,
    pub prevalence: Option<BootstrapCI>,
    pub accuracy_backtracking: Option<BootstrapCI>,
    pub accuracy_non_backtracking: Option<BootstrapCI>,
    /// Accuracy with backtracking minus accuracy without.
    pub uplift: Option<BootstrapCI>,
    /// Accuracy with backtracking over accuracy without, minus one.
    pub uplift_relative: Option<BootstrapCI>,
    /// Mean exploration length over instances that settle.
    pub exploration_mean: Option<BootstrapCI>,
    pub n_exploration_none: usize,
    pub final_entropy: Option<BootstrapCI>,
    pub ranks: Vec<RankRow>,
    pub entropy_curve: Vec<CurvePoint>,
}

impl VariantSummary {
    pub fn rank_row(&self, label: &str) -> Option<&RankRow> {
        self.ranks.iter().find(|r| r.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub level: f64,
    pub n_resamples: usize,
    /// In [`Variant::ALL`] order, present even when empty.
    pub variants: Vec<VariantSummary>,
    /// Base minus Easy mean exploration length, paired by stem.
    pub exploration_difference: Option<BootstrapCI>,
    /// Base over Easy mean exploration length, minus one.
    pub exploration_ratio: Option<BootstrapCI>,
    /// NoCorrect minus Base mean final-step entropy.
    pub entropy_difference: Option<BootstrapCI>,
}

impl Summary {
    pub fn variant(&self, v: Variant) -> &VariantSummary {
        self.variants.iter().find(|s| s.variant == v).expect("all variants present")
    }
}

type Acc = Vec<(f64, f64)>;

fn ratio_of(acc: &Acc, idx: &[usize]) -> Option<f64> {
    let (s, n) = idx.iter().fold((0.0, 0.0), |t, &i| (t.0 + acc[i].0, t.1 + acc[i].1));
    (n > 0.0).then(|| s / n)
}

struct Clusters<'a> {
    by_variant: BTreeMap<Variant, Vec<&'a InstanceAnalysis>>,
    index: BTreeMap<usize, usize>,
    mp: &'a MetricParams,
    seed: u64,
}

impl<'a> Clusters<'a> {
    /// Per-stem `(Σ value, Σ weight)` over one variant's instances.
    fn acc(&self, v: Variant, f: impl Fn(&InstanceAnalysis) -> (f64, f64)) -> Acc {
        let mut acc = vec![(0.0, 0.0); self.index.len()];
        for inst in self.by_variant.get(&v).into_iter().flatten() {
            let (s, n) = f(inst);
            let slot = &mut acc[self.index[&inst.id.stem_id]];
            slot.0 += s;
            slot.1 += n;
        }
        acc
    }

    fn ci(&self, label: &str, resamples: usize, stat: impl Fn(&[usize]) -> Option<f64>) -> Result<Option<BootstrapCI>> {
        cluster_bootstrap(self.index.len(), stat, resamples, self.mp.level, derive_seed(self.seed, label))
    }

    fn mean(&self, label: &str, acc: &Acc) -> Result<Option<BootstrapCI>> {
        self.ci(label, self.mp.n_resamples, |idx| ratio_of(acc, idx))
    }

    fn pair(&self, label: &str, a: &Acc, b: &Acc, f: impl Fn(f64, f64) -> Option<f64>) -> Result<Option<BootstrapCI>> {
        self.ci(label, self.mp.n_resamples, |idx| f(ratio_of(a, idx)?, ratio_of(b, idx)?))
    }
}

fn indicator(b: bool) -> f64 {
    f64::from(u8::from(b))
}

fn weighted(x: Option<f64>) -> (f64, f64) {
    x.map_or((0.0, 0.0), |v| (v, 1.0))
}

fn rank_rows(c: &Clusters, v: Variant, n_distractors: usize) -> Result<Vec<RankRow>> {
    let mut labels: Vec<(String, Box<dyn Fn(&EventAnalysis) -> bool>)> = Vec::new();
    for r in 1..=n_distractors {
        let label = match r {
            1 => "most_similar".to_string(),
            2 => "second".to_string(),
            r if r == n_distractors => "least_similar".to_string(),
            3 => "third".to_string(),
            r => format!("rank_{r}"),
        };
        labels.push((label, Box::new(move |e: &EventAnalysis| e.rank == SimilarityRank::Rank(r))));
    }
    labels.push(("abandoned_correct".into(), Box::new(|e| e.rank == SimilarityRank::Correct)));
    labels.push(("adopted_correct".into(), Box::new(|e| e.adopted_correct)));

    let mut rows = Vec::with_capacity(labels.len());
    for (label, hit) in &labels {
        let count = c
            .by_variant
            .get(&v)
            .into_iter()
            .flatten()
            .flat_map(|i| &i.events)
            .filter(|e| hit(e))
            .count();
        let all = c.acc(v, |i| {
            let n = i.events.len() as f64;
            (i.events.iter().filter(|e| hit(e)).count() as f64, n)
        });
        let distractor = c.acc(v, |i| {
            let ev = i.events.iter().filter(|e| e.rank != SimilarityRank::Correct);
            let n = ev.clone().count() as f64;
            (ev.filter(|e| hit(e)).count() as f64, n)
        });
        rows.push(RankRow {
            count,
            frac_all_events: c.mean(&format!("{v}-rank-{label}-all"), &all)?,
            frac_distractor_events: c.mean(&format!("{v}-rank-{label}-distractor"), &distractor)?,
            label: label.clone(),
        });
    }
    Ok(rows)
}

fn variant_summary(c: &Clusters, v: Variant) -> Result<VariantSummary> {
    let insts = c.by_variant.get(&v).cloned().unwrap_or_default();
    let backtracks = |i: &InstanceAnalysis| !i.events.is_empty();
    let correct = |i: &InstanceAnalysis| i.correct.map(indicator);

    let accuracy = c.acc(v, |i| weighted(correct(i)));
    let prevalence = c.acc(v, |i| (indicator(backtracks(i)), 1.0));
    let acc_bt = c.acc(v, |i| if backtracks(i) { weighted(correct(i)) } else { (0.0, 0.0) });
    let acc_nobt = c.acc(v, |i| if backtracks(i) { (0.0, 0.0) } else { weighted(correct(i)) });
    let exploration = c.acc(v, |i| weighted(i.exploration_end.map(|e| e as f64)));
    let entropy = c.acc(v, |i| (i.final_entropy, 1.0));

    let steps = insts.first().map_or(0, |i| i.entropy.len());
    if insts.iter().any(|i| i.entropy.len() != steps) {
        return Err(Error::Shape(format!("{v} trajectories differ in length")));
    }
    let mut entropy_curve = Vec::with_capacity(steps);
    for s in 0..steps {
        let acc = c.acc(v, |i| (i.entropy[s], 1.0));
        if let Some(ci) = c.ci(&format!("{v}-curve-{s}"), c.mp.curve_resamples, |idx| ratio_of(&acc, idx))? {
            entropy_curve.push(CurvePoint {
                step: s + 1,
                mean: ci.point,
                lower: ci.lower,
                upper: ci.upper,
            });
        }
    }
    let n_distractors = if v == Variant::NoCorrect { 4 } else { 3 };
    let mut stems: Vec<usize> = insts.iter().map(|i| i.id.stem_id).collect();
    stems.dedup();
    Ok(VariantSummary {
        variant: v,
        n_instances: insts.len(),
        n_stems: stems.len(),
        n_backtracking: insts.iter().filter(|i| backtracks(i)).count(),
        n_events: insts.iter().map(|i| i.events.len()).sum(),
        accuracy: c.mean(&format!("{v}-accuracy"), &accuracy)?,
        prevalence: c.mean(&format!("{v}-prevalence"), &prevalence)?,
        accuracy_backtracking: c.mean(&format!("{v}-acc-bt"), &acc_bt)?,
        accuracy_non_backtracking: c.mean(&format!("{v}-acc-nobt"), &acc_nobt)?,
        uplift: c.pair(&format!("{v}-uplift"), &acc_bt, &acc_nobt, |a, b| Some(a - b))?,
        uplift_relative: c.pair(&format!("{v}-uplift-rel"), &acc_bt, &acc_nobt, |a, b| {
            (b > 0.0).then(|| a / b - 1.0)
        })?,
        exploration_mean: c.mean(&format!("{v}-exploration"), &exploration)?,
        n_exploration_none: insts.iter().filter(|i| i.exploration_end.is_none()).count(),
        final_entropy: c.mean(&format!("{v}-entropy"), &entropy)?,
        ranks: rank_rows(c, v, n_distractors)?,
        entropy_curve,
    })
}

/// Per-variant and cross-variant statistics. Point estimates are means over
/// instances; intervals resample whole stems, so the permutations and
/// variants of a stem move together.
pub fn aggregate_stats(instances: &[InstanceAnalysis], mp: &MetricParams, seed: u64) -> Result<Summary> {
    let mut sorted: Vec<&InstanceAnalysis> = instances.iter().collect();
    sorted.sort_by_key(|i| i.id);
    if sorted.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::Config("duplicate instance ids".into()));
    }
    let mut index = BTreeMap::new();
    for i in &sorted {
        let next = index.len();
        index.entry(i.id.stem_id).or_insert(next);
    }
    let mut by_variant: BTreeMap<Variant, Vec<&InstanceAnalysis>> = BTreeMap::new();
    for i in sorted {
        by_variant.entry(i.id.variant).or_default().push(i);
    }
    let c = Clusters {
        by_variant,
        index,
        mp,
        seed,
    };
    let variants = Variant::ALL
        .iter()
        .map(|&v| variant_summary(&c, v))
        .collect::<Result<Vec<_>>>()?;
    let explore = |v| c.acc(v, |i| weighted(i.exploration_end.map(|e| e as f64)));
    let entropy = |v| c.acc(v, |i| (i.final_entropy, 1.0));
    let (base_x, easy_x) = (explore(Variant::Base), explore(Variant::Easy));
    Ok(Summary {
        level: mp.level,
        n_resamples: mp.n_resamples,
        exploration_difference: c.pair("exploration-difference", &base_x, &easy_x, |a, b| Some(a - b))?,
        exploration_ratio: c.pair("exploration-ratio", &base_x, &easy_x, |a, b| (b > 0.0).then(|| a / b - 1.0))?,
        entropy_difference: c.pair(
            "entropy-difference",
            &entropy(Variant::NoCorrect),
            &entropy(Variant::Base),
            |a, b| Some(a - b),
        )?,
        variants,
    })
}
