use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{PermutedItem, Variant, N_OPTIONS};
use crate::train::option_argmax;

use super::info::{entropy, step_kl};

/// Identifies one (stem, variant, option order) instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceId {
    pub stem_id: usize,
    pub variant: Variant,
    pub perm_index: usize,
}

impl InstanceId {
    pub fn of(item: &PermutedItem) -> Self {
        Self {
            stem_id: item.stem_id,
            variant: item.variant,
            perm_index: item.perm_index,
        }
    }
}

/// Per-step beliefs over the four displayed options of one instance.
///
/// Option indices are display slots; `permutation[slot]` gives the
/// canonical option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefTrajectory {
    #[serde(flatten)]
    pub id: InstanceId,
    pub steps: usize,
    pub option_tokens: [usize; N_OPTIONS],
    pub permutation: [usize; N_OPTIONS],
    pub correct_index: Option<usize>,
    /// `option_probs[i][j] = p_{i+1}(option_j)`, full-vocabulary mass.
    pub option_probs: Vec<[f64; N_OPTIONS]>,
    /// Entropy of `p_{i+1}` over the full vocabulary, nats.
    pub entropy: Vec<f64>,
    /// Entropy of the option mass renormalized to sum to one, nats.
    pub option_entropy: Vec<f64>,
    pub argmax: Vec<usize>,
    /// `kl[i] = KL(p_{i+2} ‖ p_{i+1})`, nats; length `steps − 1`.
    pub kl: Vec<f64>,
}

impl BeliefTrajectory {
    pub fn final_answer(&self) -> usize {
        *self.argmax.last().expect("at least one step")
    }

    pub fn final_correct(&self) -> Option<bool> {
        self.correct_index.map(|c| c == self.final_answer())
    }

    pub fn final_entropy(&self) -> f64 {
        *self.entropy.last().expect("at least one step")
    }
}

/// Extracts option beliefs, entropies, argmaxes, and the step-KL series from
/// decoded distributions `p_1 … p_K`.
pub fn belief_trajectory(
    dists: &[Vec<f64>],
    option_tokens: [usize; N_OPTIONS],
    id: InstanceId,
    permutation: [usize; N_OPTIONS],
    correct_index: Option<usize>,
) -> Result<BeliefTrajectory> {
    if dists.is_empty() {
        return Err(Error::Empty("decoded distributions"));
    }
    for (i, &t) in option_tokens.iter().enumerate() {
        if option_tokens[..i].contains(&t) {
            return Err(Error::DuplicateOption(t));
        }
        if dists.iter().any(|d| t >= d.len()) {
            return Err(Error::TokenOutOfRange {
                id: t,
                vocab: dists[0].len(),
            });
        }
    }
    let option_probs: Vec<[f64; N_OPTIONS]> = dists.iter().map(|d| option_tokens.map(|t| d[t])).collect();
    let entropy_series = dists.iter().map(|d| entropy(d)).collect::<Result<Vec<_>>>()?;
    let option_entropy = option_probs
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().filter(|&&x| x > 0.0).map(|&x| -(x / s) * (x / s).ln()).sum()
        })
        .collect();
    let argmax = option_probs.iter().map(|row| option_argmax(row)).collect();
    let kl = dists.windows(2).map(|w| step_kl(&w[1], &w[0])).collect::<Result<Vec<_>>>()?;
    Ok(BeliefTrajectory {
        id,
        steps: dists.len(),
        option_tokens,
        permutation,
        correct_index,
        option_probs,
        entropy: entropy_series,
        option_entropy,
        argmax,
        kl,
    })
}

/// Same as [`belief_trajectory`], taking the instance details from the item.
pub fn item_trajectory(dists: &[Vec<f64>], item: &PermutedItem) -> Result<BeliefTrajectory> {
    belief_trajectory(dists, item.options, InstanceId::of(item), item.permutation, item.correct_index)
}

pub fn trajectories_jsonl(trajs: &[BeliefTrajectory]) -> Result<String> {
    let mut out = String::new();
    for t in trajs {
        out.push_str(&serde_json::to_string(t).map_err(|e| Error::Serde(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_trajectories_jsonl(text: &str) -> Result<Vec<BeliefTrajectory>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Serde(format!("trajectory line {}: {e}", n + 1))))
        .collect()
}
