use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LoopedModelParams;
use crate::scalar::Scalar;
use crate::task::{QuestionItem, N_OPTIONS};

use super::info::cosine;

/// How option-to-stem similarity is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    /// The generator's category/attribute similarity.
    #[default]
    Constructed,
    /// Cosine between the mean stem-token embedding and the option embedding.
    Embedding,
}

/// Where an abandoned option sits among the distractors, 1 being the most
/// similar to the stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityRank {
    Rank(usize),
    Correct,
}

/// Similarity of each canonical option to the stem.
pub fn similarity_scores<T: Scalar>(
    item: &QuestionItem,
    mode: SimilarityMode,
    params: Option<&LoopedModelParams<T>>,
) -> Result<[f64; N_OPTIONS]> {
    match mode {
        SimilarityMode::Constructed => Ok(item.similarities()),
        SimilarityMode::Embedding => {
            let params = params.ok_or(Error::MissingParams)?;
            let table = &params.weights.token_embedding;
            let check = |t: usize| {
                if t < table.rows() {
                    Ok(())
                } else {
                    Err(Error::TokenOutOfRange { id: t, vocab: table.rows() })
                }
            };
            let d = table.cols();
            let mut stem = vec![0.0; d];
            for &t in &item.stem_tokens {
                check(t)?;
                for (s, x) in stem.iter_mut().zip(table.row(t)) {
                    *s += x.as_f64();
                }
            }
            let n = item.stem_tokens.len().max(1) as f64;
            stem.iter_mut().for_each(|s| *s /= n);
            let mut out = [0.0; N_OPTIONS];
            for (o, opt) in out.iter_mut().zip(&item.options) {
                check(opt.token)?;
                let v: Vec<f64> = table.row(opt.token).iter().map(|x| x.as_f64()).collect();
                *o = cosine(&stem, &v);
            }
            Ok(out)
        }
    }
}

/// Rank of canonical option `abandoned` among the distractors by descending
/// similarity, ties going to the lower option index. The correct option is
/// reported as [`SimilarityRank::Correct`].
pub fn similarity_rank<T: Scalar>(
    item: &QuestionItem,
    abandoned: usize,
    mode: SimilarityMode,
    params: Option<&LoopedModelParams<T>>,
) -> Result<SimilarityRank> {
    if abandoned >= N_OPTIONS {
        return Err(Error::Config(format!("option index {abandoned} out of range")));
    }
    if item.correct_index == Some(abandoned) {
        return Ok(SimilarityRank::Correct);
    }
    let scores = similarity_scores(item, mode, params)?;
    Ok(SimilarityRank::Rank(rank_among_distractors(&scores, item.correct_index, abandoned)))
}

pub(crate) fn rank_among_distractors(scores: &[f64; N_OPTIONS], correct: Option<usize>, target: usize) -> usize {
    let s = scores[target];
    1 + (0..N_OPTIONS)
        .filter(|&j| j != target && Some(j) != correct)
        .filter(|&j| scores[j] > s || (scores[j] == s && j < target))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        let scores = [0.9, 0.5, 0.5, 1.0];
        assert_eq!(rank_among_distractors(&scores, Some(3), 0), 1);
        assert_eq!(rank_among_distractors(&scores, Some(3), 1), 2);
        assert_eq!(rank_among_distractors(&scores, Some(3), 2), 3);
        assert_eq!(rank_among_distractors(&scores, None, 3), 1);
        assert_eq!(rank_among_distractors(&scores, None, 2), 4);
    }
}
