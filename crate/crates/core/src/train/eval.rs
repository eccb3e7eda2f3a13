use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{coda_decode, prelude_forward, recurrent_step, LoopedModelParams};
use crate::scalar::Scalar;
use crate::task::{PermutedItem, N_OPTIONS};

/// Option slot with the highest probability; ties go to the lower slot.
pub fn option_argmax<T: PartialOrd + Copy>(probs: &[T]) -> usize {
    let mut best = 0;
    for (j, p) in probs.iter().enumerate().skip(1) {
        if *p > probs[best] {
            best = j;
        }
    }
    best
}

/// Decodes only `p_k` for one prompt.
pub fn final_distribution<T: Scalar>(params: &LoopedModelParams<T>, tokens: &[usize], k: usize) -> Result<Vec<T>> {
    if k == 0 {
        return Err(Error::ZeroDepth);
    }
    let mut h = prelude_forward(params, tokens)?;
    for _ in 0..k {
        h = recurrent_step(params, &h)?;
    }
    Ok(coda_decode(params, &h)?.probs)
}

/// Slot chosen at depth `k`: argmax of `p_k` restricted to the option tokens.
pub fn predict_option<T: Scalar>(params: &LoopedModelParams<T>, item: &PermutedItem, k: usize) -> Result<usize> {
    let p = final_distribution(params, &item.prompt(), k)?;
    let mass: [T; N_OPTIONS] = item.options.map(|t| p[t]);
    Ok(option_argmax(&mass))
}

/// Fraction of items whose predicted slot is the correct one. Items without a
/// correct option are rejected.
pub fn evaluate_accuracy<T: Scalar>(params: &LoopedModelParams<T>, items: &[PermutedItem], k: usize) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Empty("evaluation items"));
    }
    let hits = items
        .par_iter()
        .map(|item| {
            let correct = item.correct_index.ok_or_else(|| {
                Error::Config(format!("item {} ({}) has no correct option", item.stem_id, item.variant))
            })?;
            Ok(predict_option(params, item, k)? == correct)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / items.len() as f64)
}
