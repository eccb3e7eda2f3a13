use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{
    kernels, transformer_layer_forward, transformer_layer_forward_rows, transformer_layer_graph, Graph, NodeId,
    SeqLayout, Tensor2,
};
use crate::scalar::Scalar;

use super::config::LoopedConfig;
use super::params::{LoopedModelParams, LoopedWeights};

/// `h_i` for one prompt: `seq × d_model` plus the number of recurrent steps applied.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState<T> {
    pub state: Tensor2<T>,
    pub step: usize,
}

/// `p_i`: the next-token distribution at the answer position after step `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution<T> {
    pub probs: Vec<T>,
    pub step: usize,
}

impl<T: Scalar> StepDistribution<T> {
    pub fn to_f64(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.as_f64()).collect()
    }

    pub fn prob(&self, token: usize) -> T {
        self.probs[token]
    }
}

fn validate_tokens(config: &LoopedConfig, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    if tokens.len() > config.max_seq {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: config.max_seq,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&t| t >= config.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab: config.vocab_size,
        });
    }
    Ok(())
}

fn embed<T: Scalar>(w: &LoopedWeights<Tensor2<T>>, tokens: &[usize]) -> Tensor2<T> {
    let d = w.token_embedding.cols();
    let mut x = Tensor2::zeros(tokens.len(), d);
    for (pos, &t) in tokens.iter().enumerate() {
        x.row_mut(pos).copy_from_slice(w.token_embedding.row(t));
    }
    let mut p = Tensor2::zeros(tokens.len(), d);
    for pos in 0..tokens.len() {
        p.row_mut(pos).copy_from_slice(w.position_embedding.row(pos));
    }
    x.add_assign(&p);
    x
}

/// `h_0 = P(x)`: token and position embeddings through the prelude stack.
pub fn prelude_forward<T: Scalar>(params: &LoopedModelParams<T>, tokens: &[usize]) -> Result<HiddenState<T>> {
    let config = &params.config;
    validate_tokens(config, tokens)?;
    let layout = SeqLayout::single(tokens.len());
    let mut x = embed(&params.weights, tokens);
    for layer in &params.weights.prelude {
        x = transformer_layer_forward(&x, layer, &layout, config.n_heads)?;
    }
    Ok(HiddenState { state: x, step: 0 })
}

/// `h_i = R(h_{i-1})`, applying the one shared recurrent stack.
pub fn recurrent_step<T: Scalar>(params: &LoopedModelParams<T>, h: &HiddenState<T>) -> Result<HiddenState<T>> {
    let config = &params.config;
    if h.step >= config.k_max {
        return Err(Error::DepthExceeded {
            requested: h.step + 1,
            max: config.k_max,
        });
    }
    let layout = SeqLayout::single(h.state.rows());
    let mut x = h.state.clone();
    for layer in &params.weights.recurrent {
        x = transformer_layer_forward(&x, layer, &layout, config.n_heads)?;
    }
    Ok(HiddenState {
        state: x,
        step: h.step + 1,
    })
}

/// `softmax(C(h_i))` at the last position. Valid for any step index.
pub fn coda_decode<T: Scalar>(params: &LoopedModelParams<T>, h: &HiddenState<T>) -> Result<StepDistribution<T>> {
    let config = &params.config;
    let w = &params.weights;
    if h.state.cols() != config.d_model || h.state.rows() == 0 {
        return Err(Error::Shape(format!(
            "hidden state {}x{} for d_model {}",
            h.state.rows(),
            h.state.cols(),
            config.d_model
        )));
    }
    let layout = SeqLayout::single(h.state.rows());
    let last = layout.last_rows();
    let (final_layer, earlier) = w.coda.split_last().ok_or_else(|| Error::Config("coda has no layers".into()))?;
    let mut x = h.state.clone();
    for layer in earlier {
        x = transformer_layer_forward(&x, layer, &layout, config.n_heads)?;
    }
    let top = transformer_layer_forward_rows(&x, final_layer, &layout, config.n_heads, &last)?;
    let logits = readout_logits(w, &top);
    let mut probs = logits.into_data();
    kernels::softmax_wide_in_place(&mut probs);
    Ok(StepDistribution { probs, step: h.step })
}

fn readout_logits<T: Scalar>(w: &LoopedWeights<Tensor2<T>>, rows: &Tensor2<T>) -> Tensor2<T> {
    let (n, d) = rows.shape();
    let mut normed = Tensor2::zeros(n, d);
    kernels::layer_norm(rows.data(), w.final_norm_gain.data(), w.final_norm_bias.data(), d, normed.data_mut());
    let v = w.token_embedding.rows();
    let mut logits = Tensor2::zeros(n, v);
    kernels::matmul_a_bt(normed.data(), w.token_embedding.data(), n, d, v, logits.data_mut());
    logits
}

/// Decodes `p_1 … p_k`. Element `i-1` is `coda(R^i(P(x)))`, so shorter runs
/// are exact prefixes of longer ones.
pub fn run_deliberation<T: Scalar>(
    params: &LoopedModelParams<T>,
    tokens: &[usize],
    k: usize,
) -> Result<Vec<StepDistribution<T>>> {
    if k == 0 {
        return Err(Error::ZeroDepth);
    }
    if k > params.config.k_max {
        return Err(Error::DepthExceeded {
            requested: k,
            max: params.config.k_max,
        });
    }
    let mut h = prelude_forward(params, tokens)?;
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        h = recurrent_step(params, &h)?;
        out.push(coda_decode(params, &h)?);
    }
    Ok(out)
}

/// A recorded training forward pass.
pub struct LossGraph<T> {
    pub graph: Graph<T>,
    /// Graph leaves holding every weight, mirroring the parameter layout.
    pub params: LoopedWeights<NodeId>,
    /// Answer-position logits, one row per example.
    pub logits: NodeId,
    /// Mean cross-entropy (1×1).
    pub loss: NodeId,
}

/// Builds the unrolled graph for a batch run to depth `k`, with the loss
/// taken at the answer position of every example.
pub fn loss_graph<T: Scalar>(
    params: &LoopedModelParams<T>,
    batch: &[(&[usize], usize)],
    k: usize,
) -> Result<LossGraph<T>> {
    let config = &params.config;
    if k == 0 {
        return Err(Error::ZeroDepth);
    }
    if k > config.k_max {
        return Err(Error::DepthExceeded {
            requested: k,
            max: config.k_max,
        });
    }
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    for (tokens, _) in batch {
        validate_tokens(config, tokens)?;
    }
    let lengths: Vec<usize> = batch.iter().map(|(t, _)| t.len()).collect();
    let layout = Arc::new(SeqLayout::from_lengths(&lengths));
    let token_ids: Vec<usize> = batch.iter().flat_map(|(t, _)| t.iter().copied()).collect();
    let targets: Vec<usize> = batch.iter().map(|&(_, y)| y).collect();

    let mut g = Graph::new();
    let ids = params.weights.map(|t| g.param(t.clone()));
    let tok = g.gather(ids.token_embedding, token_ids)?;
    let pos = g.gather(ids.position_embedding, layout.positions())?;
    let mut x = g.add(tok, pos)?;
    for layer in &ids.prelude {
        x = transformer_layer_graph(&mut g, x, layer, &layout, config.n_heads)?;
    }
    for _ in 0..k {
        for layer in &ids.recurrent {
            x = transformer_layer_graph(&mut g, x, layer, &layout, config.n_heads)?;
        }
    }
    for layer in &ids.coda {
        x = transformer_layer_graph(&mut g, x, layer, &layout, config.n_heads)?;
    }
    let last = g.gather(x, layout.last_rows())?;
    let normed = g.layer_norm(last, ids.final_norm_gain, ids.final_norm_bias)?;
    let logits = g.matmul_bt(normed, ids.token_embedding)?;
    let loss = g.cross_entropy(logits, targets)?;
    Ok(LossGraph {
        graph: g,
        params: ids,
        logits,
        loss,
    })
}
