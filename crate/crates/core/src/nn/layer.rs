//! Pre-norm transformer layer: `x + Attn(LN(x))`, then `+ MLP(LN(·))`.

use std::sync::Arc;

use super::graph::{Graph, NodeId};
use super::kernels::{self, SeqLayout};
use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Widths of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

impl LayerDims {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Shapes in [`LayerWeights::NAMES`] order.
    pub fn shapes(&self) -> [(usize, usize); 12] {
        let d = self.d_model;
        let f = self.d_ff;
        [
            (1, d),
            (1, d),
            (d, 3 * d),
            (1, 3 * d),
            (d, d),
            (1, d),
            (1, d),
            (1, d),
            (d, f),
            (1, f),
            (f, d),
            (1, d),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.shapes().iter().map(|(r, c)| r * c).sum()
    }
}

/// Weights of one layer, generic over the slot type so the same structure
/// holds tensors, graph node ids, or optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<W> {
    pub attn_norm_gain: W,
    pub attn_norm_bias: W,
    pub qkv_weight: W,
    pub qkv_bias: W,
    pub attn_out_weight: W,
    pub attn_out_bias: W,
    pub mlp_norm_gain: W,
    pub mlp_norm_bias: W,
    pub fc_in_weight: W,
    pub fc_in_bias: W,
    pub fc_out_weight: W,
    pub fc_out_bias: W,
}

impl<W> LayerWeights<W> {
    pub const NAMES: [&'static str; 12] = [
        "attn_norm_gain",
        "attn_norm_bias",
        "qkv_weight",
        "qkv_bias",
        "attn_out_weight",
        "attn_out_bias",
        "mlp_norm_gain",
        "mlp_norm_bias",
        "fc_in_weight",
        "fc_in_bias",
        "fc_out_weight",
        "fc_out_bias",
    ];

    pub fn from_array([a, b, c, d, e, f, g, h, i, j, k, l]: [W; 12]) -> Self {
        Self {
            attn_norm_gain: a,
            attn_norm_bias: b,
            qkv_weight: c,
            qkv_bias: d,
            attn_out_weight: e,
            attn_out_bias: f,
            mlp_norm_gain: g,
            mlp_norm_bias: h,
            fc_in_weight: i,
            fc_in_bias: j,
            fc_out_weight: k,
            fc_out_bias: l,
        }
    }

    pub fn slots(&self) -> [&W; 12] {
        [
            &self.attn_norm_gain,
            &self.attn_norm_bias,
            &self.qkv_weight,
            &self.qkv_bias,
            &self.attn_out_weight,
            &self.attn_out_bias,
            &self.mlp_norm_gain,
            &self.mlp_norm_bias,
            &self.fc_in_weight,
            &self.fc_in_bias,
            &self.fc_out_weight,
            &self.fc_out_bias,
        ]
    }

    pub fn slots_mut(&mut self) -> [&mut W; 12] {
        [
            &mut self.attn_norm_gain,
            &mut self.attn_norm_bias,
            &mut self.qkv_weight,
            &mut self.qkv_bias,
            &mut self.attn_out_weight,
            &mut self.attn_out_bias,
            &mut self.mlp_norm_gain,
            &mut self.mlp_norm_bias,
            &mut self.fc_in_weight,
            &mut self.fc_in_bias,
            &mut self.fc_out_weight,
            &mut self.fc_out_bias,
        ]
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(&'static str, &W) -> Result<U, E>) -> Result<LayerWeights<U>, E> {
        let s = self.slots();
        let mut out = Vec::with_capacity(12);
        for (name, w) in Self::NAMES.iter().zip(s) {
            out.push(f(name, w)?);
        }
        let arr: [U; 12] = out.try_into().unwrap_or_else(|_| unreachable!());
        Ok(LayerWeights::from_array(arr))
    }

    pub fn map<U>(&self, mut f: impl FnMut(&'static str, &W) -> U) -> LayerWeights<U> {
        self.try_map::<U, std::convert::Infallible>(|n, w| Ok(f(n, w)))
            .unwrap_or_else(|e| match e {})
    }
}

impl<T: Scalar> LayerWeights<Tensor2<T>> {
    /// Unit norm gains, zero biases, N(0, 0.02) input projections and
    /// N(0, `out_std`) residual-output projections.
    pub fn init(dims: LayerDims, out_std: f64, rng: &mut impl rand::Rng) -> Self {
        let d = dims.d_model;
        let f = dims.d_ff;
        Self {
            attn_norm_gain: Tensor2::filled(1, d, T::one()),
            attn_norm_bias: Tensor2::zeros(1, d),
            qkv_weight: Tensor2::randn(d, 3 * d, 0.02, rng),
            qkv_bias: Tensor2::zeros(1, 3 * d),
            attn_out_weight: Tensor2::randn(d, d, out_std, rng),
            attn_out_bias: Tensor2::zeros(1, d),
            mlp_norm_gain: Tensor2::filled(1, d, T::one()),
            mlp_norm_bias: Tensor2::zeros(1, d),
            fc_in_weight: Tensor2::randn(d, f, 0.02, rng),
            fc_in_bias: Tensor2::zeros(1, f),
            fc_out_weight: Tensor2::randn(f, d, out_std, rng),
            fc_out_bias: Tensor2::zeros(1, d),
        }
    }

    pub fn zeros(dims: LayerDims) -> Self {
        let shapes = dims.shapes();
        LayerWeights::from_array(shapes.map(|(r, c)| Tensor2::zeros(r, c)))
    }

    pub fn dims(&self, n_heads: usize) -> LayerDims {
        LayerDims {
            d_model: self.qkv_weight.rows(),
            n_heads,
            d_ff: self.fc_in_weight.cols(),
        }
    }

    pub fn check_shapes(&self, dims: LayerDims) -> Result<()> {
        for ((name, w), (r, c)) in Self::NAMES.iter().zip(self.slots()).zip(dims.shapes()) {
            w.check_shape(r, c, name)?;
        }
        Ok(())
    }
}

fn linear<T: Scalar>(x: &[T], rows: usize, w: &Tensor2<T>, b: &Tensor2<T>) -> Tensor2<T> {
    let mut out = Tensor2::zeros(rows, w.cols());
    kernels::matmul(x, w.data(), rows, w.rows(), w.cols(), out.data_mut());
    kernels::add_row_bias(out.data_mut(), b.data());
    out
}

fn check_input<T: Scalar>(x: &Tensor2<T>, w: &LayerWeights<Tensor2<T>>, layout: &SeqLayout, n_heads: usize) -> Result<LayerDims> {
    let dims = w.dims(n_heads);
    dims.validate()?;
    w.check_shapes(dims)?;
    if x.cols() != dims.d_model || x.rows() != layout.total_rows() {
        return Err(Error::Shape(format!(
            "layer input {}x{} vs d_model {} and {} layout rows",
            x.rows(),
            x.cols(),
            dims.d_model,
            layout.total_rows()
        )));
    }
    Ok(dims)
}

/// Applies one layer to every row of `x`.
pub fn transformer_layer_forward<T: Scalar>(
    x: &Tensor2<T>,
    w: &LayerWeights<Tensor2<T>>,
    layout: &SeqLayout,
    n_heads: usize,
) -> Result<Tensor2<T>> {
    let dims = check_input(x, w, layout, n_heads)?;
    let (rows, d) = x.shape();
    let mut normed = Tensor2::zeros(rows, d);
    kernels::layer_norm(x.data(), w.attn_norm_gain.data(), w.attn_norm_bias.data(), d, normed.data_mut());
    let qkv = linear(normed.data(), rows, &w.qkv_weight, &w.qkv_bias);
    let mut attn = Tensor2::zeros(rows, d);
    kernels::causal_attention(qkv.data(), layout, d, dims.n_heads, attn.data_mut());
    finish_layer(x.clone(), &attn, w)
}

/// Like [`transformer_layer_forward`] but only produces the listed rows.
/// Every row still contributes keys and values.
pub fn transformer_layer_forward_rows<T: Scalar>(
    x: &Tensor2<T>,
    w: &LayerWeights<Tensor2<T>>,
    layout: &SeqLayout,
    n_heads: usize,
    rows: &[usize],
) -> Result<Tensor2<T>> {
    let dims = check_input(x, w, layout, n_heads)?;
    let (n, d) = x.shape();
    if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
        return Err(Error::Shape(format!("row {bad} out of {n}")));
    }
    let mut normed = Tensor2::zeros(n, d);
    kernels::layer_norm(x.data(), w.attn_norm_gain.data(), w.attn_norm_bias.data(), d, normed.data_mut());
    let qkv = linear(normed.data(), n, &w.qkv_weight, &w.qkv_bias);
    let mut attn = Tensor2::zeros(rows.len(), d);
    kernels::attention_rows(qkv.data(), layout, d, dims.n_heads, rows, attn.data_mut());
    let mut resid = Tensor2::zeros(rows.len(), d);
    for (o, &r) in rows.iter().enumerate() {
        resid.row_mut(o).copy_from_slice(x.row(r));
    }
    finish_layer(resid, &attn, w)
}

/// Output projection, first residual, and the MLP half of the layer.
fn finish_layer<T: Scalar>(mut resid: Tensor2<T>, attn: &Tensor2<T>, w: &LayerWeights<Tensor2<T>>) -> Result<Tensor2<T>> {
    let (rows, d) = resid.shape();
    let proj = linear(attn.data(), rows, &w.attn_out_weight, &w.attn_out_bias);
    resid.add_assign(&proj);
    let mut normed = Tensor2::zeros(rows, d);
    kernels::layer_norm(resid.data(), w.mlp_norm_gain.data(), w.mlp_norm_bias.data(), d, normed.data_mut());
    let hidden = linear(normed.data(), rows, &w.fc_in_weight, &w.fc_in_bias).map(kernels::gelu);
    let out = linear(hidden.data(), rows, &w.fc_out_weight, &w.fc_out_bias);
    resid.add_assign(&out);
    Ok(resid)
}

/// Records one layer on the autodiff graph.
pub fn transformer_layer_graph<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    w: &LayerWeights<NodeId>,
    layout: &Arc<SeqLayout>,
    n_heads: usize,
) -> Result<NodeId> {
    let normed = g.layer_norm(x, w.attn_norm_gain, w.attn_norm_bias)?;
    let qkv = g.linear(normed, w.qkv_weight, w.qkv_bias)?;
    let attn = g.causal_attention(qkv, Arc::clone(layout), n_heads)?;
    let proj = g.linear(attn, w.attn_out_weight, w.attn_out_bias)?;
    let resid = g.add(x, proj)?;
    let normed = g.layer_norm(resid, w.mlp_norm_gain, w.mlp_norm_bias)?;
    let hidden = g.linear(normed, w.fc_in_weight, w.fc_in_bias)?;
    let hidden = g.gelu(hidden);
    let out = g.linear(hidden, w.fc_out_weight, w.fc_out_bias)?;
    g.add(resid, out)
}
