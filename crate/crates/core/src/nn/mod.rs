//! Dense tensors, reverse-mode autodiff, and transformer layers.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layer;
pub mod tensor;

pub use gradcheck::{finite_diff_check, FiniteDiffOptions, FiniteDiffReport};
pub use graph::{Gradients, Graph, NodeId};
pub use kernels::SeqLayout;
pub use layer::{
    transformer_layer_forward, transformer_layer_forward_rows, transformer_layer_graph, LayerDims, LayerWeights,
};
pub use tensor::Tensor2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-wise softmax with max subtraction. Rejects non-finite input.
pub fn softmax_rows<T: Scalar>(m: &Tensor2<T>) -> Result<Tensor2<T>> {
    if !m.all_finite() {
        return Err(Error::NumericDomain("softmax input contains NaN or infinity".into()));
    }
    let mut out = m.clone();
    kernels::softmax_rows_in_place(out.data_mut(), m.cols());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_row() {
        let s = softmax_rows(&Tensor2::<f64>::zeros(1, 4)).unwrap();
        assert_eq!(s.row(0), &[0.25; 4]);
    }

    #[test]
    fn large_logit_does_not_overflow() {
        let s = softmax_rows(&Tensor2::from_vec(1, 2, vec![1000.0f32, 0.0]).unwrap()).unwrap();
        assert!(s.all_finite());
        assert!((s.get(0, 0) - 1.0).abs() < 1e-6);
        assert!(s.get(0, 1) < 1e-6);
    }

    #[test]
    fn two_to_one_odds() {
        let s = softmax_rows(&Tensor2::from_vec(1, 2, vec![2f64.ln(), 0.0]).unwrap()).unwrap();
        assert!((s.get(0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.get(0, 1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        let m = Tensor2::from_vec(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(softmax_rows(&m), Err(Error::NumericDomain(_))));
    }
}
