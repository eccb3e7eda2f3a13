use std::sync::Arc;

use latent_trace::nn::{
    finite_diff_check, softmax_rows, transformer_layer_forward, transformer_layer_graph, FiniteDiffOptions, Graph,
    LayerDims, LayerWeights, SeqLayout, Tensor2,
};
use latent_trace::seed::rng;
use latent_trace_oracles as oracle;
use rand::Rng;

fn random_layer(dims: LayerDims, seed: u64) -> LayerWeights<Tensor2<f64>> {
    let mut r = rng(seed);
    let mut w = LayerWeights::init(dims, 0.3, &mut r);
    for slot in w.slots_mut() {
        *slot = Tensor2::randn(slot.rows(), slot.cols(), 0.3, &mut r);
    }
    w
}

#[test]
fn softmax_rows_are_distributions() {
    let mut r = rng(11);
    let m = Tensor2::<f64>::from_fn(1000, 7, |i, _| {
        let scale = if i % 3 == 0 { 1e3 } else { 5.0 };
        r.random_range(-scale..=scale)
    });
    let p = softmax_rows(&m).unwrap();
    for i in 0..p.rows() {
        let row = p.row(i);
        assert!(row.iter().all(|&x| x >= 0.0 && x.is_finite()));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn causal_prefix_is_unaffected_by_suffix() {
    let dims = LayerDims {
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
    };
    let mut r = rng(5);
    for case in 0..100 {
        let w = random_layer(dims, case);
        let n = r.random_range(2..9);
        let x = Tensor2::<f64>::randn(n, 8, 1.0, &mut r);
        let cut = r.random_range(1..n);
        let mut y = x.clone();
        for i in cut..n {
            for c in 0..8 {
                y.set(i, c, r.random_range(-3.0..3.0));
            }
        }
        let layout = SeqLayout::single(n);
        let a = transformer_layer_forward(&x, &w, &layout, 2).unwrap();
        let b = transformer_layer_forward(&y, &w, &layout, 2).unwrap();
        for i in 0..cut {
            assert_eq!(a.row(i), b.row(i), "case {case} row {i}");
        }
    }
}

#[test]
fn layer_matches_naive_oracle() {
    let dims = LayerDims {
        d_model: 12,
        n_heads: 3,
        d_ff: 20,
    };
    for seed in 0..5 {
        let w = random_layer(dims, seed);
        let x = Tensor2::<f64>::randn(6, 12, 1.0, &mut rng(100 + seed));
        let rows: Vec<Vec<f64>> = (0..6).map(|i| x.row(i).to_vec()).collect();
        for causal in [true, false] {
            let layout = if causal {
                SeqLayout::single(6)
            } else {
                SeqLayout::single(6).bidirectional()
            };
            let fast = transformer_layer_forward(&x, &w, &layout, 3).unwrap();
            let slow = oracle::layer(&rows, &w, 3, causal);
            for i in 0..6 {
                for c in 0..12 {
                    assert!((fast.get(i, c) - slow[i][c]).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn two_layer_stack_gradients_match_finite_differences() {
    let dims = LayerDims {
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
    };
    let layers = [random_layer(dims, 1), random_layer(dims, 2)];
    let x = Tensor2::<f64>::randn(5, 8, 1.0, &mut rng(3));
    let head = Tensor2::<f64>::randn(6, 8, 0.5, &mut rng(4));
    let layout = Arc::new(SeqLayout::from_lengths(&[3, 2]));
    let targets = vec![1, 4];

    let loss = |flat: &[Tensor2<f64>]| -> latent_trace::Result<(f64, Vec<Tensor2<f64>>)> {
        let mut g = Graph::new();
        let mut ids = Vec::new();
        let mut h = g.input(x.clone());
        for l in 0..2 {
            let w = LayerWeights::from_array(std::array::from_fn(|i| g.param(flat[12 * l + i].clone())));
            h = transformer_layer_graph(&mut g, h, &w, &layout, 2)?;
            ids.extend(w.slots().into_iter().copied());
        }
        let last = g.gather(h, layout.last_rows())?;
        let hw = g.input(head.clone());
        let logits = g.matmul_bt(last, hw)?;
        let ce = g.cross_entropy(logits, targets.clone())?;
        let grads = g.backward(ce)?;
        let value = g.value(ce).get(0, 0);
        Ok((value, ids.iter().map(|&id| grads.get(id).unwrap().clone()).collect()))
    };
    let flat: Vec<Tensor2<f64>> = layers.iter().flat_map(|l| l.slots().into_iter().cloned()).collect();
    let (_, analytic) = loss(&flat).unwrap();
    let report = finite_diff_check(|p| loss(p).map(|r| r.0), &flat, &analytic, FiniteDiffOptions::default()).unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
    assert!(report.coords_checked > 500);
}

#[test]
fn forward_and_backward_stay_finite() {
    let dims = LayerDims {
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
    };
    let w = random_layer(dims, 9);
    let x = Tensor2::<f64>::randn(4, 8, 50.0, &mut rng(1));
    let layout = Arc::new(SeqLayout::single(4));
    let mut g = Graph::new();
    let xi = g.param(x);
    let ids = w.map(|_, t| g.param(t.clone()));
    let h = transformer_layer_graph(&mut g, xi, &ids, &layout, 2).unwrap();
    let s = g.sum(h);
    let grads = g.backward(s).unwrap();
    assert!(g.value(h).all_finite());
    assert!(grads.get(xi).unwrap().all_finite());
}
