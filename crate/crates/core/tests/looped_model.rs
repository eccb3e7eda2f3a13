use latent_trace::model::{
    coda_decode, init_params, prelude_forward, recurrent_step, run_deliberation, LoopedConfig, LoopedModelParams,
};
use latent_trace::seed::rng;
use latent_trace_oracles as oracle;
use rand::Rng;

fn small() -> LoopedConfig {
    LoopedConfig {
        vocab_size: 24,
        d_model: 16,
        n_heads: 4,
        d_ff: 32,
        prelude_layers: 2,
        recurrent_layers: 2,
        coda_layers: 2,
        max_seq: 10,
        k_max: 30,
    }
}

/// Larger-than-default weights so the layers do more than pass the residual through.
fn params(seed: u64) -> LoopedModelParams<f64> {
    let mut p = init_params::<f64>(&small(), seed).unwrap();
    let mut r = rng(seed + 1000);
    for slot in p.weights.slots_mut() {
        if slot.rows() > 1 {
            *slot = latent_trace::Tensor64::randn(slot.rows(), slot.cols(), 0.25, &mut r);
        }
    }
    p
}

fn tokens(seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    let n = r.random_range(3..10);
    (0..n).map(|_| r.random_range(0..24)).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
}

#[test]
fn prelude_matches_oracle() {
    let p = params(1);
    let t = tokens(2);
    let h0 = prelude_forward(&p, &t).unwrap();
    assert_eq!(h0.step, 0);
    assert_eq!(h0.state.shape(), (t.len(), 16));
    let slow = oracle::prelude(&p, &t);
    for (i, row) in slow.iter().enumerate() {
        assert!(close(h0.state.row(i), row, 1e-6));
    }
    assert_eq!(prelude_forward(&p, &t).unwrap(), h0);
}

#[test]
fn three_step_unroll_matches_oracle() {
    let p = params(3);
    let t = tokens(4);
    let mut h = prelude_forward(&p, &t).unwrap();
    let mut slow = oracle::prelude(&p, &t);
    for step in 1..=3 {
        h = recurrent_step(&p, &h).unwrap();
        slow = oracle::recurrent(&p, &slow);
        assert_eq!(h.step, step);
    }
    for (i, row) in slow.iter().enumerate() {
        assert!(close(h.state.row(i), row, 1e-6));
    }
    let fast = coda_decode(&p, &h).unwrap();
    assert!(close(&fast.probs, &oracle::decode(&p, &slow), 1e-6));
}

#[test]
fn recurrent_step_is_pure() {
    let p = params(5);
    let h0 = prelude_forward(&p, &tokens(6)).unwrap();
    let a = recurrent_step(&p, &recurrent_step(&p, &h0).unwrap()).unwrap();
    let b = recurrent_step(&p, &recurrent_step(&p, &h0).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn every_step_decodes_to_a_distribution() {
    let p = params(7);
    let steps = run_deliberation(&p, &tokens(8), 30).unwrap();
    assert_eq!(steps.len(), 30);
    for (i, s) in steps.iter().enumerate() {
        assert_eq!(s.step, i + 1);
        assert!((s.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(s.probs.iter().all(|&x| x > 0.0));
    }
    let h = prelude_forward(&p, &tokens(8)).unwrap();
    assert_eq!(coda_decode(&p, &h).unwrap(), coda_decode(&p, &h).unwrap());
}

#[test]
fn shorter_runs_are_exact_prefixes() {
    let p = init_params::<f32>(&small(), 9).unwrap();
    let t = tokens(10);
    let long = run_deliberation(&p, &t, 30).unwrap();
    let short = run_deliberation(&p, &t, 5).unwrap();
    assert_eq!(&long[..5], &short[..]);
}

#[test]
fn recurrent_weights_are_shared_across_steps() {
    let mut p = params(11);
    let t = tokens(12);
    let before = run_deliberation(&p, &t, 6).unwrap();
    let w = &mut p.weights.recurrent[0].fc_out_bias;
    w.set(0, 0, w.get(0, 0) + 0.5);
    let after = run_deliberation(&p, &t, 6).unwrap();
    for (a, b) in before.iter().zip(&after) {
        assert_ne!(a.probs, b.probs);
    }
}
