use latent_trace::model::{init_params, loss_graph, write_checkpoint, LoopedConfig, LoopedModelParams};
use latent_trace::nn::{finite_diff_check, FiniteDiffOptions, Tensor2};
use latent_trace::seed::rng;
use latent_trace::task::{
    all_orderings, build_world, generate_item, make_variants, PermutedItem, Stem, Vocab, WorldConfig,
};
use latent_trace::train::{
    evaluate_accuracy, sample_depth, train, train_model, train_step, AdamW, TrainConfig, TrainingStream,
};
use latent_trace::Error;
use rand::Rng;

fn tiny() -> LoopedConfig {
    LoopedConfig {
        vocab_size: 48,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        prelude_layers: 1,
        recurrent_layers: 1,
        coda_layers: 1,
        max_seq: 16,
        k_max: 8,
    }
}

#[test]
fn uniform_depth_mean() {
    let c = TrainConfig::default();
    let mut r = rng(42);
    let n = 100_000;
    let mean = (0..n).map(|_| sample_depth(&mut r, &c, 30).unwrap() as f64).sum::<f64>() / n as f64;
    assert!((mean - 15.5).abs() < 0.1, "{mean}");
}

#[test]
fn zero_learning_rate_leaves_params_unchanged() {
    let world = build_world(0, &WorldConfig::default()).unwrap();
    let config = TrainConfig {
        learning_rate: 0.0,
        ..Default::default()
    };
    let mut p = init_params::<f32>(&tiny(), 1).unwrap();
    let before = p.clone();
    let batch = TrainingStream::new(&world, &config, 3).unwrap().next_batch(4).unwrap();
    let mut opt = AdamW::new(&p.weights);
    let out = train_step(&mut p, &batch, 3, &mut opt, &config).unwrap();
    assert!(out.loss.is_finite());
    assert_eq!(opt.step, 1);
    assert_eq!(p, before);
}

#[test]
fn overfitting_one_batch_lowers_the_loss() {
    let world = build_world(0, &WorldConfig::default()).unwrap();
    let config = TrainConfig {
        learning_rate: 3e-3,
        warmup_steps: 0,
        ..Default::default()
    };
    let mut p = init_params::<f32>(&tiny(), 2).unwrap();
    let batch = TrainingStream::new(&world, &config, 4).unwrap().next_batch(8).unwrap();
    let mut opt = AdamW::new(&p.weights);
    let losses: Vec<f64> = (0..50)
        .map(|_| train_step(&mut p, &batch, 2, &mut opt, &config).unwrap().loss)
        .collect();
    let upticks = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(upticks <= 5, "{losses:?}");
    assert!(losses[49] < 0.5 * losses[0], "{losses:?}");
}

#[test]
fn nan_weights_abort_the_step() {
    let world = build_world(0, &WorldConfig::default()).unwrap();
    let config = TrainConfig::default();
    let mut p = init_params::<f32>(&tiny(), 2).unwrap();
    p.weights.coda[0].fc_out_bias.set(0, 0, f32::NAN);
    let batch = TrainingStream::new(&world, &config, 4).unwrap().next_batch(2).unwrap();
    let mut opt = AdamW::new(&p.weights);
    assert!(matches!(
        train_step(&mut p, &batch, 2, &mut opt, &config),
        Err(Error::NonFiniteLoss { .. })
    ));
}

#[test]
fn recurrent_gradients_pass_finite_difference_check_at_depth_three() {
    let world = build_world(0, &WorldConfig::default()).unwrap();
    let config = LoopedConfig {
        recurrent_layers: 2,
        ..tiny()
    };
    let mut base = init_params::<f64>(&config, 5).unwrap();
    let mut r = rng(6);
    for slot in base.weights.slots_mut() {
        if slot.rows() > 1 {
            *slot = Tensor2::randn(slot.rows(), slot.cols(), 0.2, &mut r);
        }
    }
    let batch = TrainingStream::new(&world, &TrainConfig::default(), 7).unwrap().next_batch(3).unwrap();
    let refs: Vec<(&[usize], usize)> = batch.iter().map(|(t, y)| (t.as_slice(), *y)).collect();
    let n_rec = 12 * config.recurrent_layers;
    let with = |flat: &[Tensor2<f64>]| {
        let mut p = base.clone();
        for (slot, t) in p.weights.recurrent.iter_mut().flat_map(|l| l.slots_mut()).zip(flat) {
            *slot = t.clone();
        }
        p
    };
    let flat: Vec<Tensor2<f64>> = base.weights.recurrent.iter().flat_map(|l| l.slots().map(Clone::clone)).collect();
    assert_eq!(flat.len(), n_rec);
    let lg = loss_graph(&base, &refs, 3).unwrap();
    let grads = lg.graph.backward(lg.loss).unwrap();
    let analytic: Vec<Tensor2<f64>> = lg
        .params
        .recurrent
        .iter()
        .flat_map(|l| l.slots().map(|id| grads.get(*id).unwrap().clone()))
        .collect();
    let f = |p: &[Tensor2<f64>]| {
        let lg = loss_graph(&with(p), &refs, 3)?;
        Ok(lg.graph.value(lg.loss).get(0, 0))
    };
    let report = finite_diff_check(f, &flat, &analytic, FiniteDiffOptions::default()).unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

fn eval_items(n: usize, seed: u64) -> Vec<PermutedItem> {
    let world = build_world(0, &WorldConfig::default()).unwrap();
    let mut s = TrainingStream::new(&world, &TrainConfig::default(), seed).unwrap();
    (0..n)
        .map(|i| {
            let v = if i % 2 == 0 {
                latent_trace::task::Variant::Base
            } else {
                latent_trace::task::Variant::Easy
            };
            s.next_item(v).unwrap()
        })
        .collect()
}

#[test]
fn untrained_model_is_at_chance() {
    let mut total = 0.0;
    for seed in 0..6 {
        let p = init_params::<f32>(&LoopedConfig::default(), seed).unwrap();
        total += evaluate_accuracy(&p, &eval_items(200, 100 + seed), 2).unwrap();
    }
    let acc = total / 6.0;
    assert!((acc - 0.25).abs() <= 0.05, "{acc}");
    let p = init_params::<f32>(&LoopedConfig::default(), 0).unwrap();
    assert!(matches!(evaluate_accuracy(&p, &[], 2), Err(Error::Empty(_))));
}

/// Identity layers and an embedding that points the answer position at one token.
#[test]
fn hand_built_lookup_is_perfect() {
    let world = build_world(0, &WorldConfig::default()).unwrap();
    let stem = Stem {
        subject: 2,
        chain: vec![1],
    };
    let item = generate_item(&world, &stem, 0, &mut rng(1)).unwrap();
    let answer = item.answer_token;
    let config = LoopedConfig::default();
    let mut p = init_params::<f64>(&config, 0).unwrap();
    for layer in p.weights.prelude.iter_mut().chain(&mut p.weights.recurrent).chain(&mut p.weights.coda) {
        for w in layer.slots_mut() {
            *w = Tensor2::zeros(w.rows(), w.cols());
        }
    }
    p.weights.position_embedding = Tensor2::zeros(config.max_seq, config.d_model);
    let d = config.d_model;
    let mut arrow = vec![0.0; d];
    arrow[0] = 1.0;
    arrow[1] = -1.0;
    let mut target = vec![0.0; d];
    target[0] = 5.0;
    target[1] = -5.0;
    p.weights.token_embedding.row_mut(Vocab::ARROW).copy_from_slice(&arrow);
    p.weights.token_embedding.row_mut(answer).copy_from_slice(&target);
    let items: Vec<PermutedItem> = all_orderings().into_iter().map(|o| PermutedItem::new(&item, o, 0)).collect();
    assert_eq!(evaluate_accuracy(&p, &items, 3).unwrap(), 1.0);
}

#[test]
fn accuracy_over_all_orders_ignores_canonical_order() {
    let world = build_world(0, &WorldConfig::default()).unwrap();
    let p = init_params::<f32>(&LoopedConfig::default(), 12).unwrap();
    let mut r = rng(13);
    let orders = all_orderings();
    for i in 0..10 {
        let stem = Stem {
            subject: r.random_range(0..world.n_entities()),
            chain: vec![r.random_range(0..world.n_attributes())],
        };
        let item = generate_item(&world, &stem, i, &mut r).unwrap();
        let mut shuffled = item.clone();
        let o = orders[r.random_range(0..24)];
        shuffled.options = o.map(|j| item.options[j]);
        shuffled.correct_index = Some(o.iter().position(|&j| Some(j) == item.correct_index).unwrap());
        let sweep = |it: &latent_trace::task::QuestionItem| -> Vec<PermutedItem> {
            orders.iter().map(|&o| PermutedItem::new(it, o, 0)).collect()
        };
        let a = evaluate_accuracy(&p, &sweep(&item), 2).unwrap();
        let b = evaluate_accuracy(&p, &sweep(&shuffled), 2).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn make_variants_items_are_answerable_or_not() {
    let world = build_world(0, &WorldConfig::default()).unwrap();
    let item = generate_item(&world, &Stem { subject: 0, chain: vec![0] }, 0, &mut rng(0)).unwrap();
    let [b, e, x] = make_variants(&item, &world, &mut rng(1)).unwrap();
    let p = init_params::<f32>(&tiny(), 0).unwrap();
    let as_items = |q: &latent_trace::task::QuestionItem| vec![PermutedItem::new(q, [0, 1, 2, 3], 0)];
    assert!(evaluate_accuracy(&p, &as_items(&b), 2).is_ok());
    assert!(evaluate_accuracy(&p, &as_items(&e), 2).is_ok());
    assert!(evaluate_accuracy(&p, &as_items(&x), 2).is_err());
}

#[test]
fn training_is_deterministic_and_logs_every_epoch() {
    let world = build_world(0, &WorldConfig::default()).unwrap();
    let config = TrainConfig {
        epochs: 2,
        steps_per_epoch: 3,
        batch_size: 4,
        eval_depths: vec![1, 8],
        eval_items: 4,
        ..Default::default()
    };
    let run = || {
        let (p, log) = train_model(&tiny(), &world, &config, |_| {}).unwrap();
        (write_checkpoint(&p).unwrap(), log)
    };
    let (a, log_a) = run();
    let (b, log_b) = run();
    assert_eq!(a, b);
    assert_eq!(log_a.to_csv().unwrap(), log_b.to_csv().unwrap());
    assert_eq!(log_a.records.len(), 2);
    let csv = log_a.to_csv().unwrap();
    assert!(csv.starts_with("epoch,mean_loss,easy_k1,easy_k8,base_k1,base_k8\n"));
    for r in &log_a.records {
        assert!(r.mean_loss.is_finite());
        assert!(r.accuracy.iter().all(|a| (0.0..=1.0).contains(&a.accuracy)));
    }
}

#[test]
fn vocab_must_fit_the_model() {
    let world = build_world(0, &WorldConfig::default()).unwrap();
    let small = LoopedConfig {
        vocab_size: 10,
        ..tiny()
    };
    let mut p: LoopedModelParams<f32> = init_params(&small, 0).unwrap();
    assert!(matches!(
        train(
            &mut p,
            &world,
            &TrainConfig {
                eval_depths: vec![1],
                ..Default::default()
            },
            |_| {}
        ),
        Err(Error::VocabBudget { .. })
    ));
}
