use latent_trace::seed::rng;
use latent_trace::task::{
    build_world, constructed_similarity, generate_benchmark, generate_item, BenchmarkConfig, Stem, SyntheticWorld,
    Variant, WorldConfig,
};
use proptest::prelude::*;
use rand::Rng;

fn world(seed: u64) -> SyntheticWorld {
    build_world(seed, &WorldConfig::default()).unwrap()
}

#[test]
fn base_distractors_beat_random_cross_category_tokens() {
    let w = world(3);
    let mut r = rng(4);
    let stems = w.all_stems(2);
    let (mut base_sum, mut base_n, mut rand_sum) = (0.0, 0.0, 0.0);
    for i in 0..1000 {
        let stem = &stems[r.random_range(0..stems.len())];
        let item = generate_item(&w, stem, i, &mut r).unwrap();
        let c = item.correct_index.unwrap();
        let answer = item.options[c].entity;
        for (j, o) in item.options.iter().enumerate() {
            if j != c {
                base_sum += o.similarity;
                base_n += 1.0;
            }
        }
        let other = loop {
            let e = r.random_range(0..w.n_entities());
            if w.entity_category[e] != w.entity_category[answer] {
                break e;
            }
        };
        rand_sum += constructed_similarity(&w, answer, other);
    }
    assert!(base_sum / base_n > rand_sum / 1000.0);
}

#[test]
fn full_benchmark_honours_variant_contract() {
    let w = world(1);
    let bench = generate_benchmark(&w, &BenchmarkConfig::default(), 2).unwrap();
    assert_eq!(bench.n_stems(), 260);
    assert!(w.vocab.size() <= w.config.vocab_budget);
    let (mut base_sim, mut easy_sim, mut n) = (0.0, 0.0, 0.0);
    for stem_id in 0..bench.n_stems() {
        let b = bench.item(stem_id, Variant::Base).unwrap();
        let e = bench.item(stem_id, Variant::Easy).unwrap();
        let x = bench.item(stem_id, Variant::NoCorrect).unwrap();
        let truth = w.vocab.entity(w.resolve(b.stem.subject, &b.stem.chain));
        assert_eq!(b.answer_token, truth);
        assert_eq!(b.options[b.correct_index.unwrap()].token, truth);
        assert_eq!(e.options[e.correct_index.unwrap()].token, truth);
        assert!(x.options.iter().all(|o| o.token != truth));
        assert_eq!(b.stem_tokens, e.stem_tokens);
        assert_eq!(b.stem_tokens, x.stem_tokens);
        let correct_sim = e.options[e.correct_index.unwrap()].similarity;
        for (j, o) in e.options.iter().enumerate() {
            if Some(j) != e.correct_index {
                assert!(correct_sim >= o.similarity);
                easy_sim += o.similarity;
                base_sim += b.options[j].similarity;
                n += 1.0;
            }
        }
    }
    assert!(base_sim / n > easy_sim / n);
    assert_eq!(bench, generate_benchmark(&w, &BenchmarkConfig::default(), 2).unwrap());
}

#[test]
fn every_stem_answer_is_in_the_fact_table() {
    let w = world(6);
    for stem in w.all_stems(2) {
        let answer = w.resolve(stem.subject, &stem.chain);
        let mut e = stem.subject;
        for &a in &stem.chain {
            e = w.facts[e][a];
        }
        assert_eq!(answer, e);
        assert_eq!(w.entity_category[answer], w.answer_category(&stem.chain));
    }
}

proptest! {
    #[test]
    fn items_have_one_answer_and_valid_permutations(seed in 0u64..500, subject in 0usize..32, a in 0usize..4) {
        let w = world(seed % 7);
        let stem = Stem { subject, chain: vec![a] };
        let item = generate_item(&w, &stem, 0, &mut rng(seed)).unwrap();
        let truth = w.vocab.entity(w.facts[subject][a]);
        prop_assert_eq!(item.options.iter().filter(|o| o.token == truth).count(), 1);
        let perms = latent_trace::task::permute_options(&item, seed, 25).unwrap();
        for p in perms {
            let mut seen = p.permutation;
            seen.sort();
            prop_assert_eq!(seen, [0, 1, 2, 3]);
            prop_assert_eq!(p.canonical_options(), item.option_tokens());
            prop_assert_eq!(p.options[p.correct_index.unwrap()], truth);
        }
    }
}
