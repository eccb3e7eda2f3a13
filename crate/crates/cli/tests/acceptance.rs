//! Acceptance run: one PASS/FAIL line per criterion, each at its pinned
//! tolerance, followed by the measured runtime.
//!
//! The model-level criteria share one full-scale experiment built from the
//! default [`ExperimentConfig`]: the checkpoint feeds decoder readiness, the
//! per-step argmax in the trajectory file feeds depth robustness (step `k`
//! of a `K`-step trace is exactly the depth-`k` prediction), and the summary
//! feeds the exploration and entropy comparisons. The same config is then
//! run a second time into the same directory to check byte-level
//! determinism.
//!
//! The process exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use latent_trace::metrics::{
    aggregate_stats, analyze_instance, belief_trajectory, bootstrap_ci, detect_backtracks, entropy, exploration_end,
    step_kl, BeliefTrajectory, InstanceId, MetricParams, Summary,
};
use latent_trace::model::{init_params, load_checkpoint, loss_graph, run_deliberation, write_checkpoint, LoopedConfig};
use latent_trace::nn::{
    finite_diff_check, transformer_layer_graph, FiniteDiffOptions, Graph, LayerDims, LayerWeights, SeqLayout,
    Tensor2,
};
use latent_trace::seed::rng;
use latent_trace::task::{build_world, Benchmark, OptionEntry, QuestionItem, Stem, Variant, WorldConfig};
use latent_trace::train::{TrainConfig, TrainingStream};
use latent_trace_cli::pipeline::{self, output_files};
use latent_trace_cli::report::{curve_rows, from_csv, rank_rows, summary_rows, to_csv, CurveCsvRow, RankCsvRow, SummaryRow};
use latent_trace_cli::verify::verify_dir;
use latent_trace_cli::{run_experiment, ExperimentConfig};
use latent_trace_oracles as oracle;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

struct Harness {
    failures: usize,
}

impl Harness {
    fn check(&mut self, name: &str, budget: Duration, f: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let in_time = took <= budget;
        let passed = v.passed && in_time;
        if !passed {
            self.failures += 1;
        }
        let tag = if passed { "PASS" } else { "FAIL" };
        let timing = if in_time { "" } else { " over budget" };
        println!(
            "{tag} {name}: {} [{:.1}s / {:.0}s{timing}]",
            v.detail,
            took.as_secs_f64(),
            budget.as_secs_f64()
        );
    }
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn random_layer(dims: LayerDims, seed: u64) -> LayerWeights<Tensor2<f64>> {
    let mut r = rng(seed);
    let mut w = LayerWeights::init(dims, 0.3, &mut r);
    for slot in w.slots_mut() {
        *slot = Tensor2::randn(slot.rows(), slot.cols(), 0.3, &mut r);
    }
    w
}

fn two_layer_gradcheck() -> f64 {
    let dims = LayerDims {
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
    };
    let layers = [random_layer(dims, 1), random_layer(dims, 2)];
    let x = Tensor2::<f64>::randn(5, 8, 1.0, &mut rng(3));
    let head = Tensor2::<f64>::randn(6, 8, 0.5, &mut rng(4));
    let layout = Arc::new(SeqLayout::from_lengths(&[3, 2]));
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
        let ce = g.cross_entropy(logits, vec![1, 4])?;
        let grads = g.backward(ce)?;
        let value = g.value(ce).get(0, 0);
        Ok((value, ids.iter().map(|&id| grads.get(id).unwrap().clone()).collect()))
    };
    let flat: Vec<Tensor2<f64>> = layers.iter().flat_map(|l| l.slots().into_iter().cloned()).collect();
    let (_, analytic) = loss(&flat).unwrap();
    finite_diff_check(|p| loss(p).map(|r| r.0), &flat, &analytic, FiniteDiffOptions::default())
        .unwrap()
        .max_rel_error
}

fn looped_gradcheck() -> f64 {
    let world = build_world(0, &WorldConfig::default()).unwrap();
    let config = LoopedConfig {
        vocab_size: 48,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        prelude_layers: 1,
        recurrent_layers: 2,
        coda_layers: 1,
        max_seq: 16,
        k_max: 8,
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
    let with = |flat: &[Tensor2<f64>]| {
        let mut p = base.clone();
        for (slot, t) in p.weights.slots_mut().into_iter().zip(flat) {
            *slot = t.clone();
        }
        p
    };
    let flat: Vec<Tensor2<f64>> = base.weights.named().into_iter().map(|(_, w)| w.clone()).collect();
    let lg = loss_graph(&base, &refs, 3).unwrap();
    let grads = lg.graph.backward(lg.loss).unwrap();
    let analytic: Vec<Tensor2<f64>> = lg
        .params
        .named()
        .into_iter()
        .map(|(_, id)| grads.get(*id).unwrap().clone())
        .collect();
    let f = |p: &[Tensor2<f64>]| {
        let lg = loss_graph(&with(p), &refs, 3)?;
        Ok(lg.graph.value(lg.loss).get(0, 0))
    };
    finite_diff_check(f, &flat, &analytic, FiniteDiffOptions::default())
        .unwrap()
        .max_rel_error
}

fn autodiff() -> Verdict {
    let stack = two_layer_gradcheck();
    let looped = looped_gradcheck();
    verdict(
        stack <= 1e-4 && looped <= 1e-4,
        format!("max rel error 2-layer {stack:.2e}, looped k=3 {looped:.2e} (≤ 1e-4)"),
    )
}

fn random_distribution(r: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0f64).powi(3) + 1e-12).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn metric_oracles() -> Verdict {
    let mut r = rng(1);
    let (mut worst, mut negative) = (0.0f64, 0usize);
    for _ in 0..10_000 {
        let n = r.random_range(2..80);
        let p = random_distribution(&mut r, n);
        let q = random_distribution(&mut r, n);
        let kl = step_kl(&p, &q).unwrap();
        negative += usize::from(kl < 0.0);
        worst = worst
            .max((entropy(&p).unwrap() - oracle::entropy(&p)).abs())
            .max((kl - oracle::kl(&p, &q)).abs());
    }
    verdict(
        worst <= 1e-9 && negative == 0,
        format!("max |Δ| {worst:.2e} over 10^4 pairs (≤ 1e-9), negative KL {negative}"),
    )
}

fn detector_oracles() -> Verdict {
    let mut series = [0usize; 10];
    let mut mismatched = 0;
    for code in 0..3usize.pow(10) {
        let mut c = code;
        for s in series.iter_mut() {
            *s = c % 3;
            c /= 3;
        }
        let fast: Vec<_> = detect_backtracks(&series, 3)
            .into_iter()
            .map(|e| (e.abandoned, e.adopted, e.a_run.0, e.a_run.1, e.b_run.0, e.b_run.1))
            .collect();
        mismatched += usize::from(fast != oracle::brute_force_backtracks(&series, 3));
    }
    let mut r = rng(3);
    let mut scan_mismatch = 0;
    for _ in 0..10_000 {
        let n = r.random_range(0..30);
        let kl: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.6) { r.random_range(0.0..0.01) } else { r.random_range(0.0..0.5) })
            .collect();
        let window = r.random_range(1..5);
        scan_mismatch +=
            usize::from(exploration_end(&kl, 0.01, window).unwrap() != oracle::naive_exploration_end(&kl, 0.01, window));
    }
    verdict(
        mismatched == 0 && scan_mismatch == 0,
        format!("{mismatched}/59049 detector mismatches, {scan_mismatch}/10000 exploration mismatches"),
    )
}

fn statistics() -> Verdict {
    let mut r = rng(4);
    let xs: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut r)).collect();
    let ci = bootstrap_ci(&xs, 10_000, 0.95, 5).unwrap();
    let expected = 2.0 * 1.96 / 1000f64.sqrt();
    let ratio = (ci.upper - ci.lower) / expected;
    let c = bootstrap_ci(&[2.5; 50], 10_000, 0.95, 5).unwrap();
    let flat = c.upper - c.lower;
    verdict(
        (ratio - 1.0).abs() <= 0.2 && flat == 0.0,
        format!("width / closed form = {ratio:.3} (within 20%), constant-input width {flat}"),
    )
}

fn table_item(stem_id: usize, correct: Option<usize>) -> QuestionItem {
    let sims = [1.0, 0.8, 0.5, 0.2];
    QuestionItem {
        stem_id,
        variant: Variant::Base,
        stem: Stem {
            subject: 0,
            chain: vec![0],
        },
        stem_tokens: vec![0],
        options: std::array::from_fn(|j| OptionEntry {
            token: j,
            entity: j,
            similarity: sims[j],
        }),
        correct_index: correct,
        answer_token: 0,
    }
}

fn table_machinery() -> Verdict {
    let mp = MetricParams {
        n_resamples: 200,
        curve_resamples: 20,
        ..Default::default()
    };
    // Option 0 is correct; similarity falls from option 1 to option 3.
    // Five events: 1→0 twice, 2→0, 3→0, and 1→2 ending wrong.
    let cases: [&[usize]; 8] = [
        &[1, 1, 1, 0, 0, 0],
        &[1, 1, 1, 0, 0, 0],
        &[2, 2, 2, 0, 0, 0],
        &[3, 3, 3, 0, 0, 0],
        &[1, 1, 1, 2, 2, 2],
        &[0, 0, 0, 0, 0, 0],
        &[0, 0, 0, 0, 0, 0],
        &[3, 3, 3, 3, 3, 3],
    ];
    let insts: Vec<_> = cases
        .iter()
        .enumerate()
        .map(|(stem, series)| {
            let dists: Vec<Vec<f64>> = series
                .iter()
                .map(|&a| (0..4).map(|j| if j == a { 0.7 } else { 0.1 }).collect())
                .collect();
            let id = InstanceId {
                stem_id: stem,
                variant: Variant::Base,
                perm_index: 0,
            };
            let t = belief_trajectory(&dists, [0, 1, 2, 3], id, [0, 1, 2, 3], Some(0)).unwrap();
            analyze_instance::<f32>(&t, &table_item(stem, Some(0)), &mp, None).unwrap()
        })
        .collect();
    let s = aggregate_stats(&insts, &mp, 1).unwrap();
    let b = s.variant(Variant::Base);
    let count = |l: &str| b.rank_row(l).unwrap().count;
    let point = |c: Option<latent_trace::metrics::BootstrapCI>| c.unwrap().point;
    let checks = [
        (b.n_backtracking == 5, "5 backtracking instances"),
        (point(b.prevalence) == 5.0 / 8.0, "prevalence 5/8"),
        (point(b.accuracy_backtracking) == 4.0 / 5.0, "accuracy with backtracking 4/5"),
        (point(b.accuracy_non_backtracking) == 2.0 / 3.0, "accuracy without 2/3"),
        (point(b.uplift) == 4.0 / 5.0 - 2.0 / 3.0, "uplift 4/5 - 2/3"),
        ((count("most_similar"), count("second"), count("least_similar")) == (3, 1, 1), "ranks 3/1/1"),
        (count("adopted_correct") == 4, "4 adopted correct"),
        (point(b.rank_row("adopted_correct").unwrap().frac_all_events) == 4.0 / 5.0, "adopted-correct 4/5"),
        (point(b.rank_row("most_similar").unwrap().frac_all_events) == 3.0 / 5.0, "most-similar 3/5"),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.0).map(|c| c.1).collect();
    verdict(
        failed.is_empty(),
        if failed.is_empty() {
            "prevalence, uplift, rank histogram and adopted-correct fraction exact".to_string()
        } else {
            format!("mismatched: {}", failed.join(", "))
        },
    )
}

struct Experiment {
    config: ExperimentConfig,
    bench: Benchmark,
    trajs: Vec<BeliefTrajectory>,
    summary: Summary,
    train_time: Duration,
    analysis_time: Duration,
    total_time: Duration,
}

fn first_run(dir: &Path) -> Experiment {
    let _ = std::fs::remove_dir_all(dir);
    let config = ExperimentConfig {
        out_dir: dir.to_path_buf(),
        ..Default::default()
    };
    let start = Instant::now();
    pipeline::prepare(&config).unwrap();
    let world = pipeline::world(&config).unwrap();
    let bench = pipeline::gen_bench(&config, &world).unwrap();
    let t = Instant::now();
    let (params, _) = pipeline::train(&config, &world, |r| {
        eprintln!("  epoch {} loss {:.4}", r.epoch, r.mean_loss);
    })
    .unwrap();
    let train_time = t.elapsed();
    let t = Instant::now();
    let trajs = pipeline::trace(&config, &params, &bench).unwrap();
    let summary = pipeline::analyze(&config, &bench, &trajs, Some(&params)).unwrap();
    let analysis_time = t.elapsed();
    pipeline::plot(&config, &bench, &trajs, &summary).unwrap();
    pipeline::seal(dir).unwrap();
    Experiment {
        config,
        bench,
        trajs,
        summary,
        train_time,
        analysis_time,
        total_time: start.elapsed(),
    }
}

fn decoder_readiness(exp: &Experiment) -> Verdict {
    let params = pipeline::load_params(&exp.config.out_dir).unwrap();
    // NoCorrect prompts never appear in training.
    let prompts: Vec<Vec<usize>> = exp
        .bench
        .permuted()
        .into_iter()
        .filter(|p| p.variant == Variant::NoCorrect && p.perm_index == 0)
        .take(100)
        .map(|p| p.prompt())
        .collect();
    let (mut worst, mut min_p) = (0.0f64, f64::INFINITY);
    for tokens in &prompts {
        for step in run_deliberation(&params, tokens, 30).unwrap() {
            let p = step.to_f64();
            worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
            min_p = min_p.min(p.iter().copied().fold(f64::INFINITY, f64::min));
        }
    }
    verdict(
        prompts.len() == 100 && worst <= 1e-6 && min_p > 0.0,
        format!(
            "{} held-out prompts × 30 steps: max |Σp − 1| {worst:.2e} (≤ 1e-6), min p {min_p:.2e} (> 0)",
            prompts.len()
        ),
    )
}

fn depth_robustness(exp: &Experiment) -> Verdict {
    let easy: Vec<&BeliefTrajectory> = exp.trajs.iter().filter(|t| t.id.variant == Variant::Easy).collect();
    let acc: Vec<(usize, f64)> = [4, 8, 16, 30]
        .iter()
        .map(|&k| {
            let hits = easy.iter().filter(|t| Some(t.argmax[k - 1]) == t.correct_index).count();
            (k, hits as f64 / easy.len() as f64)
        })
        .collect();
    let text: Vec<String> = acc.iter().map(|(k, a)| format!("k={k} {a:.3}")).collect();
    verdict(
        !easy.is_empty() && acc.iter().all(|(_, a)| *a >= 0.75) && exp.train_time <= minutes(30),
        format!(
            "Easy accuracy over {} instances: {} (≥ 0.75); training {:.0}s (≤ 1800s)",
            easy.len(),
            text.join(", "),
            exp.train_time.as_secs_f64()
        ),
    )
}

fn fig3_direction(exp: &Experiment) -> Verdict {
    let s = &exp.summary;
    let fmt = |c: &Option<latent_trace::metrics::BootstrapCI>| {
        c.map_or("undefined".to_string(), |c| format!("{:.3} [{:.3}, {:.3}]", c.point, c.lower, c.upper))
    };
    let explore = s.exploration_difference.is_some_and(|c| c.lower > 0.0);
    let entropy = s.entropy_difference.is_some_and(|c| c.lower > 0.0);
    verdict(
        explore && entropy && exp.analysis_time <= minutes(10),
        format!(
            "exploration Base − Easy {} steps, ratio Base/Easy − 1 {}, final entropy NoCorrect − Base {} nats (CIs must exclude 0); tracing + analysis {:.0}s (≤ 600s)",
            fmt(&s.exploration_difference),
            fmt(&s.exploration_ratio),
            fmt(&s.entropy_difference),
            exp.analysis_time.as_secs_f64()
        ),
    )
}

fn determinism(exp: &Experiment) -> Verdict {
    let dir = &exp.config.out_dir;
    let first = std::fs::read(dir.join("manifest.json")).unwrap();
    let start = Instant::now();
    run_experiment(&exp.config, |_| {}).unwrap();
    let second_time = start.elapsed();
    let second = std::fs::read(dir.join("manifest.json")).unwrap();
    let verify = verify_dir(dir).unwrap();
    let failed: Vec<&str> = verify.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let total = exp.total_time + second_time;
    verdict(
        first == second && verify.passed() && total <= minutes(35),
        format!(
            "manifests {}, verify {} ({} checks{}), two runs {:.0}s (≤ 2100s)",
            if first == second { "identical" } else { "differ" },
            if verify.passed() { "passed" } else { "failed" },
            verify.checks.len(),
            if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) },
            total.as_secs_f64()
        ),
    )
}

fn csv_round_trip(text: &str) -> bool {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &records {
        w.write_record(r).unwrap();
    }
    w.into_inner().unwrap() == text.as_bytes()
}

fn format_validity(dir: &Path) -> Verdict {
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).unwrap();
    let files = output_files();
    let svgs: Vec<&String> = files.iter().filter(|f| f.ends_with(".svg")).collect();
    let bad_svg: Vec<&&String> = svgs
        .iter()
        .filter(|f| roxmltree::Document::parse(&read(f)).map_or(true, |d| !d.root_element().has_tag_name("svg")))
        .collect();
    let summary = pipeline::load_summary(dir).unwrap();
    let typed = from_csv::<SummaryRow>(&read(pipeline::SUMMARY_CSV)).unwrap() == summary_rows(&summary)
        && from_csv::<RankCsvRow>(&read(pipeline::RANKS_CSV)).unwrap() == rank_rows(&summary)
        && from_csv::<CurveCsvRow>(&read(pipeline::CURVES_CSV)).unwrap() == curve_rows(&summary)
        && to_csv(&summary_rows(&summary)).unwrap() == read(pipeline::SUMMARY_CSV);
    let csvs: Vec<&String> = files.iter().filter(|f| f.ends_with(".csv")).collect();
    let bytes_ok = csvs.iter().all(|f| csv_round_trip(&read(f)));
    let ckpt_path = dir.join(pipeline::CHECKPOINT);
    let stored = std::fs::read(&ckpt_path).unwrap();
    let params: latent_trace::model::LoopedModelParams<f32> = load_checkpoint(&ckpt_path).unwrap();
    let ckpt_ok = write_checkpoint(&params).unwrap() == stored;
    verdict(
        bad_svg.is_empty() && typed && bytes_ok && ckpt_ok,
        format!(
            "{} SVGs parse ({} bad), {} CSVs round-trip {}, checkpoint re-serialization {}",
            svgs.len(),
            bad_svg.len(),
            csvs.len(),
            if typed && bytes_ok { "exactly" } else { "with differences" },
            if ckpt_ok { "bit-exact" } else { "differs" }
        ),
    )
}

fn main() {
    let mut h = Harness { failures: 0 };
    h.check("autodiff soundness", minutes(1), autodiff);
    h.check("metric oracles", minutes(1), metric_oracles);
    h.check("detector oracle equivalence", minutes(1), detector_oracles);
    h.check("bootstrap statistics", minutes(1), statistics);
    h.check("table machinery", Duration::from_secs(1), table_machinery);

    let dir: PathBuf = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-run");
    eprintln!("full experiment in {}", dir.display());
    let exp = catch_unwind(AssertUnwindSafe(|| first_run(&dir)));
    match exp {
        Ok(exp) => {
            h.check("decoder readiness", minutes(1), || decoder_readiness(&exp));
            h.check("depth robustness", minutes(30), || depth_robustness(&exp));
            h.check("directional entropy and exploration", minutes(10), || fig3_direction(&exp));
            h.check("format validity", minutes(1), || format_validity(&dir));
            h.check("end-to-end determinism", minutes(35), || determinism(&exp));
        }
        Err(_) => {
            for name in [
                "decoder readiness",
                "depth robustness",
                "directional entropy and exploration",
                "format validity",
                "end-to-end determinism",
            ] {
                h.check(name, minutes(1), || verdict(false, "experiment did not complete"));
            }
        }
    }
    println!("{} criteria failed", h.failures);
    if h.failures > 0 {
        std::process::exit(1);
    }
}
