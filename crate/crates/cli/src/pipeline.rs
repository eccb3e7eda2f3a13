//! The experiment stages and the files each one reads and writes.

use std::path::Path;

use latent_trace::metrics::{
    aggregate_stats, analyze_instance, item_trajectory, parse_trajectories_jsonl, trajectories_jsonl,
    BeliefTrajectory, InstanceAnalysis, SimilarityMode, Summary,
};
use latent_trace::model::{load_checkpoint, run_deliberation, save_checkpoint, LoopedModelParams};
use latent_trace::seed::derive_seed;
use latent_trace::task::{benchmark_jsonl, build_world, generate_benchmark, parse_benchmark_jsonl, Benchmark, SyntheticWorld, Variant};
use latent_trace::train::{train_model, EpochRecord, TrainLog};
use rayon::prelude::*;

use crate::manifest::{Manifest, MANIFEST_FILE};
use crate::report::{curve_rows, export_summary, to_csv};
use crate::svg::{emit_entropy_plot, emit_trajectory_plot, EntropyCurve, TrajectoryPlot};
use crate::{AtStage, ExperimentConfig, PipelineError};

pub const CONFIG_FILE: &str = "config.toml";
pub const BENCHMARK: &str = "benchmark.jsonl";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const TRAJECTORIES: &str = "trajectories.jsonl";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const RANKS_CSV: &str = "backtrack_ranks.csv";
pub const CURVES_CSV: &str = "entropy_curves.csv";
pub const ENTROPY_SVG: &str = "entropy.svg";

/// Per-variant trajectory figure for the first stem.
pub fn trajectory_svg(v: Variant) -> String {
    format!("trajectory_{}.svg", v.as_str())
}

/// Every file a complete run leaves behind, manifest excluded.
pub fn output_files() -> Vec<String> {
    let mut files: Vec<String> = [
        CONFIG_FILE,
        BENCHMARK,
        CHECKPOINT,
        TRAIN_LOG,
        TRAJECTORIES,
        SUMMARY_JSON,
        SUMMARY_CSV,
        RANKS_CSV,
        CURVES_CSV,
        ENTROPY_SVG,
    ]
    .map(String::from)
    .to_vec();
    files.extend(Variant::ALL.map(trajectory_svg));
    files
}

/// Results of a full run.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summary: Summary,
    pub train_log: TrainLog,
    pub manifest: Manifest,
}

fn write(stage: &'static str, dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| PipelineError::io(stage, &path, e))
}

fn read(stage: &'static str, dir: &Path, name: &str) -> Result<String, PipelineError> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|e| PipelineError::io(stage, &path, e))
}

/// Creates the output directory, proves it is writable, drops any stale
/// manifest, and records the resolved config.
pub fn prepare(config: &ExperimentConfig) -> Result<(), PipelineError> {
    config.validate()?;
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io("setup", dir, e))?;
    write("setup", dir, ".write-probe", b"")?;
    let probe = dir.join(".write-probe");
    std::fs::remove_file(&probe).map_err(|e| PipelineError::io("setup", &probe, e))?;
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        std::fs::remove_file(&manifest).map_err(|e| PipelineError::io("setup", &manifest, e))?;
    }
    write("setup", dir, CONFIG_FILE, config.to_toml()?)
}

pub fn world(config: &ExperimentConfig) -> Result<SyntheticWorld, PipelineError> {
    build_world(config.world_seed(), &config.world).at("gen-bench")
}

pub fn gen_bench(config: &ExperimentConfig, world: &SyntheticWorld) -> Result<Benchmark, PipelineError> {
    let bench = generate_benchmark(world, &config.benchmark, config.benchmark_seed()).at("gen-bench")?;
    write("gen-bench", &config.out_dir, BENCHMARK, benchmark_jsonl(&bench).at("gen-bench")?)?;
    Ok(bench)
}

pub fn load_benchmark(dir: &Path) -> Result<Benchmark, PipelineError> {
    parse_benchmark_jsonl(&read("load", dir, BENCHMARK)?).at("load")
}

pub fn train(
    config: &ExperimentConfig,
    world: &SyntheticWorld,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(LoopedModelParams<f32>, TrainLog), PipelineError> {
    let (params, log) = train_model(&config.model, world, &config.train_config(), on_epoch).at("train")?;
    let path = config.out_dir.join(CHECKPOINT);
    save_checkpoint(&params, &path).at("train")?;
    write("train", &config.out_dir, TRAIN_LOG, log.to_csv().at("train")?)?;
    Ok((params, log))
}

pub fn load_params(dir: &Path) -> Result<LoopedModelParams<f32>, PipelineError> {
    load_checkpoint(&dir.join(CHECKPOINT)).at("load")
}

fn with_pool<R: Send>(threads: usize, job: impl FnOnce() -> R + Send) -> Result<R, PipelineError> {
    if threads == 0 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().at("trace")?;
    Ok(pool.install(job))
}

/// Decodes every (item, order) pair in parallel. Results come back in
/// (stem, variant, order) order whatever the scheduling.
pub fn trace(
    config: &ExperimentConfig,
    params: &LoopedModelParams<f32>,
    bench: &Benchmark,
) -> Result<Vec<BeliefTrajectory>, PipelineError> {
    let items = bench.permuted();
    let k = config.steps;
    let trajs = with_pool(config.threads, || {
        items
            .par_iter()
            .map(|it| {
                let dists: Vec<Vec<f64>> = run_deliberation(params, &it.prompt(), k)?
                    .iter()
                    .map(|d| d.to_f64())
                    .collect();
                item_trajectory(&dists, it)
            })
            .collect::<Result<Vec<_>, _>>()
    })?
    .at("trace")?;
    write("trace", &config.out_dir, TRAJECTORIES, trajectories_jsonl(&trajs).at("trace")?)?;
    Ok(trajs)
}

pub fn load_trajectories(dir: &Path) -> Result<Vec<BeliefTrajectory>, PipelineError> {
    parse_trajectories_jsonl(&read("load", dir, TRAJECTORIES)?).at("load")
}

/// Per-instance metrics, pairing each trajectory with its benchmark item.
pub fn instances(
    config: &ExperimentConfig,
    bench: &Benchmark,
    trajs: &[BeliefTrajectory],
    params: Option<&LoopedModelParams<f32>>,
) -> Result<Vec<InstanceAnalysis>, PipelineError> {
    if config.metrics.similarity == SimilarityMode::Embedding && params.is_none() {
        return Err(PipelineError::stage("analyze", "embedding similarity needs the checkpoint"));
    }
    trajs
        .iter()
        .map(|t| {
            let item = bench
                .item(t.id.stem_id, t.id.variant)
                .ok_or_else(|| PipelineError::stage("analyze", format!("no benchmark item for {:?}", t.id)))?;
            analyze_instance(t, item, &config.metrics, params).at("analyze")
        })
        .collect()
}

pub fn analyze(
    config: &ExperimentConfig,
    bench: &Benchmark,
    trajs: &[BeliefTrajectory],
    params: Option<&LoopedModelParams<f32>>,
) -> Result<Summary, PipelineError> {
    let inst = instances(config, bench, trajs, params)?;
    let summary = aggregate_stats(&inst, &config.metrics, config.metrics_seed()).at("analyze")?;
    let dir = &config.out_dir;
    write("analyze", dir, SUMMARY_JSON, serde_json::to_string_pretty(&summary).at("analyze")? + "\n")?;
    export_summary(&summary, dir)?;
    write("analyze", dir, CURVES_CSV, to_csv(&curve_rows(&summary))?)?;
    Ok(summary)
}

pub fn load_summary(dir: &Path) -> Result<Summary, PipelineError> {
    serde_json::from_str(&read("load", dir, SUMMARY_JSON)?).at("load")
}

/// The entropy figure and one trajectory figure per variant of stem 0.
pub fn plot(
    config: &ExperimentConfig,
    bench: &Benchmark,
    trajs: &[BeliefTrajectory],
    summary: &Summary,
) -> Result<(), PipelineError> {
    let curves: Vec<EntropyCurve> = summary
        .variants
        .iter()
        .filter(|s| !s.entropy_curve.is_empty())
        .map(|s| EntropyCurve {
            label: s.variant.as_str().to_string(),
            points: s.entropy_curve.clone(),
        })
        .collect();
    let dir = &config.out_dir;
    write("plot", dir, ENTROPY_SVG, emit_entropy_plot("Mean entropy across recurrence steps", &curves)?)?;
    for v in Variant::ALL {
        let item = bench
            .item(0, v)
            .ok_or_else(|| PipelineError::stage("plot", "benchmark has no stem 0"))?;
        let mine: Vec<&BeliefTrajectory> = trajs.iter().filter(|t| t.id.stem_id == 0 && t.id.variant == v).collect();
        let fig = TrajectoryPlot::from_permutations(
            item,
            &mine,
            config.metrics.curve_resamples,
            config.metrics.level,
            derive_seed(config.seed, &format!("plot-{v}")),
        )?;
        write("plot", dir, &trajectory_svg(v), emit_trajectory_plot(&fig))?;
    }
    Ok(())
}

/// Hashes every output and writes the manifest, then checks it.
pub fn seal(dir: &Path) -> Result<Manifest, PipelineError> {
    let files = output_files();
    let names: Vec<&str> = files.iter().map(String::as_str).collect();
    let manifest = Manifest::build(dir, &names)?;
    manifest.write(dir)?;
    let bad = Manifest::read(dir)?.mismatches(dir);
    if !bad.is_empty() {
        return Err(PipelineError::stage("manifest", format!("hash mismatch: {}", bad.join(", "))));
    }
    Ok(manifest)
}

/// Runs every stage in order. The manifest is written only once all
/// outputs exist, so a directory without one holds a partial run.
pub fn run_experiment(
    config: &ExperimentConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<ExperimentReport, PipelineError> {
    prepare(config)?;
    let world = world(config)?;
    let bench = gen_bench(config, &world)?;
    let (params, train_log) = train(config, &world, on_epoch)?;
    let trajs = trace(config, &params, &bench)?;
    let summary = analyze(config, &bench, &trajs, Some(&params))?;
    plot(config, &bench, &trajs, &summary)?;
    let manifest = seal(&config.out_dir)?;
    Ok(ExperimentReport {
        summary,
        train_log,
        manifest,
    })
}
