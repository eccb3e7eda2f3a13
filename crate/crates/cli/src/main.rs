use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use latent_trace::metrics::SimilarityMode;
use latent_trace::Precision;
use latent_trace_cli::pipeline::{self, CONFIG_FILE};
use latent_trace_cli::verify::verify_dir;
use latent_trace_cli::{run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "latent-trace", version, about = "Train a looped transformer and trace its per-step beliefs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the benchmark JSONL
    GenBench(ConfigArgs),
    /// Train the model and write the checkpoint and training log
    Train(ConfigArgs),
    /// Decode every benchmark question at every step
    Trace(ConfigArgs),
    /// Compute summary statistics and CSV tables
    Analyze(ConfigArgs),
    /// Render the SVG figures
    Plot(ConfigArgs),
    /// Run every stage and write the manifest
    RunAll(ConfigArgs),
    /// Check the manifest and recompute the summary from the trajectories
    Verify {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimilarityArg {
    Constructed,
    Embedding,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; defaults to <out>/config.toml when present
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Recurrence steps decoded per question
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    stems: Option<usize>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    two_hop_fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    /// Leading optimizer steps trained at shallow depths
    #[arg(long)]
    shallow_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    min_run: Option<usize>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long, value_enum)]
    similarity: Option<SimilarityArg>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let existing = self.out.clone().unwrap_or_else(|| PathBuf::from("out")).join(CONFIG_FILE);
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None if existing.exists() => ExperimentConfig::load(&existing)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.out {
            c.out_dir = v.clone();
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v; })*
            };
        }
        set!(
            seed => seed,
            steps => steps,
            threads => threads,
            stems => benchmark.n_stems,
            permutations => benchmark.n_permutations,
            two_hop_fraction => benchmark.two_hop_fraction,
            epochs => train.epochs,
            steps_per_epoch => train.steps_per_epoch,
            shallow_steps => train.shallow_steps,
            batch_size => train.batch_size,
            learning_rate => train.learning_rate,
            tol => metrics.tol,
            window => metrics.window,
            min_run => metrics.min_run,
            resamples => metrics.n_resamples,
        );
        if let Some(p) = self.precision {
            c.train.precision = match p {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            };
        }
        if let Some(s) = self.similarity {
            c.metrics.similarity = match s {
                SimilarityArg::Constructed => SimilarityMode::Constructed,
                SimilarityArg::Embedding => SimilarityMode::Embedding,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

fn log_epoch(r: &latent_trace::train::EpochRecord) {
    let acc: Vec<String> = r
        .accuracy
        .iter()
        .map(|a| format!("{}@{}={:.3}", a.variant, a.k, a.accuracy))
        .collect();
    eprintln!("epoch {:>3}  loss {:.4}  {}  ({:.1}s)", r.epoch, r.mean_loss, acc.join(" "), r.wall_secs);
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenBench(a) => {
            let c = a.resolve()?;
            pipeline::prepare(&c)?;
            let bench = pipeline::gen_bench(&c, &pipeline::world(&c)?)?;
            eprintln!("{} stems, {} items", bench.n_stems(), bench.items.len());
        }
        Command::Train(a) => {
            let c = a.resolve()?;
            pipeline::prepare(&c)?;
            pipeline::train(&c, &pipeline::world(&c)?, log_epoch)?;
        }
        Command::Trace(a) => {
            let c = a.resolve()?;
            pipeline::prepare(&c)?;
            let bench = pipeline::load_benchmark(&c.out_dir)?;
            let params = pipeline::load_params(&c.out_dir)?;
            let trajs = pipeline::trace(&c, &params, &bench)?;
            eprintln!("{} trajectories", trajs.len());
        }
        Command::Analyze(a) => {
            let c = a.resolve()?;
            pipeline::prepare(&c)?;
            let bench = pipeline::load_benchmark(&c.out_dir)?;
            let trajs = pipeline::load_trajectories(&c.out_dir)?;
            let params = match c.metrics.similarity {
                SimilarityMode::Embedding => Some(pipeline::load_params(&c.out_dir)?),
                SimilarityMode::Constructed => None,
            };
            pipeline::analyze(&c, &bench, &trajs, params.as_ref())?;
        }
        Command::Plot(a) => {
            let c = a.resolve()?;
            pipeline::prepare(&c)?;
            let bench = pipeline::load_benchmark(&c.out_dir)?;
            let trajs = pipeline::load_trajectories(&c.out_dir)?;
            let summary = pipeline::load_summary(&c.out_dir)?;
            pipeline::plot(&c, &bench, &trajs, &summary)?;
        }
        Command::RunAll(a) => {
            let c = a.resolve()?;
            let report = run_experiment(&c, log_epoch)?;
            eprintln!("wrote {} files to {}", report.manifest.files.len(), c.out_dir.display());
        }
        Command::Verify { out } => {
            let report = verify_dir(&out).with_context(|| format!("verifying {}", out.display()))?;
            for check in &report.checks {
                let tag = if check.passed { "ok  " } else { "FAIL" };
                println!("{tag} {}: {}", check.name, check.detail);
            }
            if !report.passed() {
                bail!("verification failed");
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    run(Cli::parse().command)
}
