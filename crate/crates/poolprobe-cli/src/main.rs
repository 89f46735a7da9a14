//! `poolprobe` — run pooling experiments from a JSON config.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad config or bad input
//! file. All diagnostics go to stderr; stdout carries a short summary of
//! what was run and where the files landed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use poolprobe::config::ExperimentConfig;
use poolprobe::harness;
use poolprobe::Error;

#[derive(Parser)]
#[command(
    name = "poolprobe",
    version,
    about = "Graph-pooling ablation experiments: train, analyze, sweep"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model family across the configured seeds.
    Train(Common),
    /// Measure homogeneity and permutation invariance of a checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by a `train` run with `checkpoint_dir` set.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Grid-run two families and tabulate their per-cell metric gaps.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured results path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the configured seed list, e.g. `--seed-override 7,8,9`.
    #[arg(long, value_delimiter = ',', value_name = "SEEDS")]
    seed_override: Option<Vec<u64>>,
    /// Seed-runs to execute in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        if !self.config.is_file() {
            return Err(Error::config(format!(
                "config file {} does not exist",
                self.config.display()
            )));
        }
        let mut cfg = ExperimentConfig::from_path(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output.path = out.clone();
        }
        if let Some(seeds) = &self.seed_override {
            cfg.seeds = seeds.clone();
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Train(common) => {
            let cfg = common.load()?;
            let runs = harness::run_experiment(&cfg, common.jobs)?;
            for r in &runs {
                println!(
                    "{}: test {} {:.4} (best epoch {})",
                    r.run_id, r.result.metric_name, r.result.test_metric, r.result.best_epoch
                );
            }
            println!("results -> {}", cfg.output.path.display());
            if let Some(dir) = &cfg.output.checkpoint_dir {
                println!("checkpoints -> {}", dir.display());
            }
            Ok(())
        }
        Cmd::Analyze { common, checkpoint } => {
            let cfg = common.load()?;
            let summary = harness::run_analyze(&cfg, &checkpoint)?;
            println!(
                "analyzed {} graphs x {} permutations: gap max {:.3e} mean {:.3e}",
                summary.num_graphs, summary.invariance_perms, summary.max_gap, summary.mean_gap
            );
            println!(
                "reports -> {}, {}",
                harness::derived_path(&cfg.output.path, "_homogeneity", "csv").display(),
                harness::derived_path(&cfg.output.path, "_invariance", "json").display()
            );
            Ok(())
        }
        Cmd::Sweep(common) => {
            let cfg = common.load()?;
            let (runs, gaps) = harness::run_sweep(&cfg, common.jobs)?;
            println!("{} runs across {} cells", runs.len(), gaps.len());
            for g in &gaps {
                println!(
                    "pool={} hidden={} convs={}: {} {:.4} vs {} {:.4} (gap {:+.4})",
                    g.pool_layers,
                    g.hidden_dim,
                    g.initial_convs,
                    g.family_a,
                    g.mean_a,
                    g.family_b,
                    g.mean_b,
                    g.gap
                );
            }
            println!(
                "results -> {}; gaps -> {}",
                cfg.output.path.display(),
                harness::derived_path(&cfg.output.path, "_gaps", "csv").display()
            );
            Ok(())
        }
    }
}
