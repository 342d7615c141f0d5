//! `fmeval` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fmeval_core::pipeline::{self, PipelineConfig};
use fmeval_core::Space;

#[derive(Parser, Debug)]
#[command(name = "fmeval", version, about = "Feature-map maturity evaluation against ground-truth text embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Write a synthetic GT file, phase feature dataset and metric CSV.
    GenSynth,
    /// Embed GT text with the builtin hash embedder into the interchange file.
    Embed,
    /// Run two-stage autoencoder training and write the checkpoint.
    Train,
    /// Encode every phase and write per-sample scores and the phase series.
    Score,
    /// Correlate the phase series with the metric series.
    Correlate,
    /// gen-synth (when enabled), embed, train, score and correlate.
    RunAll,
}

/// Every flag overrides the matching key of the config file.
#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// JSON pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for generation and training; required by gen-synth, train and run-all.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// GT file (defaults to <out>/gt.json).
    #[arg(long, global = true)]
    gt: Option<PathBuf>,
    /// Feature dataset directory (defaults to <out>/features).
    #[arg(long, global = true)]
    features: Option<PathBuf>,
    /// Embedding interchange file, or "builtin" to embed in memory.
    #[arg(long, global = true)]
    embeddings: Option<String>,
    /// Metric CSV (defaults to <out>/metrics.csv).
    #[arg(long, global = true)]
    metrics: Option<PathBuf>,
    #[arg(long, global = true)]
    module_tag: Option<String>,
    /// Representation space: 2d (per camera) or 3d (BEV).
    #[arg(long, global = true)]
    space: Option<Space>,
    /// Extra feature dataset pooled into training; repeatable.
    #[arg(long = "pool-features", global = true)]
    pool_features: Vec<PathBuf>,
    /// Skip synthetic generation in run-all and use existing inputs.
    #[arg(long, global = true)]
    no_synthetic: bool,
}

impl CommonArgs {
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path).with_context(|| format!("loading config {}", path.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = Some(v);
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &self.gt {
            cfg.gt = Some(v.clone());
        }
        if let Some(v) = &self.features {
            cfg.features = Some(v.clone());
        }
        if let Some(v) = &self.embeddings {
            cfg.embeddings = Some(v.clone());
        }
        if let Some(v) = &self.metrics {
            cfg.metrics = Some(v.clone());
        }
        if let Some(v) = &self.module_tag {
            cfg.module_tag = v.clone();
        }
        if let Some(v) = self.space {
            cfg.space = v;
        }
        if !self.pool_features.is_empty() {
            cfg.pool_features = self.pool_features.clone();
        }
        if self.no_synthetic {
            cfg.synthetic = false;
        }
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = cli.common.resolve()?;
    match cli.command {
        Command::GenSynth => {
            pipeline::cmd_gen_synth(&cfg)?;
            println!("wrote synthetic inputs to {}", cfg.out.display());
        }
        Command::Embed => {
            pipeline::cmd_embed(&cfg)?;
            println!("wrote embeddings for {}", cfg.gt_path().display());
        }
        Command::Train => {
            let (config, report) = pipeline::cmd_train(&cfg)?;
            if let Some(last) = report.epochs.last() {
                println!("trained {} epochs, final total loss {:.6}", report.epochs.len(), last.total);
            }
            println!("config digest {:016x}", config.digest());
        }
        Command::Score => {
            let out = pipeline::cmd_score(&cfg)?;
            for p in &out.series.phase_scores {
                println!("phase {} mean {:.6} n={}", p.phase, p.mean_score, p.count);
            }
        }
        Command::Correlate | Command::RunAll => {
            let report = if cli.command == Command::RunAll {
                pipeline::cmd_run_all(&cfg)?
            } else {
                pipeline::cmd_correlate(&cfg)?
            };
            for (name, rho) in &report.rho {
                println!("rho[{name}] = {rho:.6}");
            }
            println!("report: {}", cfg.out.join(pipeline::REPORT_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .chain()
                .find_map(|e| e.downcast_ref::<fmeval_core::Error>())
                .map_or("cli", |e| e.kind());
            // one line, so callers can parse it; core errors already embed their source
            let mut msg = String::new();
            for e in err.chain() {
                let part = e.to_string();
                if !msg.ends_with(&part) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&part);
                }
            }
            let msg = msg.replace('\n', " ");
            eprintln!("error[{kind}]: {msg}");
            ExitCode::FAILURE
        }
    }
}
