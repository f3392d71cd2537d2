use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mutraj_cli::config::PipelineConfig;
use mutraj_cli::manifest::Run;
use mutraj_cli::pipeline::{self, PredictRequest};
use mutraj_core::date::PartialDate;
use mutraj_core::genome::NtMutation;

#[derive(Parser)]
#[command(name = "mutraj", version, about = "Train and evaluate next-mutation models on phylogenetic trajectories")]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; stage seeds default to it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for all artifacts.
    #[arg(long, global = true, default_value = "mutraj-run")]
    out: PathBuf,
    /// Override one config key, e.g. `--set train.steps=200`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tree with known mutation dynamics.
    Simulate,
    /// Parse and validate the input tree.
    Ingest,
    /// Refine variant definitions from the tree and external calls.
    RefineVariants,
    /// Extract, split, tokenize and weight trajectories.
    BuildDataset,
    /// Plan weighted sampling epochs.
    SamplePlan,
    /// Train the model.
    Train {
        /// Continue from the existing checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Rank next mutations for one trajectory.
    Predict {
        /// Comma-separated mutations such as `A23403G,C3037T`.
        #[arg(long, default_value = "")]
        mutations: String,
        #[arg(long)]
        country: Option<String>,
        #[arg(long)]
        region: Option<String>,
        /// Collection date: YYYY, YYYY-MM or YYYY-MM-DD.
        #[arg(long)]
        date: Option<String>,
        /// Replace location tokens with the unknown token.
        #[arg(long)]
        no_location: bool,
    },
    /// Rank mutations with the frequency baseline.
    BaselineRank,
    /// Report recall@k on the evaluation split.
    Evaluate,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    for s in &cli.sets {
        let (k, v) = s.split_once('=').with_context(|| format!("--set {s:?}: expected KEY=VALUE"))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let run = Run::new(&cli.out, load_config(&cli)?);
    match cli.command {
        Command::Simulate => println!("{}", pipeline::simulate(&run)?),
        Command::Ingest => println!("{}", pipeline::ingest(&run)?),
        Command::RefineVariants => println!("{}", pipeline::refine_variants(&run)?),
        Command::BuildDataset => {
            let s = pipeline::build_dataset(&run)?;
            println!(
                "dataset: {} train, {} eval ({} too long, {} partial date, {} without target); layout {}",
                s.train, s.eval, s.dropped_too_long, s.excluded_partial_date, s.excluded_no_target, s.layout_hash
            );
        }
        Command::SamplePlan => println!("{}", pipeline::sample_plan(&run)?),
        Command::Train { resume } => {
            let s = pipeline::train_model(&run, resume)?;
            if let Some(from) = s.resumed_from {
                println!("resumed at step {from}");
            }
            println!("trained to step {}, loss {:.4}", s.steps, s.final_loss);
        }
        Command::Predict { mutations, country, region, date, no_location } => {
            let req = PredictRequest {
                mutations: mutations
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<NtMutation>().with_context(|| format!("bad mutation {s:?}")))
                    .collect::<Result<_>>()?,
                country,
                region,
                date: date.map(|d| d.parse::<PartialDate>().with_context(|| format!("bad date {d:?}"))).transpose()?,
                hide_location: no_location,
            };
            for (i, p) in pipeline::predict(&run, &req)?.iter().enumerate() {
                println!("{:>3}  {:<10} {:.6}", i + 1, p.mutation, p.prob);
            }
        }
        Command::BaselineRank => {
            for (i, (m, s)) in pipeline::baseline_rank(&run)?.iter().enumerate() {
                println!("{:>3}  {:<12} {s:.6}", i + 1, m.to_string());
            }
        }
        Command::Evaluate => {
            let outcome = pipeline::evaluate(&run)?;
            println!("task,k,slice,macro_recall,weighted_recall,n_sequences");
            for r in outcome.overall() {
                println!("{},{},{},{:.6},{:.6},{}", r.task, r.k, r.slice, r.macro_recall, r.weighted_recall, r.n_sequences);
            }
            println!(
                "report: {}",
                run.path(&format!("eval/report_{}.csv", pipeline::report_stem(&run))).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
