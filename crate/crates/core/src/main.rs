use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use grouptkg::data::{self, Split};
use grouptkg::model::gcn::CompositionOp;
use grouptkg::runtime::{self, Checkpoint, Config};

#[derive(Parser)]
#[command(
    name = "grouptkg",
    about = "Group-aware temporal knowledge graph learning for event-type forecasting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset directory and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split and report MRR / Hits@k.
    Eval(EvalArgs),
    /// Score the event types for one entity pair at a timestep.
    Predict(PredictArgs),
    /// Print dataset statistics.
    Stats(StatsArgs),
    /// Generate a synthetic periodic dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data_dir: String,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    groups: usize,
    #[arg(long, default_value_t = 7)]
    window: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 100)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.05)]
    lr_mapper: f64,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 30)]
    max_epochs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Disable the entity-group pathway (single-graph ablation).
    #[arg(long)]
    no_group_pathway: bool,
    #[arg(long, default_value_t = 50)]
    decoder_channels: usize,
    /// Composition of neighbor and event-type vectors: sub or mul.
    #[arg(long, default_value = "sub")]
    composition: CompositionOp,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data_dir: String,
    /// valid or test.
    #[arg(long, default_value = "test")]
    split: Split,
    /// Remove a sample's other true labels before ranking.
    #[arg(long)]
    filtered: bool,
    /// Also write the report as key-value lines.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data_dir: String,
    /// Subject entity id.
    #[arg(long)]
    s: usize,
    /// Object entity id.
    #[arg(long)]
    o: usize,
    /// Target timestep.
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 5)]
    topk: usize,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    data_dir: String,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    entities: usize,
    #[arg(long)]
    types: usize,
    #[arg(long)]
    period: usize,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let dir = data::expect_dataset_dir(&args.data_dir)?;
    let dataset = data::load_dataset(&dir).context("loading dataset")?;
    let config = Config {
        n_groups: args.groups,
        window: args.window,
        n_layers: args.layers,
        dim: args.dim,
        gru_hidden: args.dim,
        batch_size: args.batch,
        lr_default: args.lr,
        lr_mapper: args.lr_mapper,
        patience: args.patience,
        max_epochs: args.max_epochs,
        seed: args.seed,
        group_pathway: !args.no_group_pathway,
        decoder_channels: args.decoder_channels,
        composition: args.composition,
        ..Config::default()
    };
    config.validate()?;
    eprintln!(
        "training on {} ({} train / {} valid events, {} entities, {} event types)",
        dir.display(),
        dataset.train.len(),
        dataset.valid.len(),
        dataset.vocab.n_entities,
        dataset.vocab.n_event_types
    );
    let outcome = runtime::train_with_progress(&config, &dataset, |epoch, train, valid| {
        eprintln!("epoch {epoch:>3}  train loss {train:.6}  valid loss {valid:.6}");
    })?;
    if outcome.stopped_early {
        eprintln!(
            "early stop: best epoch {} (valid loss {:.6})",
            outcome.checkpoint.epoch, outcome.checkpoint.best_val_loss
        );
    }
    outcome.checkpoint.save(&args.out)?;
    eprintln!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let dir = data::expect_dataset_dir(&args.data_dir)?;
    let dataset = data::load_dataset(&dir).context("loading dataset")?;
    let ckpt = Checkpoint::load(&args.ckpt).context("loading checkpoint")?;
    let filtered = args.filtered || ckpt.config.filtered_eval;
    let report = runtime::evaluate(&ckpt.params, &ckpt.config, &dataset, args.split, filtered)?;
    println!("{report}");
    if let Some(path) = args.report {
        std::fs::write(&path, report.to_kv())?;
        eprintln!("report written to {}", path.display());
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> anyhow::Result<()> {
    let dir = data::expect_dataset_dir(&args.data_dir)?;
    let dataset = data::load_dataset(&dir).context("loading dataset")?;
    let ckpt = Checkpoint::load(&args.ckpt).context("loading checkpoint")?;
    if args.s >= dataset.vocab.n_entities || args.o >= dataset.vocab.n_entities {
        bail!(
            "entity ids {} / {} out of range ({} entities)",
            args.s,
            args.o,
            dataset.vocab.n_entities
        );
    }
    let probs = runtime::forward_predict(
        &ckpt.params,
        &ckpt.config,
        &dataset,
        args.t,
        &[(args.s, args.o)],
    )?;
    let mut scored: Vec<(usize, f64)> = probs[0].iter().copied().enumerate().collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite probabilities"));
    println!(
        "top {} event types for ({}, ?, {}) at t={}",
        args.topk.min(scored.len()),
        dataset.vocab.entity_name(args.s),
        dataset.vocab.entity_name(args.o),
        args.t
    );
    for (rank, (r, p)) in scored.iter().take(args.topk).enumerate() {
        println!(
            "{:>2}. {}  p={:.4}",
            rank + 1,
            dataset.vocab.event_type_name(*r),
            p
        );
    }
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> anyhow::Result<()> {
    let dir = data::expect_dataset_dir(&args.data_dir)?;
    let stats = data::dataset_stats(&dir)?;
    println!("{stats}");
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let dataset = data::synth_periodic_tkg(
        args.entities,
        args.types,
        args.period,
        args.steps,
        args.seed,
    )?;
    dataset.write_dir(&args.out)?;
    eprintln!(
        "synthetic dataset written to {} ({} train / {} valid / {} test events)",
        args.out.display(),
        dataset.train.len(),
        dataset.valid.len(),
        dataset.test.len()
    );
    Ok(())
}
