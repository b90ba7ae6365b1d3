//! `mvgraph`: session ingestion, multi-view graph embedding training,
//! retrieval evaluation and diversity scoring from one binary.
//!
//! Configuration comes from an optional key-value file plus repeatable
//! `--set key=value` overrides; `--seed` and `--threads` are shorthand
//! for the corresponding keys. Exit codes: 0 success, 1 configuration
//! or I/O error, 2 numerical failure (training divergence).

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use mvgraph_core::config::RawConfig;
use mvgraph_core::pipeline::{
    self, cmd_build_graph, cmd_eval, cmd_ingest, cmd_metric_train, cmd_novelty_eval,
    cmd_similar, cmd_train,
};

#[derive(Parser)]
#[command(
    name = "mvgraph",
    version,
    about = "Multi-view session-graph embeddings for recommendation"
)]
struct Cli {
    /// Key-value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key (repeatable), e.g. --set train.dim=32.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Shorthand for --set seed=N.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Shorthand for --set threads=N.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the interaction log into per-view session files.
    Ingest,
    /// Export graph edge and vocabulary dumps.
    BuildGraph,
    /// Train embeddings and write the checkpoint.
    Train,
    /// Score held-out retrieval and write eval.csv.
    Eval,
    /// Write the exact top-K item-to-item similarity map.
    Similar {
        /// Neighbors per item; defaults to eval.k.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Learn the diversity metric over the frozen checkpoint.
    MetricTrain,
    /// Compare category novelty of base and metric rankings.
    NoveltyEval,
}

fn run(cli: Cli) -> mvgraph_core::Result<()> {
    let mut raw = match &cli.config {
        Some(path) => RawConfig::from_file(path)?,
        None => RawConfig::default(),
    };
    raw.apply_overrides(&cli.set)?;
    if let Some(seed) = cli.seed {
        raw.apply_overrides(&[format!("seed={seed}")])?;
    }
    if let Some(threads) = cli.threads {
        raw.apply_overrides(&[format!("threads={threads}")])?;
    }
    let cfg = raw.build()?;

    match cli.command {
        Command::Ingest => {
            let s = cmd_ingest(&cfg)?;
            println!(
                "ingested {} events from {} users ({} malformed rows skipped)",
                s.events, s.users, s.rows_skipped
            );
            for (view, count) in &s.sessions {
                let dropped = s.missing_attr.get(view).copied().unwrap_or(0);
                if dropped > 0 {
                    println!("  {view}: {count} sessions ({dropped} items lacked an attribute)");
                } else {
                    println!("  {view}: {count} sessions");
                }
            }
            if s.test_users > 0 {
                println!(
                    "  held out {} test items across {} users",
                    s.test_items, s.test_users
                );
            }
        }
        Command::BuildGraph => {
            let s = cmd_build_graph(&cfg)?;
            for (view, (nodes, edges, weight)) in &s.views {
                println!("{view}: {nodes} nodes, {edges} edges, total weight {weight}");
            }
            for (rel, (items, obs)) in &s.links {
                println!("{rel}: {items} linked items, {obs} observations");
            }
        }
        Command::Train => {
            let s = cmd_train(&cfg)?;
            println!(
                "trained {} views, {} relations; {} history records in {}",
                s.views.len(),
                s.relations.len(),
                s.history_records,
                pipeline::history_path(&cfg.out_dir).display()
            );
            if let Some(reason) = s.diverged {
                eprintln!("training diverged: {reason}");
                eprintln!("checkpoint retains the last finite state");
                std::process::exit(2);
            }
        }
        Command::Eval => {
            let r = cmd_eval(&cfg)?;
            println!("{:<12} {:>8}", "metric", "value");
            for (name, value) in [
                ("precision", r.precision),
                ("recall", r.recall),
                ("hit_rate", r.hit_rate),
                ("f1", r.f1),
            ] {
                println!("{name:<12} {value:>8.4}");
            }
            println!(
                "(K={}, {} users evaluated, {} skipped)",
                cfg.eval.k, r.n_users, r.skipped
            );
        }
        Command::Similar { k } => {
            let k = k.unwrap_or(cfg.eval.k);
            let triggers = cmd_similar(&cfg, k)?;
            println!(
                "wrote top-{k} neighbors for {triggers} items to {}",
                pipeline::similar_path(&cfg.out_dir).display()
            );
        }
        Command::MetricTrain => {
            let s = cmd_metric_train(&cfg)?;
            println!(
                "metric trained on {} positive / {} negative pairs over {} batches (final loss {:.6})",
                s.positives, s.negatives, s.batches, s.final_loss
            );
        }
        Command::NoveltyEval => {
            let r = cmd_novelty_eval(&cfg)?;
            println!("novelty@{} over {} users:", r.k, r.users);
            println!("  base   {:.4}", r.base);
            println!("  metric {:.4}", r.metric);
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
