use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use genrec::corpus::Format;
use genrec::indexer::{IndexMethod, IndexTarget};
use genrec::model::{self, Accounting, Optimizer, Vocabulary};
use genrec::pipeline::{self, Pipeline, RunConfig, SweepAxis};
use genrec::synth::{self, BlockSpec};
use genrec::{Error, Result};

#[derive(Parser)]
#[command(name = "genrec", version, about = "Generative recommendation with collaborative token IDs")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the interaction log, write the split and corpus statistics.
    Ingest(RunArgs),
    /// Dump the user, item and user-item graphs.
    Graphs(RunArgs),
    /// Build user and item ID dictionaries.
    Index(RunArgs),
    /// Train the sequence-to-sequence model.
    Train(RunArgs),
    /// Top-k recommendations for one user or all users.
    Recommend {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        topk: Option<usize>,
    },
    /// HR@K / NDCG@K on the held-out items.
    Evaluate(RunArgs),
    /// ingest, index, train and evaluate in one go.
    Run(RunArgs),
    /// One full run per value of an axis (w, n or e).
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Parameter counts for the configured model.
    Params {
        #[command(flatten)]
        run: RunArgs,
        /// Count the full shape (d=512, 6+6 layers, 8 heads) instead of the configured one.
        #[arg(long)]
        full: bool,
    },
    /// Write a planted-block interaction log.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        #[arg(long, default_value_t = 15)]
        per_user: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, env = "GENREC_WORKDIR")]
    workdir: Option<PathBuf>,
    /// Interaction log (.tsv, or .csv by extension).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<IndexMethod>,
    #[arg(long)]
    target: Option<IndexTarget>,
    /// Clusters per level.
    #[arg(long)]
    n: Option<usize>,
    /// Largest unsplit cluster.
    #[arg(long)]
    m: Option<usize>,
    /// Maximum clustering levels.
    #[arg(long)]
    k: Option<usize>,
    /// Graph embedding size.
    #[arg(long)]
    e: Option<usize>,
    /// Feed-forward width.
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    beam: Option<usize>,
}

fn parse_optimizer(s: &str) -> std::result::Result<Optimizer, String> {
    match s {
        "sgd" => Ok(Optimizer::Sgd),
        "adam" => Ok(Optimizer::Adam),
        _ => Err(format!("unknown optimizer `{s}` (sgd, adam)")),
    }
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.workdir {
            c.paths.workdir = v.clone();
        }
        if let Some(v) = &self.data {
            c.paths.data = v.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.method {
            c.index.method = v;
        }
        if let Some(v) = self.target {
            c.index.target = v;
        }
        if let Some(v) = self.n {
            c.index.clusters = v;
        }
        if let Some(v) = self.m {
            c.index.max_cluster_size = v;
        }
        if let Some(v) = self.k {
            c.index.max_levels = v;
        }
        if let Some(v) = self.e {
            c.index.embedding_size = v;
        }
        if let Some(v) = self.w {
            c.model.w = v;
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.lr {
            c.train.lr = v;
        }
        if let Some(v) = self.optimizer {
            c.train.optimizer = v;
        }
        if let Some(v) = self.beam {
            c.decode.beam = v;
        }
        Ok(c)
    }

    fn pipeline(&self) -> Result<Pipeline> {
        Pipeline::new(&self.config()?)
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Ingest(a) => {
            let s = a.pipeline()?.ingest()?;
            println!(
                "users {}  items {}  interactions {}  sparsity {:.4}%",
                s.num_users,
                s.num_items,
                s.num_interactions,
                s.sparsity * 100.0
            );
        }
        Command::Graphs(a) => {
            for p in a.pipeline()?.graphs()? {
                println!("{}", p.display());
            }
        }
        Command::Index(a) => {
            let pair = a.pipeline()?.index()?;
            for d in [&pair.users, &pair.items] {
                let depth = d.ids.iter().map(Vec::len).max().unwrap_or(0);
                println!(
                    "{:?}: {} ids, max length {depth}{}",
                    d.side,
                    d.len(),
                    if d.depth_limited { ", depth limited" } else { "" }
                );
            }
        }
        Command::Train(a) => {
            let r = a.pipeline()?.train()?;
            for (e, l) in r.losses.iter().enumerate() {
                println!("epoch {} loss {l:.6}", e + 1);
            }
        }
        Command::Recommend { run, user, topk } => {
            let rows = run.pipeline()?.recommend(user.as_deref(), topk)?;
            print!("{}", genrec::decode::recommendations_tsv(&rows));
        }
        Command::Evaluate(a) => {
            let s = a.pipeline()?.evaluate()?;
            print!("{}{}", s.metrics.to_text(), s.efficiency.to_text());
        }
        Command::Run(a) => {
            let s = a.pipeline()?.run_all()?;
            print!("{}{}", s.metrics.to_text(), s.efficiency.to_text());
        }
        Command::Sweep { run, axis, values } => {
            let (table, outcomes) = pipeline::sweep(&run.config()?, axis, &values)?;
            print!("{table}");
            for (v, o) in values.iter().zip(&outcomes) {
                if let Err(e) = o {
                    eprintln!("warning: value {v} failed: {e}");
                }
            }
        }
        Command::Params { run, full } => {
            let mut c = run.config()?;
            if full {
                c.model = model::ModelConfig {
                    w: c.model.w,
                    ..model::ModelConfig::default()
                };
            }
            c.model.validate()?;
            let vocab = Vocabulary::with_words(c.template.split_whitespace());
            println!(
                "actual {}",
                model::param_count(&c.model, vocab.len(), Accounting::Actual)
            );
            println!(
                "t5_compatible {}",
                model::param_count(&c.model, vocab.accounting_size(), Accounting::T5Compatible)
            );
        }
        Command::Synth {
            out,
            users,
            items,
            blocks,
            per_user,
            seed,
        } => {
            let log = synth::planted_blocks(
                BlockSpec {
                    users,
                    items,
                    blocks,
                    per_user,
                },
                seed,
            )?;
            std::fs::write(&out, log.to_text(Format::from_path(&out))).map_err(|e| Error::io(&out, e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
