mod commands;
mod config;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use jointembed::eval::{BaselineKind, SplitPart};
use jointembed::optim::TrainMode;

use commands::{EvalArgs, IngestPaths, Query, Target};
use config::Settings;
use workspace::RunDir;

#[derive(Parser)]
#[command(name = "jointembed", version, about = "Joint user/text/image embeddings")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run directory holding inputs and outputs of every stage.
    #[arg(long, global = true, default_value = "run")]
    dir: PathBuf,
    /// Flat key=value settings file; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    lambda1: Option<f64>,
    #[arg(long, global = true)]
    lambda2: Option<f64>,
    #[arg(long, global = true)]
    lambda3: Option<f64>,
    #[arg(long, global = true)]
    margin: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    mode: Option<TrainMode>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
}

impl Common {
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        s.set_opt("seed", self.seed)?;
        s.set_opt("lambda1", self.lambda1)?;
        s.set_opt("lambda2", self.lambda2)?;
        s.set_opt("lambda3", self.lambda3)?;
        s.set_opt("margin", self.margin)?;
        s.set_opt("batch_size", self.batch_size)?;
        s.set_opt("lr", self.lr)?;
        s.set_opt("epochs", self.epochs)?;
        s.set_opt("mode", self.mode.map(TrainMode::name))?;
        s.set_opt("k", self.k)?;
        s.set_opt("threshold", self.threshold)?;
        // surface bad λ triples before any work is done
        s.weights()?;
        Ok(s)
    }
}

#[derive(Args)]
struct Eval {
    /// Checkpoint to evaluate; defaults to the best checkpoint of the run.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluate a baseline instead of a checkpoint.
    #[arg(long)]
    baseline: Option<BaselineKind>,
    #[arg(long, default_value = "test")]
    part: SplitPart,
    /// Report path; defaults to a file in the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Eval {
    fn args(&self) -> EvalArgs {
        EvalArgs {
            checkpoint: self.checkpoint.clone(),
            baseline: self.baseline,
            part: self.part,
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Clean raw posts, build the vocabulary and copy features into the run.
    Ingest {
        #[arg(long)]
        posts: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        words: Option<PathBuf>,
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Merge near-duplicate images and drop near-duplicate posts.
    Dedup,
    /// Write train/validation/test post lists.
    Split,
    Train,
    EvalRetrieval(Eval),
    EvalInterests {
        #[command(flatten)]
        eval: Eval,
        /// Interest label table; defaults to the run's labels file.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// k-means over user embeddings with per-cluster word and image summaries.
    Cluster(Eval),
    /// Nearest gallery items to a text, image or user query.
    Retrieve {
        #[arg(long, conflicts_with_all = ["image", "user"])]
        text: Option<String>,
        #[arg(long, conflicts_with = "user")]
        image: Option<String>,
        #[arg(long)]
        user: Option<usize>,
        #[arg(long, value_enum, default_value = "users")]
        target: Target,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with planted topics.
    Synth,
}

fn run(cli: Cli) -> Result<()> {
    let settings = cli.common.settings()?;
    let dir = RunDir::new(&cli.common.dir);
    match cli.command {
        Command::Ingest {
            posts,
            features,
            words,
            stopwords,
        } => commands::ingest(
            &dir,
            &settings,
            &IngestPaths {
                posts,
                features,
                words,
                stopwords,
            },
        ),
        Command::Dedup => commands::dedup(&dir, &settings),
        Command::Split => commands::split(&dir, &settings),
        Command::Train => commands::train_model(&dir, &settings),
        Command::EvalRetrieval(e) => commands::eval_retrieval(&dir, &settings, &e.args()),
        Command::EvalInterests { eval, labels } => commands::eval_interests(&dir, &settings, &eval.args(), &labels),
        Command::Cluster(e) => commands::cluster(&dir, &settings, &e.args()),
        Command::Retrieve {
            text,
            image,
            user,
            target,
            checkpoint,
        } => {
            let query = match (text, image, user) {
                (Some(t), None, None) => Query::Text(t),
                (None, Some(i), None) => Query::Image(i),
                (None, None, Some(u)) => Query::User(u),
                _ => bail!("give exactly one of --text, --image or --user"),
            };
            commands::retrieve(&dir, &settings, &checkpoint, &query, target)
        }
        Command::Synth => commands::synth(&dir, &settings),
    }
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
