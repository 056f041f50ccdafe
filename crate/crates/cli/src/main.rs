//! `evolforge` command line: one subcommand per pipeline stage plus `run`
//! for the whole thing. Every stage writes JSONL and a `<out>.manifest.json`
//! sidecar carrying the config fingerprint.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evolforge::dataset::ExportFormat;

#[derive(Debug, Parser)]
#[command(
    name = "evolforge",
    version,
    about = "Taxonomy-guided multilingual instruction data synthesis"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Pipeline config (TOML). Flags below override it.
    #[arg(long, global = true, env = "EVOLFORGE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub rng_seed: Option<u64>,
    /// Maximum in-flight backend requests.
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    /// Chat-completions API root, e.g. https://api.example.com/v1.
    #[arg(long, global = true)]
    pub backend_url: Option<String>,
    /// Use the deterministic mock backend, optionally with a script file.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "", value_name = "SCRIPT")]
    pub mock: Option<String>,
    /// Response cache; rerunning with the same cache only retries failures.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Output path (a directory for `run`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    FlatPairs,
    ChatTurns,
}

impl From<Format> for ExportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::FlatPairs => ExportFormat::FlatPairs,
            Format::ChatTurns => ExportFormat::ChatTurns,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AyaKind {
    AyaDataset,
    AyaCollection,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FilterKind {
    Evols,
    Conversations,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Seed ingestion.
    #[command(subcommand)]
    Seeds(SeedsCommand),
    /// Rewrite seeds under evol conditions and answer them.
    Evolve {
        /// Seed set written by `seeds sample`.
        #[arg(long)]
        seeds: PathBuf,
    },
    /// Grow complete evol records into conversations.
    Converse {
        #[arg(long)]
        evols: PathBuf,
    },
    /// Drop repetitive or out-of-bounds records.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: FilterKind,
    },
    /// Classify every turn and strip flagged ones.
    Moderate {
        #[arg(long)]
        input: PathBuf,
        /// Sentinel classifier rules (JSON). Without it, `--mock` uses a
        /// single `[[unsafe]]` sentinel and otherwise `<backend-url>/moderations`
        /// is called.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Per-stage record counts and average token lengths.
    Stats {
        /// Dataset files or directories of them.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Read foreign rows through a profile: `m2lingual` or a JSON file.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Assemble stage outputs into one dataset file.
    Export {
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        evols: PathBuf,
        #[arg(long)]
        conversations: PathBuf,
    },
    /// Sample, evolve, converse, filter, (moderate) and export in one go.
    Run {
        #[arg(long, required = true, num_args = 1..)]
        seeds: Vec<PathBuf>,
        /// Moderate conversations with these sentinel rules before export.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum SeedsCommand {
    /// Balanced per-language / per-task sample.
    Sample {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
    },
    /// Convert a public Aya JSONL dump to seed records.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: AyaKind,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match cli.command {
        Command::Seeds(SeedsCommand::Sample { input }) => commands::seeds_sample(g, &input),
        Command::Seeds(SeedsCommand::Convert { input, kind }) => commands::seeds_convert(g, &input, kind),
        Command::Evolve { seeds } => commands::evolve(g, &seeds),
        Command::Converse { evols } => commands::converse(g, &evols),
        Command::Filter { input, kind } => commands::filter(g, &input, kind),
        Command::Moderate { input, rules } => commands::moderate(g, &input, rules.as_deref()),
        Command::Stats { input, profile } => commands::stats(g, &input, profile.as_deref()),
        Command::Export {
            seeds,
            evols,
            conversations,
        } => commands::export(g, &seeds, &evols, &conversations),
        Command::Run { seeds, rules } => commands::run(g, &seeds, rules.as_deref()),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
