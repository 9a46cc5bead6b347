mod artifacts;
mod commands;
mod config;
mod geojson;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use combipart::FusionMode;

use config::{FileConfig, Settings};

/// Error caused by the invocation rather than by the program; exits with 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(
    name = "combipart",
    version,
    about = "Geoclass set generation, score fusion and geolocation evaluation"
)]
struct Cli {
    /// TOML or JSON file with default settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed recorded in every manifest and used by randomized steps.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clustered world (train records and test queries).
    Synth(SynthArgs),
    /// Ingest records into a dataset directory and build the base region graph.
    Build(BuildArgs),
    /// Generate geoclass sets from a dataset.
    GenSets(GenSetsArgs),
    /// Train the nearest-centroid classifier for every set.
    Train(TrainArgs),
    /// Fuse per-set scores and predict query locations.
    Predict(PredictArgs),
    /// Accuracy at distance thresholds.
    Eval(EvalArgs),
    /// Single-set accuracy as a function of the class count.
    Sweep(SweepArgs),
    /// Write GeoJSON for geoclass sets or predictions.
    #[command(subcommand)]
    Export(ExportCommand),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub clusters: usize,
    #[arg(long, default_value_t = 20_000)]
    pub train: usize,
    #[arg(long, default_value_t = 2_000)]
    pub test: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Spread of each cluster along each tangent axis.
    #[arg(long, default_value_t = 2.0)]
    pub sigma_km: f64,
    /// Share of records placed uniformly with uninformative features.
    #[arg(long, default_value_t = 0.2)]
    pub background: f64,
    #[arg(long, default_value_t = 0.6)]
    pub noise: f64,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum InputFormat {
    Jsonl,
    Csv,
}

#[derive(Args)]
pub struct BuildArgs {
    /// Records as JSON Lines ({id, lat, lng, feat}) or CSV (id,lat,lng,f0,f1,...).
    #[arg(long)]
    pub input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    #[arg(long)]
    pub level: Option<u32>,
    /// Fail on the first bad record instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GenSetsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Parameters file (JSON, or TOML by extension) with one section per set.
    /// Without it, five reference recipes are used.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Mean class count of the reference recipes.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub sets: PathBuf,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub sets: PathBuf,
    /// Output of `train`.
    #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
    pub models: Option<PathBuf>,
    /// External score file: JSON Lines {query_id, set_id, scores}.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Queries as JSON Lines {id, feat?, lat?, lng?}. Optional with --scores.
    #[arg(long, required_unless_present = "scores")]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<FusionMode>,
    /// Fine partition index cache; defaults to index.json in the sets directory.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Output directory of `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Queries with lat/lng ground truth.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,
    /// Row label in the CSV table.
    #[arg(long, default_value = "model")]
    pub label: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Test queries with features and ground truth.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub counts: Vec<usize>,
    /// Parameters file; its first section supplies the weights and subspace.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,
    /// Evaluate class counts concurrently.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
pub enum ExportCommand {
    /// One MultiPolygon feature per class.
    Sets {
        #[arg(long)]
        sets: PathBuf,
        /// Only this set; all sets when omitted.
        #[arg(long)]
        set: Option<String>,
        /// Add per-class training image counts from this dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One point per prediction, linked to the true location when known.
    Predictions {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<combipart::Error>() {
            return match e {
                combipart::Error::Io(io) if io.kind() != std::io::ErrorKind::NotFound => 1,
                _ => 2,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return if io.kind() == std::io::ErrorKind::NotFound {
                2
            } else {
                1
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let settings = Settings {
        file,
        seed_flag: cli.seed,
    };
    match cli.command {
        Command::Synth(a) => commands::synth(&settings, a),
        Command::Build(a) => commands::build(&settings, a),
        Command::GenSets(a) => commands::gen_sets(&settings, a),
        Command::Train(a) => commands::train(&settings, a),
        Command::Predict(a) => commands::predict(&settings, a),
        Command::Eval(a) => commands::eval(&settings, a),
        Command::Sweep(a) => commands::sweep(&settings, a),
        Command::Export(c) => commands::export(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
