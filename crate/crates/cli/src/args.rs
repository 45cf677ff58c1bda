use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use vmshield::ResponsePolicy;

#[derive(Debug, Parser)]
#[command(name = "vmshield", version, about = "VM placement, migration and SYN-flood detection for a simulated datacenter")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Output format for data written to stdout [default: json]
    #[arg(long, global = true, value_enum, env = "VMSHIELD_FORMAT")]
    pub format: Option<Format>,

    /// Log level: off, error, warn, info, debug or trace [default: warn]
    #[arg(long, global = true, env = "VMSHIELD_VERBOSITY")]
    pub verbosity: Option<log::LevelFilter>,

    /// More logging; repeat for more. Overrides --verbosity.
    #[arg(short, long, global = true, action = clap::ArgAction::Count, conflicts_with = "quiet")]
    pub verbose: u8,

    /// Errors only.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    /// Seed override for `gen` and `simulate` (default: the input's own seed)
    #[arg(long, global = true, env = "VMSHIELD_SEED")]
    pub seed: Option<u64>,

    /// TOML file with `format`, `verbosity` and `seed` defaults
    #[arg(long, global = true, env = "VMSHIELD_CONFIG")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive criteria weights from a demand profile or a pairwise matrix
    Ahp(AhpArgs),
    /// Choose a host for one VM demand
    Place(PlaceArgs),
    /// Run the CUSUM flood detector over a trace file
    Detect(DetectArgs),
    /// Generate a synthetic packet trace
    Gen(GenArgs),
    /// Run one or more scenarios and write their reports
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct AhpArgs {
    /// JSON file: {"profile": {"cpu":..,"mem":..,"bw":..}} or {"matrix": [[..],[..],[..]]}
    #[arg(long)]
    pub input: PathBuf,
    /// Power iteration tolerance
    #[arg(long, default_value_t = vmshield::ahp::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Reject matrices whose consistency ratio reaches this value
    #[arg(long, default_value_t = vmshield::ahp::DEFAULT_CR_LIMIT)]
    pub cr_limit: f64,
}

#[derive(Debug, Args)]
pub struct PlaceArgs {
    /// Cluster JSON: {"servers": [...], "vms": [...]}
    #[arg(long)]
    pub cluster: PathBuf,
    /// Demand JSON: {"cpu":..,"mem":..,"bw":..}
    #[arg(long)]
    pub demand: PathBuf,
    /// Weights JSON: {"w_cpu":..,"w_mem":..,"w_bw":..} (default: derived from the demand profile)
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Exit with status 1 when no server is feasible
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Raw (timestamp_s,vm_id,pkt_type) or binned (interval_index,vm_id,syn,finrst) CSV; `-` reads stdin
    #[arg(long)]
    pub trace: PathBuf,
    /// Interval length in seconds, used to bin raw traces
    #[arg(long, default_value_t = vmshield::traffic::DEFAULT_INTERVAL_S)]
    pub interval: f64,
    /// Drift allowance a
    #[arg(long, default_value_t = vmshield::detector::DEFAULT_DRIFT)]
    pub drift: f64,
    /// Alarm threshold h
    #[arg(long, default_value_t = vmshield::detector::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Response recorded for each alarm
    #[arg(long, default_value_t = ResponsePolicy::Log)]
    pub policy: ResponsePolicy,
    /// Also write the per-interval statistic log as CSV
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// TrafficSpec JSON, a single object or an array of them
    #[arg(long)]
    pub spec: PathBuf,
    /// Raw trace CSV to write; `-` writes stdout
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON; repeat to run several
    #[arg(long, required = true)]
    pub scenario: Vec<PathBuf>,
    /// Output directory; with several runs each gets a subdirectory
    #[arg(long)]
    pub out: PathBuf,
    /// Runs per scenario, with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicates: u64,
    /// Runs executed in parallel
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
}
